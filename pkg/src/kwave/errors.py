"""Exception hierarchy shared by all kwave modules."""


class KwaveError(Exception):
    """Base class for every error raised by the toolkit."""


class ExprError(KwaveError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownFunctionError(ExprError):
    def __init__(self, name, offset=None):
        super().__init__(f"unknown function '{name}'")
        self.name = name
        self.offset = offset


class UnboundVariableError(ExprError):
    def __init__(self, name):
        super().__init__(f"unbound variable '{name}'")
        self.name = name


class DomainError(KwaveError):
    """A value left the domain where the quantity is defined (NaN, Inf, 1/0, rho <= 0, ...)."""


class ModelError(KwaveError):
    pass


class HyperbolicityError(KwaveError):
    def __init__(self, message, complex_pairs=()):
        super().__init__(message)
        self.complex_pairs = list(complex_pairs)


class SingularLambdaError(KwaveError):
    pass


class DegeneratePairError(KwaveError):
    pass


class SpanConditionError(KwaveError):
    pass


class NormalizationError(KwaveError):
    pass


class PathIndependenceError(KwaveError):
    def __init__(self, message, worst_node=None, residual=None):
        super().__init__(message)
        self.worst_node = worst_node
        self.residual = residual


class ConvergenceError(KwaveError):
    pass


class CatastropheError(KwaveError):
    """The matrix phi became singular: gradient catastrophe."""

    def __init__(self, message, det=None):
        super().__init__(message)
        self.det = det


class CFLError(KwaveError):
    pass


class InitialDataError(KwaveError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConfigError(KwaveError):
    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class AmplitudeError(DomainError):
    """A construction's amplitude bound (e.g. sup |grad Psi| < 1) is violated."""
