"""Construction, evaluation and verification of Riemann k-wave solutions of quasilinear systems."""

__version__ = "0.1.0"

from .errors import KwaveError  # noqa: E402,F401
