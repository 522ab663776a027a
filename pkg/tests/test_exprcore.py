import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kwave import exprcore
from kwave.errors import DomainError, ExprSyntaxError, UnboundVariableError, UnknownFunctionError


class TestParse:
    def test_linear_combination(self):
        assert exprcore.parse("u1 + 2*u2").eval({"u1": 1.0, "u2": 3.0}) == 7.0

    def test_identity_values(self):
        assert exprcore.parse("sin(0) + cos(0)").eval() == 1.0

    def test_syntax_error_offset(self):
        with pytest.raises(ExprSyntaxError) as info:
            exprcore.parse("u1 + * 2")
        assert info.value.offset == 5

    def test_unknown_function(self):
        with pytest.raises(UnknownFunctionError):
            exprcore.parse("erf(u1)")

    @pytest.mark.parametrize("src", ["", "   ", "(u1", "u1)", "2 +", "3 4"])
    def test_malformed(self, src):
        with pytest.raises(ExprSyntaxError):
            exprcore.parse(src)

    def test_power_right_associative(self):
        assert exprcore.parse("2^3^2").eval() == 2.0 ** 9

    def test_power_binds_tighter_than_unary_minus(self):
        assert exprcore.parse("-2^2").eval() == -4.0
        assert exprcore.parse("2^-1").eval() == 0.5

    def test_left_associative_subtraction_and_division(self):
        assert exprcore.parse("8 - 3 - 2").eval() == 3.0
        assert exprcore.parse("8 / 4 / 2").eval() == 1.0

    def test_free_vars(self):
        e = exprcore.parse("u1*sin(u2) + pi - exp(w)")
        assert e.free_vars == {"u1", "u2", "w"}


class TestEval:
    def test_rational(self):
        assert exprcore.eval("u1^2/(1+u1)", {"u1": 1.0}) == 0.5

    def test_sqrt(self):
        assert exprcore.eval("sqrt(u1)", {"u1": 4.0}) == 2.0

    def test_sqrt_negative_is_domain_error(self):
        with pytest.raises(DomainError):
            exprcore.eval("sqrt(u1)", {"u1": -1.0})

    def test_nan_propagates_without_check(self):
        assert np.isnan(exprcore.eval("sqrt(u1)", {"u1": -1.0}, check=False))

    def test_division_by_zero(self):
        with pytest.raises(DomainError):
            exprcore.eval("1/u1", {"u1": 0.0})

    def test_unbound_variable_named(self):
        with pytest.raises(UnboundVariableError) as info:
            exprcore.eval("u1 + u7", {"u1": 1.0})
        assert info.value.name == "u7"

    def test_array_evaluation(self):
        x = np.linspace(0, 1, 5)
        np.testing.assert_array_equal(exprcore.eval("x*x + 1", {"x": x}), x * x + 1)

    def test_compile_vector(self):
        fn = exprcore.compile_vector(["u1*u2", "1"], ["u1", "u2"])
        out = fn(np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out, [[3.0, 8.0], [1.0, 1.0]])

    def test_deterministic(self):
        e = exprcore.parse("tanh(u1)*exp(-u2^2)/3 + abs(u1 - u2)")
        env = {"u1": 0.3712, "u2": -1.25}
        assert e.eval(env) == e.eval(env)


_leaf = st.one_of(st.sampled_from(["a", "b", "c", "pi"]),
                  st.floats(0.1, 9.0, allow_nan=False).map(lambda v: repr(round(v, 3))))


def _combine(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*", "^"]), children).map(
        lambda t: f"({t[0]} {t[1]} {t[2]})" if t[1] != "^" else f"({t[0]})^2")
    unary = children.map(lambda s: f"-{s}")
    call = st.tuples(st.sampled_from(["sin", "cos", "tanh", "abs"]), children).map(lambda t: f"{t[0]}({t[1]})")
    return st.one_of(binop, unary, call)


expressions = st.recursive(_leaf, _combine, max_leaves=8)
values = st.floats(-3.0, 3.0, allow_nan=False)


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(expressions, values, values, values)
    def test_pretty_round_trip(self, src, a, b, c):
        e = exprcore.parse(src)
        again = exprcore.parse(e.pretty())
        env = {"a": a, "b": b, "c": c}
        x = e.eval(env, check=False)
        y = again.eval(env, check=False)
        assert (np.isnan(x) and np.isnan(y)) or x == y

    @settings(max_examples=100, deadline=None)
    @given(values, values, values)
    def test_precedence(self, a, b, c):
        env = {"a": a, "b": b, "c": c}
        assert exprcore.eval("a+b*c", env) == exprcore.eval("a+(b*c)", env)
        assert exprcore.eval("a-b^2", env, check=False) == exprcore.eval("a-(b^2)", env, check=False)
