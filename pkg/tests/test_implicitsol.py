import numpy as np
import pytest
from scipy.optimize import brentq

from kwave.errors import CatastropheError
from kwave.implicitsol import (
    ImplicitSolution,
    derivative_matrix,
    locate_catastrophe,
    numeric_derivative,
    pde_residual,
    phi_matrix,
    sampler,
    solve_pfaffian_point,
    solve_point,
    write_field_csv,
)
from kwave.model import registry_get
from kwave.showcase import shipped_solutions

LAM_B = [lambda u: np.array([-u[0], 1.0])]


def burgers(f, df):
    return ImplicitSolution(lambda r: np.array([f(r[0])]), LAM_B, 2, 1,
                            df=lambda r: np.array([[df(r[0])]]), gammas=[lambda u: np.array([1.0])])


class TestSolvePoint:
    def test_constant_solution(self):
        sol = ImplicitSolution(lambda r: np.array([0.7, -1.2]), LAM_B[:0] + [lambda u: np.array([1.0, u[0], 0.0])],
                               3, 2, df=lambda r: np.zeros((2, 1)))
        for x in ([0.0, 0.0, 0.0], [1.0, -2.0, 3.0]):
            ps = solve_point(sol, x)
            np.testing.assert_array_equal(ps.u, [0.7, -1.2])
            np.testing.assert_array_equal(ps.phi.matrix, np.eye(1))

    def test_burgers_linear(self):
        sol = burgers(lambda r: r, lambda r: 1.0)
        for t, x in [(0.0, 0.3), (0.5, -0.8), (2.0, 1.5)]:
            assert abs(solve_point(sol, [t, x]).u[0] - x / (1 + t)) <= 1e-13

    def test_phi_identity_at_origin(self):
        for ex in shipped_solutions(n_points=1):
            u0 = ex.solution._f(np.zeros(ex.solution.k))
            ph = phi_matrix(ex.solution, np.zeros(ex.solution.p), u0)
            assert np.max(np.abs(ph.matrix - np.eye(ex.solution.k))) <= 1e-12, ex.name

    def test_catastrophe_raised(self):
        sol = burgers(lambda r: -r, lambda r: -1.0)
        with pytest.raises(CatastropheError):
            solve_point(sol, [1.0, 0.3])

    def test_phi_equals_one_minus_t(self):
        sol = burgers(lambda r: -r, lambda r: -1.0)
        for t in (0.0, 0.25, 0.5, 0.9):
            ps = solve_point(sol, [t, 0.4])
            assert abs(ps.phi.det - (1 - t)) <= 1e-12
            assert abs(ps.u[0] + 0.4 / (1 - t)) <= 1e-12


class TestPfaffian:
    def test_burgers_form(self):
        sol = ImplicitSolution(lambda r: np.array([r[0]]), LAM_B, 2, 1,
                               covectors_r=[lambda r: np.array([-r[0], 1.0])])
        r, u, _ = solve_pfaffian_point(sol, [0.5, 0.9])
        assert abs(r[0] - 0.6) <= 1e-13 and abs(u[0] - 0.6) <= 1e-13

    def test_constant_covectors(self):
        sol = ImplicitSolution(lambda r: r.copy(), [lambda u: np.array([1.0, 0.0]), lambda u: np.array([0.0, 1.0])],
                               2, 2, covectors_r=[lambda r: np.array([1.0, 0.0]), lambda r: np.array([0.0, 1.0])])
        r, _, _ = solve_pfaffian_point(sol, [0.3, -0.4])
        np.testing.assert_allclose(r, [0.3, -0.4], atol=1e-15)

    def test_k2_against_nested_bisection(self):
        ex = next(e for e in shipped_solutions(n_points=5) if e.name == "swap-pfaffian")
        for x in ex.points:
            r, _, _ = solve_pfaffian_point(ex.solution, x)

            def inner(r1):
                return brentq(lambda r2: x[0] + r1 * x[2] - r2, -10, 10, xtol=1e-15)

            r1 = brentq(lambda r1: x[0] + inner(r1) * x[1] - r1, -10, 10, xtol=1e-15)
            np.testing.assert_allclose(r, [r1, inner(r1)], atol=1e-12)

    def test_phase_functions(self):
        sol = ImplicitSolution(lambda r: np.array([r[0]]), LAM_B, 2, 1,
                               covectors_r=[lambda r: np.array([-r[0], 1.0])], psi=[lambda r: 0.1])
        r, _, _ = solve_pfaffian_point(sol, [0.0, 1.0])
        assert abs(r[0] - 0.9) <= 1e-13
        with pytest.raises(ValueError):
            solve_point(sol, [0.0, 1.0])

    def test_singular_jacobian(self):
        sol = ImplicitSolution(lambda r: np.array([-r[0]]), LAM_B, 2, 1,
                               covectors_r=[lambda r: np.array([r[0], 1.0])])
        with pytest.raises(CatastropheError):
            solve_pfaffian_point(sol, [1.0, 0.5])


class TestDerivative:
    def test_rank_zero(self):
        sol = ImplicitSolution(lambda r: np.array([0.2]), LAM_B, 2, 1, df=lambda r: np.zeros((1, 1)),
                               gammas=[lambda u: np.array([1.0])])
        d = derivative_matrix(sol, [0.4, 0.1], np.array([0.2]))
        assert d.rank == 0 and np.all(d.du == 0) and np.all(d.xi == 0)

    def test_burgers_analytic(self):
        sol = burgers(lambda r: r, lambda r: 1.0)
        t, x = 0.4, 0.7
        ps = solve_point(sol, [t, x])
        d = derivative_matrix(sol, [t, x], ps.u, ps.phi)
        u = x / (1 + t)
        np.testing.assert_allclose(d.du, [[-u / (1 + t), 1 / (1 + t)]], atol=1e-10)
        assert d.rank == 1 and d.xi_residual <= 1e-12

    def test_matches_finite_differences(self):
        sol = burgers(lambda r: 0.5 * np.tanh(r), lambda r: 0.5 / np.cosh(r) ** 2)
        x = np.array([0.3, 0.2])
        ps = solve_point(sol, x)
        fd = numeric_derivative(sampler(sol), x, 1e-5)
        assert np.max(np.abs(derivative_matrix(sol, x, ps.u).du - fd)) <= 5e-8 + 10e-10


class TestResidual:
    def test_constant_field(self):
        rep = pde_residual(registry_get("burgers"), lambda x: np.array([0.3]), np.random.default_rng(0).random((5, 2)))
        assert rep.max == 0.0

    def test_burgers_analytic(self):
        rng = np.random.default_rng(1)
        pts = np.column_stack([rng.uniform(0, 0.5, 40), rng.uniform(-1, 1, 40)])
        rep = pde_residual(registry_get("burgers"), lambda X: np.array([X[1] / (1 + X[0])]), pts, 1e-4)
        assert rep.max <= 1e-8

    def test_implicit_sampler(self):
        sol = burgers(lambda r: r, lambda r: 1.0)
        rng = np.random.default_rng(2)
        pts = np.column_stack([rng.uniform(0, 0.5, 20), rng.uniform(-1, 1, 20)])
        assert pde_residual(registry_get("burgers"), sampler(sol), pts).max <= 1e-8


class TestCatastrophe:
    def test_bisection(self):
        sol = burgers(lambda r: -r, lambda r: -1.0)
        t, det = locate_catastrophe(sol, [0.0, 0.3], 0.5, 1.5)
        assert abs(t - 1.0) <= 1e-4 and abs(det) <= 1e-8

    def test_same_sign_bracket(self):
        sol = burgers(lambda r: -r, lambda r: -1.0)
        with pytest.raises(ValueError):
            locate_catastrophe(sol, [0.0, 0.3], 0.1, 0.5)


def test_write_field_csv(tmp_path):
    write_field_csv(tmp_path / "f.csv", [([0.0, 1.0], [0.5], 1.0, 0.0)], 2, 1)
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "x1,x2,u1,det_phi,residual"
