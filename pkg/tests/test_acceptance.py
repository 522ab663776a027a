"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``;
a PASS/FAIL line per criterion is printed at the end of the session.
"""
import numpy as np
import pytest

from kwave.implicitsol import (
    ImplicitSolution,
    derivative_matrix,
    locate_catastrophe,
    numeric_derivative,
    phi_matrix,
    sampler,
    solve_pfaffian_point,
    solve_point,
)
from kwave.involution import abelianize_pair, check_abelian
from kwave.model import registry_get
from kwave.showcase import (
    alfven_build,
    alfven_elements,
    alfven_verify,
    barotropic_examples,
    barotropic_verify,
    shipped_solutions,
)
from kwave.surface import integrate_surface
from kwave.waves1d import (
    DiagonalSystem,
    InitialData,
    Profile,
    elasticity_report,
    exact_phase_shifts,
    simulate,
    validate_initial_data,
)
from kwave.wavealg import SimpleElement, WaveCovector

criterion = pytest.mark.criterion


def fmt(v):
    return f"{v:.3g}"


@pytest.fixture(scope="module")
def shipped():
    return shipped_solutions(n_points=50, seed=0)


@criterion(1, "wave relation on burgers, barotropic(1) and Alfven elements")
def test_wave_relation(record_property):
    cases = [
        ("burgers", registry_get("burgers"),
         SimpleElement(lambda u: np.array([1.0]), WaveCovector(lambda u: np.array([-u[0], 1.0])))),
        ("barotropic", registry_get("barotropic", n=1),
         SimpleElement(lambda u: np.array([0.0, 1.0]), WaveCovector(lambda u: np.array([-u[0], 1.0])))),
        ("alfven", registry_get("mhd"), alfven_elements(1)),
        ("alfven-eps-1", registry_get("mhd"), alfven_elements(-1)),
    ]
    worst = 0.0
    for name, model, el in cases:
        for u in model.domain.sample(100, seed=0):
            res = el.wave_residual(model, u)
            bound = 1e-10 * (1.0 + np.linalg.norm(model.A(u)))
            worst = max(worst, res / bound)
            assert res <= bound, (name, u)
    record_property("max residual/bound", fmt(worst))


@criterion(2, "rank bound sigma_(k+1)/sigma_1 on shipped solutions")
def test_rank_bound(shipped, record_property):
    ks = set()
    worst = 0.0
    for ex in shipped:
        sol = ex.solution
        ks.add(sol.k)
        for x in ex.points:
            ps = solve_point(sol, x)
            sv = derivative_matrix(sol, x, ps.u, ps.phi).singular_values
            if sv.size > sol.k and sv[0] > 0:
                ratio = sv[sol.k] / sv[0]
                worst = max(worst, ratio)
                assert ratio <= 1e-8, ex.name
    assert {1, 2} <= ks
    record_property("max ratio", fmt(worst))


@criterion(3, "factorized derivative against central differences")
def test_gradient_check(shipped, record_property):
    h = 1e-5
    worst = 0.0
    for ex in shipped:
        f = sampler(ex.solution)
        for x in ex.points:
            ps = solve_point(ex.solution, x)
            d = derivative_matrix(ex.solution, x, ps.u, ps.phi).du
            err = float(np.max(np.abs(d - numeric_derivative(f, x, h))))
            worst = max(worst, err)
            assert err <= 5e-8 + 10 * h * h, ex.name
    record_property("max error", fmt(worst))


@criterion(4, "gradient catastrophe of burgers f(r) = -r at t = 1")
def test_catastrophe(record_property):
    sol = ImplicitSolution(lambda r: -r, [lambda u: np.array([-u[0], 1.0])], 2, 1,
                           df=lambda r: np.array([[-1.0]]))
    t_star, det = locate_catastrophe(sol, [0.0, 0.37], 0.3, 1.6)
    assert abs(t_star - 1.0) <= 1e-4
    assert abs(det) <= 1e-8
    worst = 0.0
    for t in (0.0, 0.5, 1.0 - 1e-4, 1.0 + 1e-4, 1.5):
        u = np.array([-0.37 / (1.0 - t)])
        worst = max(worst, abs(phi_matrix(sol, [t, 0.37], u).det - (1.0 - t)))
    assert worst <= 1e-12
    record_property("t*", f"{t_star:.12f}")
    record_property("|det|", fmt(abs(det)))
    record_property("max |det - (1-t)|", fmt(worst))


def _x(u):
    return np.stack([np.ones_like(u[0]), np.zeros_like(u[0])])


@criterion(5, "abelianize_pair on (1,0), (0,u1) and on a commuting pair")
def test_abelianize(record_property):
    res = abelianize_pair(_x, lambda u: np.stack([np.zeros_like(u[0]), u[0]]), [1.0, 0.0], shape=(41, 41))
    assert res.valid.all() and res.bracket_max <= 1e-8
    # independent oracle: f2 = 1/u1 solves gamma1(ln f2) = -1/u1 with f2 = 1 at u1 = 1
    u1 = res.nodes[..., 0]
    f2_err = float(np.max(np.abs(res.f2 - 1.0 / u1)))
    assert f2_err <= 1e-8
    X, Y = res.rescaled()
    assert check_abelian([X, Y], res.nodes.reshape(-1, 2), tol=1e-8, order=4)[0]

    triv = abelianize_pair(lambda u: np.stack([u[0], np.zeros_like(u[0])]),
                           lambda u: np.stack([np.zeros_like(u[0]), u[1]]), [1.0, 1.0], shape=(41, 41))
    assert triv.trivial and np.all(triv.f1 == 1.0) and np.all(triv.f2 == 1.0)
    record_property("bracket max", fmt(res.bracket_max))
    record_property("f2 vs 1/u1", fmt(f2_err))


@criterion(6, "surface path independence and fourth-order convergence")
def test_surface(record_property):
    def e2(u):
        return np.stack([np.zeros_like(u[0]), u[1]])

    ax = np.linspace(0.0, 1.0, 101)
    s = integrate_surface([_x, e2], [0.0, 1.0], [ax, ax], audit_frac=1.0)
    assert s.audit["max_residual"] <= 1e-7

    errs = []
    for n in (51, 101):
        a = np.linspace(0.0, 1.0, n)
        R1, R2 = np.meshgrid(a, a, indexing="ij")
        vals = integrate_surface([_x, e2], [0.0, 1.0], [a, a], err_tol=None).values
        errs.append(float(np.max(np.abs(vals - np.stack([R1, np.exp(R2)], axis=-1)))))
    ratio = errs[0] / errs[1]
    assert ratio >= 8 * 0.8
    record_property("audit", fmt(s.audit["max_residual"]))
    record_property("errors", f"{fmt(errs[0])},{fmt(errs[1])}")
    record_property("ratio", f"{ratio:.2f}")


@criterion(7, "elastic superposition of two coupled simple waves")
def test_elastic(record_property):
    x = np.linspace(-4.0, 4.0, 1601)
    profiles = (Profile((-2.5, -1.5), 0.2), Profile((1.5, 2.5), 0.2))
    sys = DiagonalSystem("1 + 0.3*r2", "-1 + 0.3*r1")
    data = InitialData(x, profiles)
    val = validate_initial_data(sys, data)
    assert val["valid"] and val["c"] >= 1.8
    res = simulate(sys, data, 4.0, "characteristics")
    rep = elasticity_report(res, tol_match=1e-6)
    assert res.t1 < res.t2
    assert rep["support_counts_before"] == [1, 1] and rep["support_counts_after"] == [1, 1]
    errs = [w["match_error"] for w in rep["waves"]]
    assert max(errs) <= 1e-6
    shifts = [w["interaction_shift"] for w in rep["waves"]]
    assert all(abs(d) > 1e-3 for d in shifts)
    exact = exact_phase_shifts(profiles)
    assert np.max(np.abs(np.array(shifts) - exact)) <= 1e-6
    assert res.invariance_error <= 1e-8
    record_property("c", fmt(val["c"]))
    record_property("t1,t2", f"{res.t1:.4f},{res.t2:.4f}")
    record_property("match", fmt(max(errs)))
    record_property("shifts", ",".join(f"{d:.6f}" for d in shifts))
    record_property("invariance", fmt(res.invariance_error))


@criterion(8, "barotropic general and A-invariant solutions")
def test_barotropic(record_property):
    ex = barotropic_examples()
    gen = barotropic_verify(ex["tanh-2d"], t_range=(0.0, 0.5), h=1e-4)
    assert gen["momentum_max"] + gen["mass_max"] <= 1e-5
    nil = barotropic_verify(ex["nilpotent-2d"], t_range=(0.0, 0.5), h=1e-4)
    assert abs(nil["divergence_max"]) <= 5e-8
    assert nil["rho_transport_max"] <= 1e-6
    record_property("general residual", fmt(gen["residual_max"]))
    record_property("div", fmt(nil["divergence_max"]))
    record_property("transport", fmt(nil["rho_transport_max"]))


@criterion(9, "double Alfven wave residuals, Gauss law, |H|^2 and alignment")
def test_mhd(record_property):
    sol = alfven_build("0.2*sin(x1)*sin(x2)", H0=1.0)
    rep = alfven_verify(sol, n_samples=60, h=1e-4)
    assert max(rep["per_equation_max"]) <= 1e-6 and len(rep["per_equation_max"]) == 8
    assert rep["gauss_max"] <= 1e-6
    assert rep["H2_variation"] <= 1e-10 * sol.H0 ** 2
    assert rep["alignment_exact_max"] == 0.0
    record_property("residual", fmt(rep["residual_max"]))
    record_property("gauss", fmt(rep["gauss_max"]))
    record_property("H2 variation", fmt(rep["H2_variation"]))
    record_property("v x H (stored)", fmt(rep["alignment_float_max"]))


@criterion(10, "solve_point vs solve_pfaffian_point and upwind first-order convergence")
def test_cross_method(shipped, record_property):
    worst = 0.0
    for ex in shipped:
        sol = ex.solution
        if sol.k != 1:
            continue
        for x in ex.points:
            u = solve_point(sol, x).u
            _, u_pf, _ = solve_pfaffian_point(sol, x)
            worst = max(worst, float(np.max(np.abs(u - u_pf))))
    assert worst <= 1e-10

    profiles = (Profile((-2.5, -1.5), 0.2), Profile((1.5, 2.5), 0.2))
    sys = DiagonalSystem("1", "-1")
    l1, sup = [], []
    for n in (1601, 3201, 6401):
        x = np.linspace(-4.0, 4.0, n)
        data = InitialData(x, profiles)
        up = simulate(sys, data, 1.0, "upwind")
        ch = simulate(sys, data, 1.0, "characteristics")
        diff = np.abs(np.array([up.r1[-1] - ch.r1[-1], up.r2[-1] - ch.r2[-1]]))
        l1.append(float(np.max(diff.sum(axis=1) * (x[1] - x[0]))))
        sup.append(float(diff.max()))
    orders = np.log2(np.array(l1[:-1]) / np.array(l1[1:]))
    assert np.all(orders >= 0.9)
    record_property("pfaffian vs direct", fmt(worst))
    record_property("L1 orders", ",".join(f"{o:.2f}" for o in orders))
    record_property("max-norm orders", ",".join(f"{o:.2f}" for o in np.log2(np.array(sup[:-1]) / np.array(sup[1:]))))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
