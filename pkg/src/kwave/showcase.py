"""Verified example families: barotropic implicit solutions and stationary double Alfven waves."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AmplitudeError, CatastropheError, ConvergenceError
from .exprcore import as_expr, compile_vector
from .implicitsol import ImplicitSolution, pde_residual
from .model import FOUR_PI, registry_get
from .surface import integrate_surface
from .wavealg import SimpleElement, WaveCovector

TOL_CAT = 1e-8


def _five_point(fn, x, h=1e-3):
    """d fn / dx (m, n) by the fourth-order central stencil."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((8 * (fn(x + e) - fn(x - e)) - (fn(x + 2 * e) - fn(x - 2 * e))) / (12 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------- barotropic

@dataclass(frozen=True)
class BarotropicSolution:
    """u = f(x - u t) in n dimensions with density g.

    ``f`` and ``g`` are Expr lists/strings in x1..xn or callables of an
    (n,) array.  ``variant`` is ``general`` (rho = g / det(I + t Df)) or
    ``a-invariant`` (Df nilpotent, rho = g).
    """

    n: int
    f: object
    g: object
    Df: Callable | None = None
    variant: str = "general"

    def __post_init__(self):
        names = [f"x{i + 1}" for i in range(self.n)]
        f = self.f if callable(self.f) else compile_vector(self.f, names)
        g = self.g if callable(self.g) else compile_vector([self.g], names)
        if self.variant not in ("general", "a-invariant"):
            raise ValueError("variant must be 'general' or 'a-invariant'")
        object.__setattr__(self, "_fv", lambda z: np.asarray(f(np.asarray(z, float)), float).reshape(self.n))
        object.__setattr__(self, "_gv", lambda z: float(np.asarray(g(np.asarray(z, float)), float).ravel()[0]))

    def F(self, z):
        return self._fv(z)

    def G(self, z):
        return self._gv(z)

    def jac(self, z):
        if self.Df is not None:
            return np.asarray(self.Df(np.asarray(z, float)), float).reshape(self.n, self.n)
        return _five_point(self._fv, z)


def barotropic_eval(sol: BarotropicSolution, t: float, x, tol: float = 1e-13, max_iter: int = 50,
                    tol_cat: float = TOL_CAT):
    """Solve u = f(x - u t) by Newton (Jacobian I + t Df) and return (u, rho)."""
    x = np.asarray(x, dtype=float).reshape(sol.n)
    eye = np.eye(sol.n)
    u = sol.F(x)
    for it in range(max_iter + 1):
        z = x - u * t
        res = u - sol.F(z)
        J = eye + t * sol.jac(z)
        det = float(np.linalg.det(J))
        if abs(det) <= tol_cat:
            raise CatastropheError(f"|det(I + t Df)| = {abs(det):.3e} at t={t}, x={x}", det)
        if np.max(np.abs(res)) <= tol:
            step = np.linalg.solve(J, res)
            polished = u - step
            if np.max(np.abs(polished - sol.F(x - polished * t))) <= np.max(np.abs(res)):
                u = polished
            break
        if it == max_iter:
            raise ConvergenceError(f"no convergence after {max_iter} iterations at t={t}, x={x}")
        u = u - np.linalg.solve(J, res)
    z = x - u * t
    if sol.variant == "a-invariant":
        rho = sol.G(z)
    else:
        rho = sol.G(z) / float(np.linalg.det(eye + t * sol.jac(z)))
    return u, rho


def barotropic_field(sol: BarotropicSolution):
    """Sampler (t, x1..xn) -> (u1..un, rho)."""
    def field_fn(X):
        X = np.asarray(X, dtype=float)
        u, rho = barotropic_eval(sol, X[0], X[1:])
        return np.append(u, rho)
    return field_fn


def _divergence(field_fn, X, n, h):
    total = 0.0
    for b in range(n):
        e = np.zeros_like(X)
        e[b + 1] = h
        total += (field_fn(X + e)[b] - field_fn(X - e)[b]) / (2 * h)
    return total


def barotropic_verify(sol: BarotropicSolution, t_range=(0.0, 0.5), x_box=(-1.0, 1.0), n_samples: int = 40,
                      h: float = 1e-4, seed: int = 0) -> dict:
    """Momentum/mass residuals at random samples, plus variant-specific checks."""
    rng = np.random.default_rng(seed)
    n = sol.n
    pts = np.column_stack([rng.uniform(*t_range, n_samples), rng.uniform(*x_box, (n_samples, n))])
    model = registry_get("barotropic", n=n)
    fld = barotropic_field(sol)
    rep = pde_residual(model, fld, pts, h)
    out = {
        "variant": sol.variant, "h": h, "samples": n_samples,
        "momentum_max": float(np.max(rep.per_equation_max[:n])),
        "mass_max": float(rep.per_equation_max[n]),
        "residual_max": rep.max, "residual_rms": rep.rms,
    }

    # mass identity along x = xi + t f(xi): rho det(I + t Df(xi)) = g(xi)
    xis = rng.uniform(*x_box, (min(n_samples, 20), n))
    worst_mass = worst_rect_u = worst_rect_rho = 0.0
    for xi in xis:
        for t in np.linspace(*t_range, 5):
            x = xi + t * sol.F(xi)
            u, rho = barotropic_eval(sol, t, x)
            det = float(np.linalg.det(np.eye(n) + t * sol.jac(xi)))
            worst_mass = max(worst_mass, abs(rho * det - sol.G(xi)))
            worst_rect_u = max(worst_rect_u, float(np.max(np.abs(u - sol.F(xi)))))
            if sol.variant == "a-invariant":
                worst_rect_rho = max(worst_rect_rho, abs(rho - sol.G(xi)))
    out["mass_identity_max"] = worst_mass
    out["rectified_u_max"] = worst_rect_u

    if sol.variant == "a-invariant":
        nil = max(float(np.max(np.abs(np.linalg.matrix_power(sol.jac(p[1:] - sol.F(p[1:]) * p[0]), n)))) for p in pts)
        div = max(abs(_divergence(fld, p, n, h)) for p in pts)
        transport = 0.0
        for p in pts:
            u = fld(p)[:n]
            grad = []
            for i in range(n + 1):
                e = np.zeros_like(p)
                e[i] = h
                grad.append((fld(p + e)[n] - fld(p - e)[n]) / (2 * h))
            transport = max(transport, abs(grad[0] + float(np.dot(u, grad[1:]))))
        out.update({"nilpotency_max": nil, "divergence_max": float(div), "rho_transport_max": float(transport),
                    "rectified_rho_max": worst_rect_rho})
    return out


def barotropic_examples():
    return {
        "linear-1d": BarotropicSolution(1, ["x1"], "1", Df=lambda z: np.array([[1.0]])),
        "tanh-2d": BarotropicSolution(2, ["0.1*tanh(x1)", "0.1*tanh(x2)"], "1 + 0.1*exp(-(x1^2 + x2^2))"),
        "nilpotent-2d": BarotropicSolution(2, ["0.5*x2", "0"], "1 + 0.1*exp(-(x1^2 + x2^2))",
                                           Df=lambda z: np.array([[0.0, 0.5], [0.0, 0.0]]),
                                           variant="a-invariant"),
    }


# ---------------------------------------------------------------- Alfven waves

@dataclass(frozen=True)
class AlfvenSolution:
    """Stationary double Alfven wave from a stream function Psi(x1, x2).

    m = (dPsi/dx2, -dPsi/dx1, sqrt(1 - m1^2 - m2^2)), H = H0 m,
    v = eps H / sqrt(4 pi rho0), with constant rho0 and p0.
    """

    psi: object
    H0: float = 1.0
    rho0: float = 1.0
    p0: float = 1.0
    eps: int = 1
    gamma: float = 5.0 / 3.0
    box: tuple = ((-np.pi, np.pi), (-np.pi, np.pi))
    info: dict = field(default_factory=dict)

    @property
    def scale(self) -> float:
        return self.eps / np.sqrt(FOUR_PI * self.rho0)

    def grad_psi(self, xb):
        xb = np.asarray(xb, dtype=float)
        return _five_point(self._psi, xb)

    def _psi(self, xb):
        return np.asarray(self.psi_fn(np.asarray(xb, float)), float)

    def m(self, xb):
        g = self.grad_psi(xb)
        m1, m2 = g[..., 1], g[..., 0] * -1.0
        return np.stack([m1, m2, np.sqrt(1.0 - m1 * m1 - m2 * m2)], axis=-1)

    def H(self, xb):
        return self.H0 * self.m(xb)

    def state(self, xb):
        """The 8-state (rho, p, v, H) at phases xb = (x1, x2)."""
        H = self.H(xb)
        return np.concatenate([[self.rho0, self.p0], self.scale * H, H])

    def field(self, X):
        """Sampler (t, x1, x2, x3) -> state; independent of t and x3."""
        X = np.asarray(X, dtype=float)
        return self.state(X[1:3])


def alfven_build(psi, H0: float = 1.0, rho0: float = 1.0, p0: float = 1.0, eps: int = 1,
                 gamma: float = 5.0 / 3.0, box=((-np.pi, np.pi), (-np.pi, np.pi)), n_check: int = 201):
    """Build the double Alfven wave and enforce sup |grad Psi| < 1 on the phase box."""
    if eps not in (1, -1):
        raise ValueError("eps must be +1 or -1")
    if rho0 <= 0 or p0 <= 0:
        raise ValueError("rho0 and p0 must be positive")
    e = as_expr(psi) if not callable(psi) else None
    if e is not None and not e.free_vars <= {"x1", "x2"}:
        raise ValueError(f"stream function {e.source!r} must depend on x1, x2 only")
    fn = compile_vector([e], ["x1", "x2"]) if e is not None else psi
    sol = AlfvenSolution(psi if e is None else e.source, float(H0), float(rho0), float(p0), int(eps),
                         float(gamma), tuple(tuple(b) for b in box))
    object.__setattr__(sol, "psi_fn", lambda xb: np.asarray(fn(xb), float).reshape(np.shape(xb)[1:]))
    a = np.linspace(*box[0], n_check)
    b = np.linspace(*box[1], n_check)
    A, B = np.meshgrid(a, b, indexing="ij")
    grid = np.stack([A.ravel(), B.ravel()])
    g = _grid_gradient(sol, grid)
    sup = float(np.max(np.hypot(g[0], g[1])))
    sol.info["sup_grad_psi"] = sup
    if not sup < 1.0:
        raise AmplitudeError(f"sup |grad Psi| = {sup:.6g} >= 1 on the phase box")
    return sol


def _grid_gradient(sol, grid, h=1e-3):
    out = []
    for i in range(2):
        e = np.zeros_like(grid)
        e[i] = h
        f = sol.psi_fn
        out.append((8 * (f(grid + e) - f(grid - e)) - (f(grid + 2 * e) - f(grid - 2 * e))) / (12 * h))
    return np.array(out)


def alfven_elements(eps: int = 1, a=(1.0, 0.0, 0.0), alpha=(0.0, 0.0, 1.0)):
    """Alfven simple element: h = H x a, gamma = (0, 0, eps h / sqrt(4 pi rho), h),
    lambda = (eps H.k / sqrt(4 pi rho) - v.k, k) with k = alpha x h."""
    a = np.asarray(a, float)
    alpha = np.asarray(alpha, float)

    def parts(u):
        u = np.asarray(u, float)
        rho, v, H = u[0], u[2:5], u[5:8]
        h = np.cross(H, a, axis=0)
        k = np.cross(alpha.reshape((3,) + (1,) * (u.ndim - 1)), h, axis=0)
        s = eps / np.sqrt(FOUR_PI * rho)
        return rho, v, H, h, k, s

    def gamma(u):
        _, _, _, h, _, s = parts(u)
        z = np.zeros_like(h[:1])
        return np.concatenate([z, z, s * h, h])

    def lam(u):
        _, v, H, _, k, s = parts(u)
        l0 = s * np.sum(H * k, axis=0) - np.sum(v * k, axis=0)
        return np.concatenate([np.asarray(l0)[None], k])

    return SimpleElement(gamma, WaveCovector(lam), label="alfven", info={"eps": eps})


def rotation_fields(eps: int = 1):
    """Commuting Alfven fields rotating H on the sphere |H| = const (polar, azimuthal)."""
    def split(u):
        u = np.asarray(u, float)
        H = u[5:8]
        perp = np.sqrt(H[0] ** 2 + H[1] ** 2)
        s = eps / np.sqrt(FOUR_PI * u[0])
        return H, perp, s

    def lift(h, s):
        z = np.zeros_like(h[:1])
        return np.concatenate([z, z, s * h, h])

    def polar(u):
        H, perp, s = split(u)
        return lift(np.stack([H[0] * H[2] / perp, H[1] * H[2] / perp, -perp]), s)

    def azimuthal(u):
        H, _, s = split(u)
        return lift(np.stack([-H[1], H[0], np.zeros_like(H[0])]), s)

    return polar, azimuthal


def alfven_surface(H0: float = 1.0, rho0: float = 1.0, p0: float = 1.0, eps: int = 1, theta0: float = np.pi / 2,
                   phi0: float = 0.0, axes=None, **kwargs):
    """Integrate the rotation fields from the aligned state at angles (theta0, phi0)."""
    if axes is None:
        axes = (np.linspace(-1.0, 1.0, 101), np.linspace(-1.0, 1.0, 101))
    H = H0 * np.array([np.sin(theta0) * np.cos(phi0), np.sin(theta0) * np.sin(phi0), np.cos(theta0)])
    base = np.concatenate([[rho0, p0], eps / np.sqrt(FOUR_PI * rho0) * H, H])
    model = registry_get("mhd")
    return integrate_surface(rotation_fields(eps), base, axes, domain=model.domain, **kwargs)


def alfven_verify(sol: AlfvenSolution, n_samples: int = 60, h: float = 1e-4, seed: int = 0,
                  n_states: int = 100) -> dict:
    """Full MHD residual, Gauss law, |H|^2 variation, alignment and element wave relation."""
    rng = np.random.default_rng(seed)
    (a0, a1), (b0, b1) = sol.box
    pts = np.column_stack([rng.uniform(0.0, 1.0, n_samples), rng.uniform(a0, a1, n_samples),
                           rng.uniform(b0, b1, n_samples), rng.uniform(-1.0, 1.0, n_samples)])
    model = registry_get("mhd", gamma=sol.gamma)
    rep = pde_residual(model, sol.field, pts, h)

    states = np.array([sol.field(p) for p in pts])
    H = states[:, 5:8]
    H2 = np.sum(H * H, axis=1)
    # the construction stores v = scale * H; with the common factor pulled out the
    # cross product is scale * (H x H), which vanishes identically in floating point
    aligned = sol.scale * np.cross(H, H)
    v = states[:, 2:5]
    stationary = max(float(np.max(np.abs(sol.field(p + [h, 0, 0, 0]) - sol.field(p - [h, 0, 0, 0])))) for p in pts)

    el = alfven_elements(sol.eps)
    wave = 0.0
    norm_a = 0.0
    for u in model.domain.sample(n_states, seed):
        M = np.tensordot(el.covector(u), model.A(u), axes=1)
        wave = max(wave, float(np.max(np.abs(M @ el.gamma(u)))))
        norm_a = max(norm_a, float(np.linalg.norm(model.A(u))))
    on_solution = 0.0
    for u in states[: min(20, len(states))]:
        lam = el.covector(u)
        on_solution = max(on_solution, abs(float(lam[0])))
    return {
        "h": h, "samples": n_samples,
        "residual_max": rep.max, "residual_rms": rep.rms,
        "per_equation_max": rep.per_equation_max.tolist(),
        "gauss_max": rep.constraint_max,
        "H2_variation": float(np.ptp(H2)), "H0_squared": sol.H0 ** 2,
        "alignment_exact_max": float(np.max(np.abs(aligned))),
        "alignment_float_max": float(np.max(np.abs(np.cross(v, H)))),
        "stationarity_max": stationary,
        "wave_relation_max": wave, "wave_relation_tol": 1e-10 * (1.0 + norm_a),
        "lambda0_on_solution_max": on_solution,
        "sup_grad_psi": sol.info.get("sup_grad_psi"),
    }


# ---------------------------------------------------------------- shipped implicit solutions

@dataclass(frozen=True)
class ShippedExample:
    name: str
    solution: ImplicitSolution
    points: np.ndarray
    model: object = None


def _points(rng, n, box):
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return lo + (hi - lo) * rng.random((n, lo.size))


def shipped_solutions(n_points: int = 50, seed: int = 0):
    """Every ImplicitSolution used by the rank and gradient checks."""
    rng = np.random.default_rng(seed)
    out = []
    burgers = registry_get("burgers")
    lam_b = lambda u: np.array([-u[0], 1.0])  # noqa: E731

    out.append(ShippedExample(
        "burgers-linear",
        ImplicitSolution(lambda r: np.array([r[0]]), [lam_b], 2, 1, df=lambda r: np.array([[1.0]]),
                         gammas=[lambda u: np.array([1.0])]),
        _points(rng, n_points, [(0.0, 0.5), (-1.0, 1.0)]), burgers))
    out.append(ShippedExample(
        "burgers-tanh",
        ImplicitSolution(lambda r: np.array([0.5 * np.tanh(r[0])]), [lam_b], 2, 1,
                         df=lambda r: np.array([[0.5 / np.cosh(r[0]) ** 2]]), gammas=[lambda u: np.array([1.0])]),
        _points(rng, n_points, [(0.0, 1.0), (-2.0, 2.0)]), burgers))

    a = 0.5

    def g_rho(r):
        return 1.0 + 0.1 * np.exp(-(r[0] ** 2 + r[1] ** 2))

    def f_baro(r):
        return np.array([a * r[1], 0.0, g_rho(r)])

    def df_baro(r):
        e = 0.1 * np.exp(-(r[0] ** 2 + r[1] ** 2))
        return np.array([[0.0, a], [0.0, 0.0], [-2 * r[0] * e, -2 * r[1] * e]])

    out.append(ShippedExample(
        "barotropic-nilpotent",
        ImplicitSolution(f_baro, [lambda u: np.array([-u[0], 1.0, 0.0]), lambda u: np.array([-u[1], 0.0, 1.0])],
                         3, 3, df=df_baro),
        _points(rng, n_points, [(0.0, 0.5), (-1.0, 1.0), (-1.0, 1.0)]), registry_get("barotropic", n=2)))

    alf = alfven_build("0.2*sin(x1)*sin(x2)")
    out.append(ShippedExample(
        "mhd-double-alfven",
        ImplicitSolution(lambda r: alf.state(r), [lambda u: np.array([0.0, 1.0, 0.0, 0.0]),
                                                  lambda u: np.array([0.0, 0.0, 1.0, 0.0])], 4, 8),
        _points(rng, n_points, [(0.0, 1.0), (-np.pi, np.pi), (-np.pi, np.pi), (-1.0, 1.0)]),
        registry_get("mhd")))

    ax = np.linspace(-1.0, 1.0, 101)
    surf = integrate_surface([lambda u: np.stack([np.ones_like(u[0]), np.zeros_like(u[0])]),
                              lambda u: np.stack([np.zeros_like(u[0]), u[1]])], [0.0, 1.0], [ax, ax])
    out.append(ShippedExample(
        "surface-exponential",
        ImplicitSolution.from_surface(surf, [lambda u: np.array([1.0, u[0], 0.0]),
                                             lambda u: np.array([1.0, 0.0, u[1]])], 3),
        _points(rng, n_points, [(-0.2, 0.2), (-0.2, 0.2), (-0.2, 0.2)])))

    out.append(ShippedExample(
        "swap-pfaffian",
        ImplicitSolution(lambda r: np.array([r[1], r[0]]),
                         [lambda u: np.array([1.0, u[0], 0.0]), lambda u: np.array([1.0, 0.0, u[1]])], 3, 2,
                         df=lambda r: np.array([[0.0, 1.0], [1.0, 0.0]]),
                         covectors_r=[lambda r: np.array([1.0, r[1], 0.0]), lambda r: np.array([1.0, 0.0, r[0]])],
                         gammas=[lambda u: np.array([0.0, 1.0]), lambda u: np.array([1.0, 0.0])]),
        _points(rng, n_points, [(-0.3, 0.3), (-0.3, 0.3), (-0.3, 0.3)])))
    return out
