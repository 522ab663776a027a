"""Implicit evaluation of rank-k solutions u = f(r), r^s = lambda^s(u) . x, and their verification."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CatastropheError, ConvergenceError, DomainError
from .model import SystemModel, default_step, jacobian_u

TOL_CAT = 1e-8


def _numeric_df(f, r, h=1e-3):
    """df/dr (q, k) by the five-point stencil."""
    r = np.asarray(r, dtype=float)
    cols = []
    for s in range(r.size):
        e = np.zeros_like(r)
        e[s] = h
        cols.append((8 * (f(r + e) - f(r - e)) - (f(r + 2 * e) - f(r - 2 * e))) / (12 * h))
    return np.stack(cols, axis=1)


def _polish(step, v):
    try:
        out = step(v)
    except (np.linalg.LinAlgError, DomainError):
        return None
    return out if np.all(np.isfinite(out)) else None


@dataclass(frozen=True)
class ImplicitSolution:
    """Data defining u(x) implicitly through u = f(r^1, ..., r^k).

    ``covectors`` are state functions u -> lambda^s(u) used by
    :func:`solve_point`; ``covectors_r`` (optional) are the same covectors as
    functions of r, used by :func:`solve_pfaffian_point` (defaults to
    lambda^s(f(r))).  ``psi`` are phase functions r -> float, default zero.
    """

    f: Callable
    covectors: Sequence[Callable]
    p: int
    q: int
    df: Callable | None = None
    psi: Sequence[Callable] | None = None
    covectors_r: Sequence[Callable] | None = None
    gammas: Sequence[Callable] | None = None
    name: str = ""
    info: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.covectors)

    def F(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.df is not None:
            return np.asarray(self.df(r), dtype=float).reshape(self.q, self.k)
        return _numeric_df(self._f, r)

    def _f(self, r):
        return np.asarray(self.f(np.asarray(r, dtype=float)), dtype=float).reshape(self.q)

    def Lam(self, u) -> np.ndarray:
        """The (k, p) matrix whose rows are lambda^s(u)."""
        return np.array([np.asarray(lam(u), dtype=float) for lam in self.covectors]).reshape(self.k, self.p)

    def Lam_r(self, r) -> np.ndarray:
        if self.covectors_r is None:
            return self.Lam(self._f(r))
        return np.array([np.asarray(lam(r), dtype=float) for lam in self.covectors_r]).reshape(self.k, self.p)

    def phases(self, r) -> np.ndarray:
        if self.psi is None:
            return np.zeros(self.k)
        return np.array([float(ps(r)) for ps in self.psi])

    @classmethod
    def from_surface(cls, surface, covectors, p, **kwargs):
        """Use a SurfaceMap interpolant (and its derivative) as f."""
        return cls(surface, covectors, p, surface.q, df=surface.jacobian, **kwargs)


@dataclass(frozen=True)
class PhiMatrix:
    matrix: np.ndarray
    det: float
    cond: float


@dataclass(frozen=True)
class PointSolution:
    u: np.ndarray
    r: np.ndarray
    phi: PhiMatrix
    iterations: int
    residual: float


@dataclass(frozen=True)
class DecompositionResult:
    du: np.ndarray                  # (q, p)
    xi: np.ndarray | None
    xi_residual: float | None
    singular_values: np.ndarray
    rank: int


def riemann_invariants(sol: ImplicitSolution, x, u) -> np.ndarray:
    return sol.Lam(u) @ np.asarray(x, dtype=float)


def dr_du(sol: ImplicitSolution, x, u) -> np.ndarray:
    """d r^s / d u^alpha = (d lambda^s_j / d u^alpha) x^j as a (k, q) matrix."""
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        return np.zeros((sol.k, sol.q))
    return jacobian_u(lambda v: sol.Lam(v) @ x, np.asarray(u, dtype=float), order=4)


def phi_matrix(sol: ImplicitSolution, x, u) -> PhiMatrix:
    """phi = I - (dr/du)(df/dr)."""
    u = np.asarray(u, dtype=float)
    r = riemann_invariants(sol, x, u)
    M = np.eye(sol.k) - dr_du(sol, x, u) @ sol.F(r)
    det = float(np.linalg.det(M))
    cond = float(np.linalg.cond(M)) if det != 0.0 else float("inf")
    return PhiMatrix(M, det, cond)


def solve_point(sol: ImplicitSolution, x, u0=None, tol: float = 1e-12, max_iter: int = 50,
                tol_cat: float = TOL_CAT, check_catastrophe: bool = True) -> PointSolution:
    """Solve u = f(lambda(u) . x) at the point x by Newton's method.

    Initial guess policy: u0 = f(r(x, f(0))) unless given, followed by three
    fixed-point sweeps, each kept only when it lowers the residual.  Newton
    uses a central-difference Jacobian of g(u) = u - f(r(x, u)); after
    |g| <= ``tol`` one polishing step is taken.
    """
    x = np.asarray(x, dtype=float)
    if sol.psi is not None:
        raise ValueError("solve_point handles unshifted invariants; use solve_pfaffian_point with phases")

    def g(u):
        return u - sol._f(sol.Lam(u) @ x)

    if u0 is None:
        u0 = sol._f(sol.Lam(sol._f(np.zeros(sol.k))) @ x)
    u = np.array(u0, dtype=float).reshape(sol.q)
    try:
        res = g(u)
        for _ in range(3):
            cand = sol._f(sol.Lam(u) @ x)
            cres = g(cand)
            if np.all(np.isfinite(cres)) and np.max(np.abs(cres)) < np.max(np.abs(res)):
                u, res = cand, cres
        it = 0
        while np.max(np.abs(res)) > tol:
            if it >= max_iter:
                raise ConvergenceError(f"no convergence after {max_iter} Newton iterations at x={x}")
            if check_catastrophe:
                ph = phi_matrix(sol, x, u)
                if abs(ph.det) <= tol_cat:
                    raise CatastropheError(f"|det phi| = {abs(ph.det):.3e} at x={x}", ph.det)
            J = jacobian_u(g, u)
            u = u - np.linalg.solve(J, res)
            res = g(u)
            if not np.all(np.isfinite(res)):
                raise ConvergenceError(f"Newton iterate left the domain of f at x={x}")
            it += 1
        if np.any(res):
            polished = _polish(lambda v: v - np.linalg.solve(jacobian_u(g, v), g(v)), u)
            if polished is not None:
                pres = g(polished)
                if np.max(np.abs(pres)) <= np.max(np.abs(res)):
                    u, res = polished, pres
    except np.linalg.LinAlgError:
        try:
            det = phi_matrix(sol, x, u).det
        except (np.linalg.LinAlgError, DomainError):
            det = 0.0
        raise CatastropheError(f"singular Newton Jacobian at x={x}", det) from None
    except DomainError as exc:
        raise ConvergenceError(f"Newton iterate left the model domain at x={x}: {exc}") from None
    ph = phi_matrix(sol, x, u)
    if check_catastrophe and abs(ph.det) <= tol_cat:
        raise CatastropheError(f"|det phi| = {abs(ph.det):.3e} at x={x}", ph.det)
    return PointSolution(u, riemann_invariants(sol, x, u), ph, it, float(np.max(np.abs(res))))


def solve_pfaffian_point(sol: ImplicitSolution, x, r0=None, tol: float = 1e-12, max_iter: int = 50,
                         tol_cat: float = TOL_CAT):
    """Solve lambda^s(r) . x - r^s - psi^s(r) = 0 for r by Newton; return (r, f(r), iterations).

    With psi = 0 the Jacobian of the residual is -phi, so a singular Jacobian
    signals a gradient catastrophe.
    """
    x = np.asarray(x, dtype=float)

    def G(r):
        return sol.Lam_r(r) @ x - r - sol.phases(r)

    r = np.asarray(sol.Lam_r(np.zeros(sol.k)) @ x if r0 is None else r0, dtype=float).reshape(sol.k)
    res = G(r)
    it = 0
    try:
        while np.max(np.abs(res)) > tol:
            if it >= max_iter:
                raise ConvergenceError(f"no convergence after {max_iter} Newton iterations at x={x}")
            J = jacobian_u(G, r)
            det = float(np.linalg.det(J))
            if abs(det) <= tol_cat:
                raise CatastropheError(f"singular Pfaffian Jacobian (|det| = {abs(det):.3e}) at x={x}", det)
            r = r - np.linalg.solve(J, res)
            res = G(r)
            if not np.all(np.isfinite(res)):
                raise ConvergenceError(f"Newton iterate left the domain at x={x}")
            it += 1
        if np.any(res):
            polished = _polish(lambda v: v - np.linalg.solve(jacobian_u(G, v), G(v)), r)
            if polished is not None and np.max(np.abs(G(polished))) <= np.max(np.abs(res)):
                r = polished
    except np.linalg.LinAlgError:
        raise CatastropheError(f"singular Pfaffian Jacobian at x={x}", 0.0) from None
    return r, sol._f(r), it


def derivative_matrix(sol: ImplicitSolution, x, u, phi: PhiMatrix | None = None,
                      rank_tol: float = 1e-10) -> DecompositionResult:
    """Factorized derivative du/dx = F phi^{-1} Lambda, amplitudes xi^s and rank."""
    u = np.asarray(u, dtype=float)
    phi = phi_matrix(sol, x, u) if phi is None else phi
    if abs(phi.det) <= 0.0 or not np.isfinite(phi.cond) or phi.cond > 1e14:
        raise CatastropheError("phi is singular", phi.det)
    r = riemann_invariants(sol, x, u)
    L = sol.Lam(u)
    du = sol.F(r) @ np.linalg.solve(phi.matrix, L)
    sv = np.linalg.svd(du, compute_uv=False)
    rank = int(np.sum(sv > rank_tol * sv[0])) if sv.size and sv[0] > 0 else 0
    xi = xi_res = None
    if sol.gammas is not None:
        dyads = np.array([np.outer(np.asarray(g(u), float), L[s]).ravel() for s, g in enumerate(sol.gammas)]).T
        xi, *_ = np.linalg.lstsq(dyads, du.ravel(), rcond=None)
        xi_res = float(np.linalg.norm(dyads @ xi - du.ravel()))
    return DecompositionResult(du, xi, xi_res, sv, rank)


def numeric_derivative(sampler, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference du/dx (q, p) of a sampler x -> u."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(sampler(x + e), float) - np.asarray(sampler(x - e), float)) / (2 * h))
    return np.stack(cols, axis=1)


@dataclass
class ResidualReport:
    max: float
    rms: float
    per_point: np.ndarray
    per_equation_max: np.ndarray
    constraint_max: float | None = None
    h: float = 0.0

    def to_dict(self):
        return {
            "max": self.max, "rms": self.rms, "h": self.h,
            "per_equation_max": self.per_equation_max.tolist(),
            "constraint_max": self.constraint_max,
        }


def pde_residual(model: SystemModel, field, points, h: float = 1e-4) -> ResidualReport:
    """Residual A^i(u) u_i of a sampler x -> u at the given (N, p) points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rows = []
    cons = []
    for x in pts:
        u = np.asarray(field(x), float)
        du = numeric_derivative(field, x, h)
        rows.append(model.residual(u, du))
        if model.constraint is not None:
            cons.append(np.asarray(model.constraint(u, du), float))
    R = np.abs(np.array(rows))
    per_point = np.max(R, axis=1) if R.size else np.zeros(0)
    cmax = float(np.max(np.abs(cons))) if cons else None
    return ResidualReport(float(np.max(R)) if R.size else 0.0,
                          float(np.sqrt(np.mean(R**2))) if R.size else 0.0,
                          per_point, np.max(R, axis=0), cmax, h)


def sampler(sol: ImplicitSolution, **kwargs):
    """x -> u(x) by :func:`solve_point` with a continuation-free default guess."""
    def field_fn(x):
        return solve_point(sol, x, **kwargs).u
    return field_fn


def locate_catastrophe(sol: ImplicitSolution, point, t_lo: float, t_hi: float, tol_t: float = 1e-12,
                       time_index: int = 0, max_iter: int = 200):
    """Bisect on t for the sign change of det phi along x(t) = point with x^time_index = t.

    Returns (t_star, det_phi(t_star)).
    """
    def det_at(t):
        x = np.array(point, dtype=float)
        x[time_index] = t
        try:
            ps = solve_point(sol, x, check_catastrophe=False)
        except CatastropheError as exc:
            # Newton itself hit the singular Jacobian: we are on the catastrophe
            return exc.det
        return ps.phi.det

    d_lo, d_hi = det_at(t_lo), det_at(t_hi)
    if np.sign(d_lo) == np.sign(d_hi):
        raise ValueError("det phi has the same sign at both ends of the bracket")
    for _ in range(max_iter):
        if t_hi - t_lo <= tol_t:
            break
        mid = 0.5 * (t_lo + t_hi)
        d = det_at(mid)
        if d == 0.0:
            return mid, d
        if np.sign(d) == np.sign(d_lo):
            t_lo, d_lo = mid, d
        else:
            t_hi, d_hi = mid, d
    t = 0.5 * (t_lo + t_hi)
    return t, det_at(t)


def write_field_csv(path, rows, p, q):
    """Snapshot CSV: x1..xp, u1..uq, det_phi, residual."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(p)] + [f"u{a + 1}" for a in range(q)] + ["det_phi", "residual"])
        for x, u, det, res in rows:
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in u] + [repr(float(det)), repr(float(res))])


__all__ = [
    "ImplicitSolution", "PhiMatrix", "PointSolution", "DecompositionResult", "ResidualReport",
    "solve_point", "solve_pfaffian_point", "derivative_matrix", "phi_matrix", "dr_du",
    "riemann_invariants", "numeric_derivative", "pde_residual", "sampler", "locate_catastrophe",
    "write_field_csv", "default_step",
]
