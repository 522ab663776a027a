"""Involutivity checks for families of simple elements and the k = 2 rescaling.

Vector fields are callables taking u with shape (q,) or (q, N) (trailing
sample axis) and returning an array of the same layout.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePairError, NormalizationError, SpanConditionError
from .model import jacobian_u


def _as_field(obj):
    return getattr(obj, "gamma", obj)


def commutator(gi, gj, u, h=None, order: int = 2, domain=None) -> np.ndarray:
    """Lie bracket [gi, gj](u) = J(gj) gi - J(gi) gj by central differences."""
    gi, gj = _as_field(gi), _as_field(gj)
    u = np.asarray(u, dtype=float)
    Ji = jacobian_u(gi, u, h, domain=domain, order=order)
    Jj = jacobian_u(gj, u, h, domain=domain, order=order)
    vi = np.asarray(gi(u), dtype=float)
    vj = np.asarray(gj(u), dtype=float)
    if u.ndim == 1:
        return Jj @ vi - Ji @ vj
    return np.einsum("abn,bn->an", Jj, vi) - np.einsum("abn,bn->an", Ji, vj)


def _wedge_sine(a, b):
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    # sine from the rejection of b off a; avoids the cancellation in sqrt(1 - cos^2)
    with np.errstate(invalid="ignore", divide="ignore"):
        rej = b - a * (np.sum(a * b, axis=0) / (na * na))
        sine = np.linalg.norm(rej, axis=0) / nb
    return np.clip(sine, 0.0, 1.0), na, nb


def span_fit(bracket, a, b):
    """Least-squares fit bracket ~ c_a a + c_b b for batched (q, N) columns.

    Returns (c_a, c_b, residual) with residual the norm of the out-of-span part.
    """
    # 2x2 normal equations solved in closed form; the pair is non-parallel by precondition
    aa = np.sum(a * a, axis=0)
    bb = np.sum(b * b, axis=0)
    ab = np.sum(a * b, axis=0)
    ya = np.sum(bracket * a, axis=0)
    yb = np.sum(bracket * b, axis=0)
    det = aa * bb - ab * ab
    with np.errstate(invalid="ignore", divide="ignore"):
        ca = (bb * ya - ab * yb) / det
        cb = (aa * yb - ab * ya) / det
    rem = bracket - ca * a - cb * b
    return ca, cb, np.linalg.norm(rem, axis=0)


@dataclass
class CommutatorStructure:
    """Bracket of the pair (i, j) fitted onto span{gamma_i, gamma_j} at samples."""

    i: int
    j: int
    samples: np.ndarray
    brackets: np.ndarray
    h_i: np.ndarray
    h_j: np.ndarray
    residual: np.ndarray
    tol: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if self.residual.size else 0.0

    @property
    def ok(self) -> bool:
        return bool(np.all(self.residual <= self.tol))

    def to_dict(self):
        return {
            "pair": [self.i, self.j],
            "max_residual": self.max_residual,
            "in_span": self.ok,
            "h_i": self.h_i.tolist(),
            "h_j": self.h_j.tolist(),
            "residual": self.residual.tolist(),
        }


def check_span_condition(elements, samples, tol_span=None, h=None, order: int = 2,
                         bracket=None, wedge_tol: float = 1e-10):
    """Test [gamma_i, gamma_j] in span{gamma_i, gamma_j} for every pair at the samples.

    ``samples`` is (N, q).  ``tol_span`` defaults to 1e-8 (1 + |gamma|).
    ``bracket(i, j, U)`` may replace the numerical bracket (a test hook).
    """
    fields = [_as_field(e) for e in elements]
    U = np.atleast_2d(np.asarray(samples, dtype=float)).T       # (q, N)
    out = []
    for i, j in itertools.combinations(range(len(fields)), 2):
        a = np.asarray(fields[i](U), float)
        b = np.asarray(fields[j](U), float)
        sine, na, nb = _wedge_sine(a, b)
        bad = ~(sine > wedge_tol)
        if np.any(bad):
            n = int(np.flatnonzero(bad)[0])
            raise DegeneratePairError(f"gamma_{i + 1} and gamma_{j + 1} are parallel at sample {U[:, n]}")
        br = bracket(i, j, U) if bracket is not None else commutator(fields[i], fields[j], U, h, order)
        ci, cj, res = span_fit(br, a, b)
        tol = (1e-8 if tol_span is None else tol_span) * (1.0 + np.maximum(na, nb))
        out.append(CommutatorStructure(i, j, U.T.copy(), br.T.copy(), ci, cj, res, tol))
    return out


def check_abelian(elements, samples, tol: float = 1e-8, h=None, order: int = 2):
    """True when every pairwise bracket is below ``tol`` (max-norm) at the samples."""
    fields = [_as_field(e) for e in elements]
    U = np.atleast_2d(np.asarray(samples, dtype=float)).T
    worst = 0.0
    for i, j in itertools.combinations(range(len(fields)), 2):
        br = commutator(fields[i], fields[j], U, h, order)
        worst = max(worst, float(np.max(np.abs(br))) if br.size else 0.0)
    return worst <= tol, worst


def rk4_flow(fld, u0, T, n_steps: int):
    """Fixed-step RK4 flow of ``fld`` for (per-sample) times ``T``."""
    u = np.array(u0, dtype=float)
    dt = np.asarray(T, dtype=float) / n_steps
    for _ in range(n_steps):
        k1 = fld(u)
        k2 = fld(u + 0.5 * dt * k1)
        k3 = fld(u + 0.5 * dt * k2)
        k4 = fld(u + dt * k3)
        u = u + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return u


@dataclass
class Rescaling:
    """Output of :func:`abelianize_pair`.

    ``nodes[i, j]`` is the flow of gamma_2 for time s2[j] from the flow of
    gamma_1 for time s1[i] from the base point.  ``f1``/``f2`` are tabulated on
    those nodes; :meth:`f1_at`/:meth:`f2_at` evaluate them anywhere nearby.
    """

    s1: np.ndarray
    s2: np.ndarray
    nodes: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    valid: np.ndarray
    bracket_max: float
    span_residual_max: float
    verified: bool
    trivial: bool
    warning: str = ""
    _f1: object = field(default=None, repr=False)
    _f2: object = field(default=None, repr=False)
    gamma1: object = field(default=None, repr=False)
    gamma2: object = field(default=None, repr=False)

    def f1_at(self, u):
        return self._f1(np.asarray(u, dtype=float))

    def f2_at(self, u):
        return self._f2(np.asarray(u, dtype=float))

    def rescaled(self):
        """The commuting pair (f1 gamma1, f2 gamma2) as vectorized fields."""
        g1, g2, F1, F2 = self.gamma1, self.gamma2, self._f1, self._f2
        return (lambda u: F1(u) * np.asarray(g1(u), float),
                lambda u: F2(u) * np.asarray(g2(u), float))

    def to_dict(self):
        return {
            "s1": self.s1.tolist(), "s2": self.s2.tolist(),
            "f1": np.where(self.valid, self.f1, np.nan).tolist(),
            "f2": np.where(self.valid, self.f2, np.nan).tolist(),
            "bracket_max": self.bracket_max,
            "span_residual_max": self.span_residual_max,
            "verified": self.verified, "trivial": self.trivial, "warning": self.warning,
        }


def _span_coefficients(g1, g2):
    def coeffs(U):
        a = np.asarray(g1(U), float)
        b = np.asarray(g2(U), float)
        br = commutator(g1, g2, U, order=4)
        c1, c2, _ = span_fit(br, a, b)
        return c1, c2
    return coeffs


def _log_rescaler(flow_field, which, coeffs, base, ell, n_steps):
    """ln f solving flow_field(ln f) = coefficient, with ln f = 0 on the hyperplane
    ell . (u - base) = 0.  The flow is reparametrized by eta = ell . (u - base)."""
    def rhs(U):
        g = np.asarray(flow_field(U), float)
        speed = np.einsum("a,an->n", ell, g)
        c = coeffs(U)[which]
        return g / speed, c / speed

    def log_f(U):
        U = np.asarray(U, float)
        squeeze = U.ndim == 1
        if squeeze:
            U = U[:, None]
        eta = np.einsum("a,an->n", ell, U - base[:, None])
        d = -eta / n_steps
        J = np.zeros(U.shape[1])
        for _ in range(n_steps):
            k1u, k1j = rhs(U)
            k2u, k2j = rhs(U + 0.5 * d * k1u)
            k3u, k3j = rhs(U + 0.5 * d * k2u)
            k4u, k4j = rhs(U + d * k3u)
            U = U + d * (k1u + 2 * k2u + 2 * k3u + k4u) / 6.0
            J = J + d * (k1j + 2 * k2j + 2 * k3j + k4j) / 6.0
        return -J[0] if squeeze else -J

    return log_f


def abelianize_pair(gamma1, gamma2, base_point, extents=((0.0, 1.0), (0.0, 1.0)), shape=(41, 41),
                    tol_span=None, tol_abel: float = 1e-8, flow_steps: int = 200, n_steps: int = 64):
    """Rescale a span-closed pair so that [f1 gamma1, f2 gamma2] = 0 on a leaf.

    The rescaling solves gamma2(ln f1) = h^1 and gamma1(ln f2) = -h^2 where
    [gamma1, gamma2] = h^1 gamma1 + h^2 gamma2, with f1 = 1 on a hyperplane
    transversal to gamma2 through the base point (and likewise for f2), so
    f1 = f2 = 1 at the base point.  The result is post-verified by computing
    the bracket of the rescaled fields at every leaf node.
    """
    g1, g2 = _as_field(gamma1), _as_field(gamma2)
    base = np.asarray(base_point, dtype=float)
    s1 = np.linspace(*extents[0], shape[0])
    s2 = np.linspace(*extents[1], shape[1])
    q = base.size

    row = rk4_flow(g1, np.repeat(base[:, None], s1.size, axis=1), s1, flow_steps)
    S2 = np.tile(s2, s1.size)
    start = np.repeat(row, s2.size, axis=1)
    nodes = rk4_flow(g2, start, S2, flow_steps)           # (q, n1*n2)
    grid_nodes = nodes.T.reshape(s1.size, s2.size, q)

    sine, _, _ = _wedge_sine(np.asarray(g1(nodes), float), np.asarray(g2(nodes), float))
    valid = np.isfinite(sine) & (sine > 1e-8) & np.all(np.isfinite(nodes), axis=0)
    valid = _reachable(valid.reshape(s1.size, s2.size), s1, s2)
    warning = "" if valid.all() else "gamma pair degenerates on part of the leaf; reachable subgrid returned"
    if warning:
        warnings.warn(warning)
    V = nodes[:, valid.ravel()]

    is_abelian, worst = check_abelian([g1, g2], V.T, tol_abel)
    if is_abelian:
        ones = np.ones((s1.size, s2.size))
        one = lambda u: np.ones(np.asarray(u).shape[1:]) if np.ndim(u) > 1 else 1.0  # noqa: E731
        return Rescaling(s1, s2, grid_nodes, ones, ones.copy(), valid, worst, 0.0, True, True,
                         warning, one, one, g1, g2)

    structs = check_span_condition([g1, g2], V.T, tol_span, order=4)
    span_res = structs[0].max_residual
    if not structs[0].ok:
        raise SpanConditionError(
            f"[gamma1, gamma2] leaves span{{gamma1, gamma2}} on the leaf (residual {span_res:.3e})")

    a0 = np.asarray(g1(base), float)
    b0 = np.asarray(g2(base), float)
    ell1 = b0 - a0 * (a0 @ b0) / (a0 @ a0)
    ell1 /= ell1 @ b0
    ell2 = a0 - b0 * (a0 @ b0) / (b0 @ b0)
    ell2 /= ell2 @ a0
    coeffs = _span_coefficients(g1, g2)
    log_f1 = _log_rescaler(g2, 0, coeffs, base, ell1, n_steps)
    log_f2_neg = _log_rescaler(g1, 1, coeffs, base, ell2, n_steps)

    def F1(u):
        return np.exp(log_f1(u))

    def F2(u):
        return np.exp(-log_f2_neg(u))

    f1 = np.full(s1.size * s2.size, np.nan)
    f2 = np.full(s1.size * s2.size, np.nan)
    mask = valid.ravel()
    f1[mask] = F1(V)
    f2[mask] = F2(V)

    X = lambda u: F1(u) * np.asarray(g1(u), float)  # noqa: E731
    Y = lambda u: F2(u) * np.asarray(g2(u), float)  # noqa: E731
    br = commutator(X, Y, V, order=4)
    bmax = float(np.max(np.abs(br)))
    diameter = max(1.0, float(np.hypot(np.ptp(s1), np.ptp(s2))))
    verified = bmax <= tol_abel * diameter
    return Rescaling(s1, s2, grid_nodes, f1.reshape(valid.shape), f2.reshape(valid.shape), valid,
                     bmax, span_res, verified, False, warning, F1, F2, g1, g2)


def _reachable(ok, s1, s2):
    """Keep nodes connected to the base through valid nodes along the flow lines."""
    i0 = int(np.argmin(np.abs(s1)))
    j0 = int(np.argmin(np.abs(s2)))
    reach = np.zeros_like(ok)
    row_ok = np.zeros(ok.shape[0], dtype=bool)
    for step in (1, -1):
        i = i0
        while 0 <= i < ok.shape[0] and ok[i, j0]:
            row_ok[i] = True
            i += step
    for i in np.flatnonzero(row_ok):
        for step in (1, -1):
            j = j0
            while 0 <= j < ok.shape[1] and ok[i, j]:
                reach[i, j] = True
                j += step
    return reach


@dataclass
class InvolutivityReport:
    """Fit of d lambda^s / d r^p onto span{lambda^s, lambda^p} over a surface grid."""

    pairs: list
    tolerance: float
    normalized: bool
    states: np.ndarray

    @property
    def verdict(self) -> bool:
        return all(p["ok"] for p in self.pairs)

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "tolerance": self.tolerance,
            "normalized": self.normalized,
            "pairs": [{k: v for k, v in p.items() if k not in ("alpha", "beta", "residual")}
                      | {"alpha_range": _range(p["alpha"]), "beta_range": _range(p.get("beta"))}
                      for p in self.pairs],
        }


def _range(a):
    if a is None:
        return None
    a = np.asarray(a)
    a = a[np.isfinite(a)]
    return [float(a.min()), float(a.max())] if a.size else None


def check_lambda_involutivity(covectors, surface, tol: float = 1e-6, normalized: bool = False):
    """Check d lambda^s/d r^p in span{lambda^s, lambda^p} (s != p) on the surface grid.

    With ``normalized`` the covectors are scaled to first component one and
    the one-coefficient form d lambda^s/d r^l = alpha (lambda^s - lambda^l) is
    fitted instead.
    """
    from .surface import pullback_covectors

    covs = [getattr(c, "covector", c) for c in covectors]
    table = pullback_covectors(surface, covs)                 # (m, *grid, p)
    if normalized:
        first = table[..., :1]
        if np.any(np.abs(first[np.isfinite(first)]) < 1e-14):
            raise NormalizationError("wave covector first component vanishes on the surface")
        table = table / first
    m = table.shape[0]
    k = len(surface.axes)
    if m != k:
        raise ValueError("need one covector per surface coordinate")
    pairs = []
    scale = 1.0 + np.nanmax(np.abs(table))
    for s, p in itertools.permutations(range(k), 2):
        d = np.gradient(table[s], surface.axes[p], axis=p, edge_order=2)
        D = d.reshape(-1, d.shape[-1])
        Ls = table[s].reshape(-1, d.shape[-1])
        Lp = table[p].reshape(-1, d.shape[-1])
        good = np.all(np.isfinite(D), axis=1) & np.all(np.isfinite(Ls), axis=1) & np.all(np.isfinite(Lp), axis=1)
        D, Ls, Lp = D[good], Ls[good], Lp[good]
        if normalized:
            w = Ls - Lp
            ww = np.sum(w * w, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                alpha = np.where(ww > 0, np.sum(D * w, axis=1) / ww, 0.0)
            res = np.linalg.norm(D - alpha[:, None] * w, axis=1)
            beta = None
        else:
            alpha, beta, res = span_fit(D.T, Ls.T, Lp.T)
        worst = float(res.max()) if res.size else 0.0
        pairs.append({"s": s, "p": p, "max_residual": worst, "ok": worst <= tol * scale,
                      "alpha": alpha, "beta": beta, "residual": res})
    states = surface.values.reshape(-1, surface.values.shape[-1])
    return InvolutivityReport(pairs, tol, normalized, states)
