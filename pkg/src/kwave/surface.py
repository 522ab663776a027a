"""Integration of the solution surface df/dr^s = gamma_s(f) on a Riemann-invariant grid."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline, RegularGridInterpolator

from .errors import DomainError, PathIndependenceError
from .involution import _as_field, check_abelian, rk4_flow


def _rk4_step(fld, u, h):
    k1 = fld(u)
    k2 = fld(u + 0.5 * h * k1)
    k3 = fld(u + 0.5 * h * k2)
    k4 = fld(u + h * k3)
    return u + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _adaptive_segment(fld, u, h, err_tol, depth=0, max_depth=30):
    """Advance by ``h`` with step doubling: accept when |full - two halves| / 15 <= err_tol."""
    if err_tol is None:
        return _rk4_step(fld, u, h), 1
    full = _rk4_step(fld, u, h)
    half = _rk4_step(fld, _rk4_step(fld, u, 0.5 * h), 0.5 * h)
    diff = np.abs(full - half)
    err = np.nanmax(diff) / 15.0 if np.any(np.isfinite(diff)) else 0.0
    if err <= err_tol or depth >= max_depth:
        return half, 2
    u_mid, n1 = _adaptive_segment(fld, u, 0.5 * h, err_tol, depth + 1, max_depth)
    u_end, n2 = _adaptive_segment(fld, u_mid, 0.5 * h, err_tol, depth + 1, max_depth)
    return u_end, n1 + n2


def _sweep_axis(fld, start, axis, err_tol):
    """Integrate from r = 0 to every node of ``axis`` for a batch of start states (q, M).

    Returns (n_axis, q, M) and the number of RK4 steps taken.
    """
    axis = np.asarray(axis, dtype=float)
    out = np.empty((axis.size,) + start.shape)
    steps = 0
    for direction in (1, -1):
        idx = np.flatnonzero(axis >= 0) if direction == 1 else np.flatnonzero(axis < 0)[::-1]
        u = start.copy()
        r = 0.0
        for i in idx:
            h = axis[i] - r
            if h != 0.0:
                with np.errstate(all="ignore"):
                    u, n = _adaptive_segment(fld, u, h, err_tol)
                steps += n
            out[i] = u
            r = axis[i]
    return out, steps


@dataclass(frozen=True)
class SurfaceMap:
    """Tabulated surface u = f(r^1, ..., r^k) on a tensor grid.

    ``values`` has shape (n_1, ..., n_k, q); ``valid`` marks nodes inside the
    model domain.  Invalid nodes hold NaN and are never interpolated.
    """

    axes: tuple
    values: np.ndarray
    valid: np.ndarray
    base: np.ndarray
    provenance: dict = field(default_factory=dict)
    audit: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.axes)

    @property
    def q(self) -> int:
        return self.values.shape[-1]

    def _splines(self):
        cache = self.__dict__.get("_cache")
        if cache is None:
            filled = np.where(self.valid[..., None], self.values, 0.0)
            if self.k == 1:
                cache = CubicSpline(self.axes[0], filled, axis=0)
            elif self.k == 2:
                cache = [RectBivariateSpline(self.axes[0], self.axes[1], filled[..., a], kx=3, ky=3, s=0)
                         for a in range(self.q)]
            else:
                cache = RegularGridInterpolator(self.axes, filled, method="cubic")
            object.__setattr__(self, "_cache", cache)
        return cache

    def _mask(self, r):
        """False where the query lies outside the grid or in a cell touching an invalid node."""
        ok = np.ones(r.shape[1], dtype=bool)
        cells = []
        for s, ax in enumerate(self.axes):
            ok &= (r[s] >= ax[0] - 1e-12) & (r[s] <= ax[-1] + 1e-12)
            cells.append(np.clip(np.searchsorted(ax, r[s]) - 1, 0, ax.size - 2))
        if not self.valid.all():
            for corner in np.ndindex(*(2,) * self.k):
                ok &= self.valid[tuple(c + d for c, d in zip(cells, corner))]
        return ok

    def __call__(self, r):
        """Interpolated u at r with shape (k,) or (k, N)."""
        r = np.asarray(r, dtype=float)
        single = r.ndim == 1
        R = r.reshape(self.k, -1)
        sp = self._splines()
        if self.k == 1:
            out = sp(R[0]).T
        elif self.k == 2:
            out = np.array([s.ev(R[0], R[1]) for s in sp])
        else:
            out = sp(R.T).T
        out = np.where(self._mask(R), out, np.nan)
        return out[:, 0] if single else out

    def jacobian(self, r):
        """df/dr as (q, k) (or (q, k, N)) from the interpolant."""
        r = np.asarray(r, dtype=float)
        single = r.ndim == 1
        R = r.reshape(self.k, -1)
        sp = self._splines()
        if self.k == 1:
            J = sp(R[0], 1).T[:, None, :]
        elif self.k == 2:
            J = np.array([[s.ev(R[0], R[1], dx=1), s.ev(R[0], R[1], dy=1)] for s in sp])
        else:
            h = 1e-5
            cols = []
            for s in range(self.k):
                e = np.zeros_like(R)
                e[s] = h
                cols.append((self(R + e) - self(R - e)) / (2 * h))
            J = np.stack(cols, axis=1)
        J = np.where(self._mask(R), J, np.nan)
        return J[..., 0] if single else J

    def grid_points(self) -> np.ndarray:
        """All node coordinates as (n_nodes, k), row-major."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_csv(self, path, var_names=None):
        names = list(var_names) if var_names else [f"u{a + 1}" for a in range(self.q)]
        header = [f"r{s + 1}" for s in range(self.k)] + names + ["valid"]
        pts = self.grid_points()
        vals = self.values.reshape(-1, self.q)
        ok = self.valid.ravel()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r, u, v in zip(pts, vals, ok):
                w.writerow([repr(float(x)) for x in r] + [repr(float(x)) for x in u] + [int(v)])


def integrate_surface(elements, base, axes, err_tol: float | None = 1e-9, audit_frac: float = 0.1,
                      tol_path: float = 1e-7, seed: int = 0, domain=None, raise_on_path: bool = True):
    """Build S: u = f(r) by integrating df/dr^s = gamma_s(f) from f(0) = base.

    Nodes are filled row-major: the r^1 axis from the base, then r^2 lines
    from every r^1 node, and so on.  Each grid segment is one RK4 step,
    halved while the step-doubling error estimate exceeds ``err_tol``.  A
    random ``audit_frac`` of nodes is recomputed with the axis order reversed;
    the worst discrepancy must stay below ``tol_path``.
    """
    fields = [_as_field(e) for e in elements]
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    if len(fields) != len(axes):
        raise ValueError("need one grid axis per element")
    for ax in axes:
        if ax.ndim != 1 or ax.size < 2 or np.any(np.diff(ax) <= 0):
            raise ValueError("grid axes must be strictly increasing")
        if not ax[0] <= 0.0 <= ax[-1]:
            raise ValueError("every grid axis must contain r = 0")
    base = np.asarray(base, dtype=float)
    q = base.size
    if domain is not None and not domain.contains(base):
        raise DomainError(f"base point {base} outside the model domain")

    abelian_ok, abelian_res = check_abelian(fields, base[None, :], tol=1e-7)

    cur = base[:, None]                                   # (q, M)
    shape = ()
    steps = 0
    for s, fld in enumerate(fields):
        out, n = _sweep_axis(fld, cur, axes[s], err_tol)   # (n_s, q, M)
        steps += n
        out = out.reshape((axes[s].size, q) + shape)
        out = np.moveaxis(out, 0, -1)                      # (q, *shape, n_s)
        shape = shape + (axes[s].size,)
        cur = out.reshape(q, -1)
    values = np.moveaxis(cur.reshape((q,) + shape), 0, -1).copy()

    valid = np.all(np.isfinite(values), axis=-1)
    if domain is not None:
        valid &= domain.contains(np.moveaxis(values, -1, 0))
    values[~valid] = np.nan

    audit = _audit(fields, base, axes, values, valid, audit_frac, seed)
    if raise_on_path and audit["max_residual"] > tol_path:
        raise PathIndependenceError(
            f"path-independence residual {audit['max_residual']:.3e} exceeds {tol_path:.1e}",
            audit["worst_node"], audit["max_residual"])
    audit["tol_path"] = tol_path
    provenance = {
        "elements": [getattr(e, "label", "") or f"gamma_{i + 1}" for i, e in enumerate(elements)],
        "err_tol": err_tol, "rk4_steps": steps,
        "abelian_precheck": {"ok": bool(abelian_ok), "max_bracket": abelian_res},
    }
    return SurfaceMap(axes, values, valid, base, provenance, audit)


def _audit(fields, base, axes, values, valid, frac, seed):
    n_nodes = values[..., 0].size
    rng = np.random.default_rng(seed)
    m = max(1, int(round(frac * n_nodes)))
    flat = rng.choice(n_nodes, size=min(m, n_nodes), replace=False)
    flat = flat[valid.ravel()[flat]]
    if flat.size == 0:
        return {"nodes": 0, "max_residual": 0.0, "worst_node": None}
    idx = np.unravel_index(flat, valid.shape)
    coords = [axes[s][idx[s]] for s in range(len(axes))]
    hmin = min(float(np.min(np.diff(a))) for a in axes)
    u = np.repeat(base[:, None], flat.size, axis=1)
    with np.errstate(all="ignore"):
        for s in reversed(range(len(axes))):
            T = coords[s]
            n_steps = max(1, int(np.ceil(np.max(np.abs(T)) / hmin)))
            u = rk4_flow(fields[s], u, T, 2 * n_steps)
    ref = values.reshape(-1, values.shape[-1])[flat].T
    res = np.max(np.abs(u - ref), axis=0)
    res = np.where(np.isfinite(res), res, np.inf)
    w = int(np.argmax(res))
    return {
        "nodes": int(flat.size),
        "max_residual": float(res[w]),
        "worst_node": [float(c[w]) for c in coords],
    }


def pullback_covectors(surface: SurfaceMap, covectors) -> np.ndarray:
    """Evaluate each covector at every node: returns (m, n_1, ..., n_k, p); NaN at invalid nodes."""
    U = np.moveaxis(surface.values, -1, 0).reshape(surface.q, -1)
    ok = surface.valid.ravel()
    tables = []
    for lam in covectors:
        lam = getattr(lam, "covector", lam)
        vals = np.asarray(lam(U[:, ok]), dtype=float)
        full = np.full((vals.shape[0], U.shape[1]), np.nan)
        full[:, ok] = vals
        tables.append(np.moveaxis(full.reshape((vals.shape[0],) + surface.valid.shape), 0, -1))
    return np.array(tables)
