"""Quasilinear systems A^i(u) u_i = 0 and their registry."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, ModelError
from .exprcore import as_expr

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class ModelDomain:
    """Open box constraints on the state, plus a box used to draw samples.

    ``lower``/``upper`` are strict bounds (use +-inf for none).  Samples are
    drawn uniformly from ``sample_box`` clipped into the open box.
    """

    lower: np.ndarray
    upper: np.ndarray
    sample_box: tuple
    seed: int = 0

    @classmethod
    def unbounded(cls, q, sample_box=(-1.0, 1.0), seed=0):
        lo = np.full(q, -np.inf)
        hi = np.full(q, np.inf)
        box = (np.full(q, sample_box[0], float), np.full(q, sample_box[1], float))
        return cls(lo, hi, box, seed)

    def contains(self, u) -> bool | np.ndarray:
        u = np.asarray(u, dtype=float)
        shape = (-1,) + (1,) * (u.ndim - 1)
        lo = self.lower.reshape(shape)
        hi = self.upper.reshape(shape)
        ok = np.all((u > lo) & (u < hi) & np.isfinite(u), axis=0)
        return bool(ok) if u.ndim == 1 else ok

    def sample(self, n, seed=None) -> np.ndarray:
        """Return ``n`` states as an (n, q) array, every one inside the domain."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        lo, hi = (np.asarray(b, dtype=float) for b in self.sample_box)
        pts = lo + (hi - lo) * rng.random((n, lo.size))
        bad = ~self.contains(pts.T)
        if np.any(bad):
            raise DomainError("sample box is not contained in the model domain")
        return pts


@dataclass(frozen=True)
class SystemModel:
    """A quasilinear system with ``p`` independent and ``q`` dependent variables.

    ``matrices(u)`` returns the stack A^1(u), ..., A^p(u) with shape (p, q, q).
    ``constraint(u, du)`` (optional) returns side-constraint residuals given the
    state and its (q, p) derivative matrix, e.g. the MHD Gauss law.
    """

    name: str
    p: int
    q: int
    matrices: Callable[[np.ndarray], np.ndarray]
    domain: ModelDomain
    var_names: tuple = ()
    coord_names: tuple = ()
    params: dict = field(default_factory=dict)
    constraint: Callable | None = None

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ModelError("p and q must be positive")

    def A(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if not self.domain.contains(u):
            raise DomainError(f"state {u} outside the domain of model {self.name}")
        mats = np.asarray(self.matrices(u), dtype=float)
        if not np.all(np.isfinite(mats)):
            raise DomainError(f"non-finite coefficient matrix at {u}")
        return mats

    def residual(self, u, du) -> np.ndarray:
        """A^i(u) u_i for a (q, p) derivative matrix ``du``."""
        mats = self.A(u)
        return np.einsum("iab,bi->a", mats, np.asarray(du, dtype=float))


def _burgers():
    def matrices(u):
        return np.array([[[1.0]], [[u[0]]]])

    return SystemModel(
        "burgers", 2, 1, matrices, ModelDomain.unbounded(1, (-2.0, 2.0)),
        var_names=("u",), coord_names=("t", "x"),
    )


def _barotropic(n):
    n = int(n)
    if n < 1:
        raise ModelError("barotropic model needs n >= 1")
    q = n + 1

    def matrices(u):
        vel, rho = u[:n], u[n]
        mats = np.zeros((n + 1, q, q))
        mats[0] = np.eye(q)
        for b in range(n):
            m = mats[b + 1]
            m[np.arange(q), np.arange(q)] = vel[b]
            m[n, b] = rho
        return mats

    lower = np.full(q, -np.inf)
    lower[n] = 0.0
    box_lo = np.full(q, -2.0)
    box_hi = np.full(q, 2.0)
    box_lo[n], box_hi[n] = 0.2, 5.0
    dom = ModelDomain(lower, np.full(q, np.inf), (box_lo, box_hi))
    names = tuple(f"u{a + 1}" for a in range(n)) + ("rho",)
    coords = ("t",) + tuple(f"x{a + 1}" for a in range(n))
    return SystemModel("barotropic", n + 1, q, matrices, dom, names, coords, {"n": n})


def _mhd(gamma):
    gamma = float(gamma)
    if gamma <= 0:
        raise ModelError("polytropic exponent must be positive")

    # u = (rho, p, v1, v2, v3, H1, H2, H3); rows: mass, pressure, momentum, induction
    def matrices(u):
        rho, p = u[0], u[1]
        v = u[2:5]
        H = u[5:8]
        mats = np.zeros((4, 8, 8))
        mats[0] = np.eye(8)
        for j in range(3):
            m = mats[j + 1]
            m[np.arange(8), np.arange(8)] = v[j]
            m[0, 2 + j] += rho
            m[1, 2 + j] += gamma * p
            m[2 + j, 1] += 1.0 / rho
            for a in range(3):
                m[2 + j, 5 + a] += H[a] / (FOUR_PI * rho)
                m[2 + a, 5 + a] -= H[j] / (FOUR_PI * rho)
                m[5 + a, 5 + j] -= v[a]
                m[5 + a, 2 + j] += H[a]
                m[5 + a, 2 + a] -= H[j]
        return mats

    def gauss(u, du):
        return np.array([du[5, 1] + du[6, 2] + du[7, 3]])

    lower = np.full(8, -np.inf)
    lower[0] = lower[1] = 0.0
    box_lo = np.array([0.5, 0.5, -1, -1, -1, -2, -2, -2], float)
    box_hi = np.array([3.0, 3.0, 1, 1, 1, 2, 2, 2], float)
    dom = ModelDomain(lower, np.full(8, np.inf), (box_lo, box_hi))
    names = ("rho", "p", "v1", "v2", "v3", "H1", "H2", "H3")
    return SystemModel(
        "mhd", 4, 8, matrices, dom, names, ("t", "x1", "x2", "x3"),
        {"gamma": gamma}, constraint=gauss,
    )


def _custom(p, q, matrices, domain=None):
    p, q = int(p), int(q)
    if p < 1 or q < 1:
        raise ModelError("custom model needs p >= 1 and q >= 1")
    try:
        grid = [[[as_expr(e) for e in row] for row in mat] for mat in matrices]
    except TypeError as exc:
        raise ModelError(f"malformed custom matrices: {exc}") from None
    if len(grid) != p or any(len(m) != q or any(len(r) != q for r in m) for m in grid):
        raise ModelError(f"custom model needs {p} matrices of shape {q}x{q}")
    names = tuple(f"u{a + 1}" for a in range(q))
    allowed = set(names)
    for mat in grid:
        for row in mat:
            for e in row:
                if not e.free_vars <= allowed:
                    raise ModelError(f"entry {e.source!r} uses variables outside {sorted(allowed)}")

    def mats(u):
        env = {n: u[a] for a, n in enumerate(names)}
        return np.array([[[e.eval(env) for e in row] for row in m] for m in grid], dtype=float)

    if domain is None:
        domain = ModelDomain.unbounded(q)
    return SystemModel("custom", p, q, mats, domain, names, tuple(f"x{i + 1}" for i in range(p)))


def registry_get(name: str, params: dict | None = None, **kwargs) -> SystemModel:
    """Look up a built-in model or assemble a custom one.

    Names: ``burgers``, ``barotropic`` (param ``n``), ``mhd`` (param ``gamma``,
    default 5/3), ``custom`` (params ``p``, ``q``, ``matrices`` of Expr strings
    in ``u1..uq``).
    """
    params = dict(params or {})
    params.update(kwargs)
    if name == "burgers":
        return _burgers()
    if name == "barotropic":
        if "n" not in params:
            raise ModelError("barotropic model requires parameter n")
        return _barotropic(params["n"])
    if name == "mhd":
        return _mhd(params.get("gamma", 5.0 / 3.0))
    if name == "custom":
        try:
            return _custom(params["p"], params["q"], params["matrices"], params.get("domain"))
        except KeyError as exc:
            raise ModelError(f"custom model requires parameter {exc.args[0]}") from None
    raise ModelError(f"unknown model '{name}'")


def default_step(u) -> np.ndarray | float:
    u = np.asarray(u, dtype=float)
    return 1e-5 * np.maximum(1.0, np.max(np.abs(u), axis=0))


def jacobian_u(field, u, h=None, domain: ModelDomain | None = None, order: int = 2):
    """Central-difference Jacobian d field^a / d u^b.

    ``u`` may be (q,) or (q, N); the result is (m, q) or (m, q, N).  With
    ``order=4`` the five-point stencil is used.
    """
    u = np.asarray(u, dtype=float)
    if h is None:
        h = default_step(u) if order == 2 else 1e-3 * np.maximum(1.0, np.max(np.abs(u), axis=0))
    h = np.asarray(h, dtype=float)
    q = u.shape[0]
    cols = []
    for b in range(q):
        e = np.zeros_like(u)
        e[b] = h
        if order == 2:
            plus, minus = u + e, u - e
            if domain is not None and not (np.all(domain.contains(plus)) and np.all(domain.contains(minus))):
                raise DomainError(f"finite-difference probe left the domain near {u}")
            col = (np.asarray(field(plus), float) - np.asarray(field(minus), float)) / (2.0 * h)
        elif order == 4:
            probes = [u + 2 * e, u + e, u - e, u - 2 * e]
            if domain is not None and not all(np.all(domain.contains(pt)) for pt in probes):
                raise DomainError(f"finite-difference probe left the domain near {u}")
            f2, f1, fm1, fm2 = (np.asarray(field(pt), float) for pt in probes)
            col = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h)
        else:
            raise ValueError("order must be 2 or 4")
        cols.append(col)
    return np.stack(cols, axis=1)
