"""Wave-relation algebra: directional matrices, kernels, wave vectors, symmetry fields."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, HyperbolicityError, NormalizationError, SingularLambdaError
from .exprcore import compile_vector
from .model import SystemModel

TOL_RANK = 1e-10


@dataclass(frozen=True)
class WaveCovector:
    """A wave covector field u -> lambda(u) in R^p.

    ``normalization='first-one'`` divides by the first component so that
    lambda = (1, lambda_2, ..., lambda_p).
    """

    func: Callable
    normalization: str = "raw"
    name: str = ""

    def __call__(self, u):
        lam = np.asarray(self.func(u), dtype=float)
        if self.normalization == "first-one":
            first = lam[0]
            if np.any(np.abs(first) < 1e-14):
                raise NormalizationError("first component of the wave covector vanishes")
            lam = lam / first
        return lam

    def normalized(self) -> "WaveCovector":
        return WaveCovector(self.func, "first-one", self.name)

    @classmethod
    def constant(cls, values, name=""):
        values = np.asarray(values, dtype=float)

        def func(u):
            u = np.asarray(u)
            return np.broadcast_to(values.reshape((-1,) + (1,) * (u.ndim - 1)),
                                   values.shape + u.shape[1:]).copy()

        return cls(func, name=name)

    @classmethod
    def from_exprs(cls, exprs, q, name=""):
        return cls(compile_vector(exprs, [f"u{a + 1}" for a in range(q)]), name=name)


@dataclass(frozen=True)
class SimpleElement:
    """A pair (gamma, lambda) satisfying the wave relation (lambda_i A^i) gamma = 0."""

    gamma: Callable
    covector: WaveCovector
    label: str = ""
    info: dict = field(default_factory=dict)

    def wave_residual(self, model: SystemModel, u) -> float:
        M = directional_matrix(model, self.covector, u)
        g = np.asarray(self.gamma(u), dtype=float)
        return float(np.max(np.abs(M @ g))) if g.size else 0.0


def gamma_from_exprs(exprs, q):
    return compile_vector(exprs, [f"u{a + 1}" for a in range(q)])


def directional_matrix(model: SystemModel, lam, u) -> np.ndarray:
    """Sum_i lambda_i(u) A^i(u)."""
    u = np.asarray(u, dtype=float)
    lv = np.asarray(lam(u) if callable(lam) else lam, dtype=float)
    if lv.shape != (model.p,):
        raise ValueError(f"covector must have length p={model.p}")
    if not np.any(lv):
        raise ValueError("wave covector must be nonzero")
    return np.tensordot(lv, model.A(u), axes=1)


def _sign_fix(vectors):
    out = np.array(vectors, dtype=float)
    for row in out:
        nz = np.flatnonzero(np.abs(row) > 1e-14)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return out


def kernel(M, tol_rank: float = TOL_RANK) -> np.ndarray:
    """Orthonormal null-space basis of ``M`` as rows of an (m, q) array."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise DomainError("matrix has non-finite entries")
    q = M.shape[1]
    _, s, vh = np.linalg.svd(M)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return np.eye(q)
    sv = np.zeros(q)
    sv[: s.size] = s
    basis = vh[sv <= tol_rank * smax]
    return _sign_fix(basis)


@dataclass(frozen=True)
class EigenWave:
    alpha: float
    covector: np.ndarray
    gammas: np.ndarray
    algebraic_multiplicity: int
    deficient: bool


def eigen_wave_vectors(model: SystemModel, u, tol_rank: float = TOL_RANK, tol_imag: float = 1e-10):
    """Eigen-decomposition of A = (A^t)^{-1} A^x for a two-variable system.

    Returns a list of :class:`EigenWave` sorted by eigenvalue.  Each carries the
    wave covector (-alpha, 1) and an eigen-direction basis; ``deficient`` is set
    when the geometric multiplicity is below the algebraic one.
    """
    if model.p != 2:
        raise ValueError("eigen_wave_vectors needs a model in the form u_t + A(u) u_x = 0 (p = 2)")
    mats = model.A(u)
    A = np.linalg.solve(mats[0], mats[1])
    scale = 1.0 + np.linalg.norm(A)
    w = np.linalg.eigvals(A)
    cplx = [complex(z) for z in w if abs(z.imag) > tol_imag * scale]
    if cplx:
        raise HyperbolicityError(f"complex characteristic speeds {cplx}", cplx)
    w = np.sort(w.real)
    # Defective eigenvalues are perturbed by ~sqrt(eps); cluster generously.
    cluster_tol = 1e-6 * scale
    clusters = []
    for value in w:
        if clusters and value - clusters[-1][-1] <= cluster_tol:
            clusters[-1].append(value)
        else:
            clusters.append([value])
    waves = []
    q = A.shape[0]
    for c in clusters:
        alpha = float(np.mean(c))
        spread = (max(c) - min(c)) / scale
        tol = max(tol_rank, 10.0 * spread, 1e-8 if len(c) > 1 else tol_rank)
        basis = kernel(A - alpha * np.eye(q), tol)
        waves.append(EigenWave(alpha, np.array([-alpha, 1.0]), basis, len(c), basis.shape[0] < len(c)))
    return waves


def eigen_elements(model: SystemModel, family: int, u):
    """SimpleElement for the ``family``-th eigenvalue (sorted) of a p = 2 model.

    The element is evaluated pointwise (gamma and lambda recomputed at each u).
    """
    def lam(v):
        return eigen_wave_vectors(model, v)[family].covector

    def gamma(v):
        return eigen_wave_vectors(model, v)[family].gammas[0]

    return SimpleElement(gamma, WaveCovector(lam), label=f"eigen-{family}")


def riemann_invariant(lam, x, u) -> float:
    """r(x, u) = lambda_i(u) x^i."""
    lv = np.asarray(lam(u) if callable(lam) else lam, dtype=float)
    return float(np.dot(lv, np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class SymmetryFields:
    xi: np.ndarray
    lambda_columns: tuple
    free_columns: tuple
    condition: float


def symmetry_fields(lamset, u, max_cond: float = 1e8) -> SymmetryFields:
    """The p - k fields X_a = d/dx^a - sum (Lambda^{-1})^l_j lambda^j_a d/dx^l.

    ``lamset`` is a list of covector callables (or a (k, p) array).  The
    Lambda block is taken from the last k columns when well conditioned;
    otherwise column subsets are searched in order and the choice recorded.
    Each returned row xi satisfies lambda^j . xi = 0.
    """
    if callable(lamset):
        L = np.atleast_2d(np.asarray(lamset(u), dtype=float))
    else:
        L = np.array([np.asarray(l(u) if callable(l) else l, dtype=float) for l in lamset])
    k, p = L.shape
    if k > p:
        raise ValueError("more covectors than independent variables")
    if k == p:
        return SymmetryFields(np.zeros((0, p)), tuple(range(p)), (), float(np.linalg.cond(L)))
    default = tuple(range(p - k, p))
    candidates = [default] + [c for c in itertools.combinations(range(p), k) if c != default]
    scale = np.linalg.norm(L, 2)
    for cols in candidates:
        Lam = L[:, cols]
        sv = np.linalg.svd(Lam, compute_uv=False)
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        # the block must be well conditioned and not negligible against the full matrix
        if not np.isfinite(cond) or cond >= max_cond or sv[-1] * max_cond < scale:
            continue
        free = tuple(c for c in range(p) if c not in cols)
        coeff = np.linalg.solve(Lam, L[:, free])
        xi = np.zeros((len(free), p))
        for a, col in enumerate(free):
            xi[a, col] = 1.0
            xi[a, list(cols)] = -coeff[:, a]
        return SymmetryFields(xi, cols, free, float(cond))
    raise SingularLambdaError("no k x k submatrix of the covector matrix has condition number < 1e8")


def independence_report(lamset, u, tol: float = 1e-8) -> dict:
    """Pairwise independence check; dependent triples are flagged, not fatal."""
    L = np.array([np.asarray(l(u) if callable(l) else l, dtype=float) for l in lamset])
    k = L.shape[0]
    pairs_ok = True
    for i, j in itertools.combinations(range(k), 2):
        s = np.linalg.svd(L[[i, j]], compute_uv=False)
        if s[-1] <= tol * s[0]:
            pairs_ok = False
    flagged = []
    for trip in itertools.combinations(range(k), 3):
        s = np.linalg.svd(L[list(trip)], compute_uv=False)
        if s[-1] <= tol * s[0]:
            flagged.append(trip)
    return {"pairwise_independent": pairs_ok, "dependent_triples": flagged}
