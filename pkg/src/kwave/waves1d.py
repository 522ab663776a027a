"""Two-wave interaction for the diagonal system r^s_t + nu_s(r^1, r^2) r^s_x = 0."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .errors import CFLError, InitialDataError
from .exprcore import as_expr

EPS_SUPP = 1e-9


def _speed(spec):
    if callable(spec) and not hasattr(spec, "root"):
        return spec
    e = as_expr(spec)
    extra = e.free_vars - {"r1", "r2"}
    if extra:
        raise InitialDataError(f"speed {e.source!r} uses unknown variables {sorted(extra)}")

    def nu(r1, r2):
        r1 = np.asarray(r1, dtype=float)
        out = e.eval({"r1": r1, "r2": np.asarray(r2, dtype=float)})
        return np.broadcast_to(out, np.broadcast(r1, r2).shape).astype(float)

    nu.expr = e
    return nu


@dataclass(frozen=True)
class DiagonalSystem:
    """Speeds nu_1, nu_2 (Expr strings in r1, r2, or vectorized callables) and background r0."""

    nu1: object
    nu2: object
    r0: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "_n1", _speed(self.nu1))
        object.__setattr__(self, "_n2", _speed(self.nu2))

    def speeds(self, r1, r2):
        return self._n1(r1, r2), self._n2(r1, r2)

    def self_coupled(self, rng1=(-1.0, 1.0), rng2=(-1.0, 1.0), h=1e-6) -> tuple:
        """Whether d nu_s / d r^s is numerically nonzero on the given value box."""
        a = np.linspace(*rng1, 9)
        b = np.linspace(*rng2, 9)
        A, B = np.meshgrid(a, b, indexing="ij")
        d1 = (self._n1(A + h, B) - self._n1(A - h, B)) / (2 * h)
        d2 = (self._n2(A, B + h) - self._n2(A, B - h)) / (2 * h)
        return bool(np.max(np.abs(d1)) > 1e-8), bool(np.max(np.abs(d2)) > 1e-8)


def bump(s):
    """C-infinity bump on (-1, 1) with peak 1 at s = 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
    return out


@dataclass(frozen=True)
class Profile:
    """r(x) = background + amplitude * shape(s), s mapping [a, b] onto [-1, 1]; background outside."""

    support: tuple
    amplitude: float = 0.2
    background: float = 0.0
    shape: Callable | None = None

    def __post_init__(self):
        a, b = self.support
        if not a < b:
            raise InitialDataError("profile support must satisfy a < b", "support")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.support
        s = (2.0 * x - (a + b)) / (b - a)
        inside = np.abs(s) < 1.0
        out = np.full(x.shape, float(self.background))
        fn = bump if self.shape is None else self.shape
        if np.any(inside):
            out[inside] += self.amplitude * np.asarray(fn(s[inside]), dtype=float)
        return out

    @classmethod
    def from_expr(cls, support, amplitude, background, shape_expr):
        e = as_expr(shape_expr)
        if not e.free_vars <= {"s"}:
            raise InitialDataError(f"profile shape {e.source!r} must be an expression in s", "shape")
        return cls(tuple(support), amplitude, background, lambda s: e.eval({"s": s}))


@dataclass(frozen=True)
class InitialData:
    """Profiles of r^1, r^2 at time t0, sampled on a uniform grid ``x``."""

    x: np.ndarray
    profiles: tuple
    t0: float = 0.0

    @property
    def r(self) -> np.ndarray:
        return np.array([p(self.x) for p in self.profiles])


def detect_supports(x, r, eps_rel: float = EPS_SUPP, max_gap: int = 2):
    """Intervals where |dr/dx| > eps_rel * max|dr/dx|, merging gaps of at most ``max_gap`` cells."""
    d = np.abs(np.gradient(r, x))
    m = float(np.max(d))
    if m == 0.0:
        return []
    idx = np.flatnonzero(d > eps_rel * m)
    runs = []
    start = prev = idx[0]
    for i in idx[1:]:
        if i - prev > max_gap + 1:
            runs.append((start, prev))
            start = i
        prev = i
    runs.append((start, prev))
    return [(float(x[a]), float(x[b])) for a, b in runs]


def validate_initial_data(sys: DiagonalSystem, data: InitialData, eps_rel: float = EPS_SUPP,
                          n_values: int = 64) -> dict:
    """Check the support ordering a1 < b1 < a2 < b2 and the gap nu_1 - nu_2 >= c > 0."""
    r = data.r
    supports = [detect_supports(data.x, r[s], eps_rel) for s in range(2)]
    violations = []
    for s in range(2):
        if len(supports[s]) != 1:
            violations.append(f"r{s + 1}: expected one support interval, found {len(supports[s])}")
    if not violations:
        (a1, b1), (a2, b2) = supports[0][0], supports[1][0]
        if not (a1 < b1 < a2 < b2):
            violations.append("support ordering/disjointness a1 < b1 < a2 < b2 violated")
    v1 = np.linspace(r[0].min(), r[0].max(), n_values)
    v2 = np.linspace(r[1].min(), r[1].max(), n_values)
    A, B = np.meshgrid(v1, v2, indexing="ij")
    n1, n2 = sys.speeds(A, B)
    c = float(np.min(n1 - n2))
    if not c > 0.0:
        violations.append(f"gap condition violated: min(nu1 - nu2) = {c:.6g} <= 0")
    return {"valid": not violations, "violations": violations, "supports": supports, "c": c}


@dataclass
class SimResult:
    """Space-time record of a two-wave run."""

    scheme: str
    times: np.ndarray
    x: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    t1: float | None
    t2: float | None
    t_final: float
    supports: list
    halted: bool = False
    halt_reason: str = ""
    markers: dict = field(default_factory=dict)
    invariance_error: float | None = None
    system: DiagonalSystem | None = None
    data: InitialData | None = None

    def to_dict(self):
        return {
            "scheme": self.scheme, "t1": self.t1, "t2": self.t2, "t_final": self.t_final,
            "halted": self.halted, "halt_reason": self.halt_reason,
            "invariance_error": self.invariance_error,
            "supports": self.supports,
        }

    def write_frames(self, directory, prefix="frame"):
        paths = []
        for n, t in enumerate(self.times):
            path = f"{directory}/{prefix}_{n:04d}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "x", "r1", "r2"])
                for x, a, b in zip(self.x, self.r1[n], self.r2[n]):
                    w.writerow([repr(float(t)), repr(float(x)), repr(float(a)), repr(float(b))])
            paths.append(path)
        return paths

    def write_traces(self, path):
        """Characteristic traces: t, family, marker index, x, r."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "family", "marker", "x", "r"])
            if not self.markers:
                return
            for s in (1, 2):
                X = self.markers[f"trace{s}"]
                R = self.markers[f"R{s}"]
                sel = np.linspace(0, R.size - 1, min(R.size, 21)).astype(int)
                for n, t in enumerate(self.markers["trace_times"]):
                    for j in sel:
                        w.writerow([repr(float(t)), s, int(j), repr(float(X[n, j])), repr(float(R[j]))])


def _field_from_markers(X, R, background):
    """Callable x -> r built from ordered markers; background outside the marker span."""
    if X.size > 3 and np.all(np.diff(X) > 0):
        sp = CubicSpline(X, R)
    else:
        order = np.argsort(X, kind="stable")
        Xs, Rs = X[order], R[order]
        sp = lambda z: np.interp(z, Xs, Rs)  # noqa: E731
    lo, hi = X.min(), X.max()

    def f(z):
        z = np.asarray(z, dtype=float)
        out = np.full(z.shape, float(background))
        inside = (z >= lo) & (z <= hi)
        if np.any(inside):
            out[inside] = sp(z[inside])
        return out

    return f


def simulate(sys: DiagonalSystem, data: InitialData, t_end: float, scheme: str = "characteristics",
             cfl: float = 0.5, n_frames: int = 41, n_markers: int = 2001, eps_supp: float | None = None,
             rtol: float = 1e-12, validate: bool = True) -> SimResult:
    """Advance the initial data to ``t_end`` with markers or with first-order upwind."""
    if not 0.0 < cfl <= 0.9:
        raise CFLError(f"cfl must lie in (0, 0.9], got {cfl}")
    if validate:
        rep = validate_initial_data(sys, data)
        if not rep["valid"]:
            raise InitialDataError("; ".join(rep["violations"]), rep["violations"][0])
    if t_end <= data.t0:
        raise ValueError("t_end must exceed the initial time")
    if scheme == "characteristics":
        return _simulate_markers(sys, data, t_end, cfl, n_frames, n_markers,
                                 EPS_SUPP if eps_supp is None else eps_supp, rtol)
    if scheme == "upwind":
        return _simulate_upwind(sys, data, t_end, cfl, n_frames, 1e-4 if eps_supp is None else eps_supp)
    raise ValueError(f"unknown scheme '{scheme}'")


def _simulate_markers(sys, data, t_end, cfl, n_frames, n_markers, eps_supp, rtol):
    r0 = sys.r0
    P1, P2 = data.profiles
    X1_0 = np.linspace(*P1.support, n_markers)
    X2_0 = np.linspace(*P2.support, n_markers)
    R1 = P1(X1_0)
    R2 = P2(X2_0)
    # probes sit between markers and carry no value: they test transport of the interpolated field
    Q1_0 = 0.5 * (X1_0[:-1] + X1_0[1:])[::10]
    Q2_0 = 0.5 * (X2_0[:-1] + X2_0[1:])[::10]
    n, m = n_markers, Q1_0.size
    dx0 = min(np.diff(X1_0)[0], np.diff(X2_0)[0])

    def split(y):
        return y[:n], y[n:2 * n], y[2 * n:2 * n + m], y[2 * n + m:]

    def rhs(t, y):
        X1, X2, Q1, Q2 = split(y)
        f1 = _field_from_markers(X1, R1, r0[0])
        f2 = _field_from_markers(X2, R2, r0[1])
        v1, _ = sys.speeds(R1, f2(X1))
        _, v2 = sys.speeds(f1(X2), R2)
        w1, _ = sys.speeds(f1(Q1), f2(Q1))
        _, w2 = sys.speeds(f1(Q2), f2(Q2))
        return np.concatenate([v1, v2, w1, w2])

    def contact(t, y):
        X1, X2, _, _ = split(y)
        return X2[0] - X1[-1]

    def separation(t, y):
        X1, X2, _, _ = split(y)
        return X2[-1] - X1[0]

    def crossing(t, y):
        X1, X2, _, _ = split(y)
        return min(np.min(np.diff(X1)), np.min(np.diff(X2))) - 1e-6 * dx0

    contact.direction = -1
    separation.direction = -1
    crossing.terminal = True
    crossing.direction = -1

    vmax = float(np.max(np.abs(np.concatenate(sys.speeds(R1, R2))))) + 1e-12
    h_grid = float(np.min(np.diff(data.x)))
    times = np.linspace(data.t0, t_end, n_frames)
    y0 = np.concatenate([X1_0, X2_0, Q1_0, Q2_0])
    sol = solve_ivp(rhs, (data.t0, t_end), y0, method="DOP853", t_eval=times, rtol=rtol, atol=rtol,
                    events=[contact, separation, crossing], max_step=max(cfl * h_grid / vmax, 1e-3) * 50)
    t1 = float(sol.t_events[0][0]) if sol.t_events[0].size else None
    t2 = float(sol.t_events[1][0]) if sol.t_events[1].size else None
    halted = bool(sol.t_events[2].size)
    t_final = float(sol.t[-1]) if not halted else float(sol.t_events[2][0])
    Y = sol.y.T
    if halted:
        Y = np.vstack([Y, sol.y_events[2][0]])
        times = np.append(sol.t, t_final)
    else:
        times = sol.t

    frames1, frames2, supports = [], [], []
    for y in Y:
        X1, X2, _, _ = split(y)
        frames1.append(_field_from_markers(X1, R1, r0[0])(data.x))
        frames2.append(_field_from_markers(X2, R2, r0[1])(data.x))
        supports.append([[float(X1.min()), float(X1.max())], [float(X2.min()), float(X2.max())]])

    X1f, X2f, Q1f, Q2f = split(Y[-1])
    inv = max(
        float(np.max(np.abs(_field_from_markers(X1f, R1, r0[0])(Q1f) - P1(Q1_0)))),
        float(np.max(np.abs(_field_from_markers(X2f, R2, r0[1])(Q2f) - P2(Q2_0)))),
    )
    markers = {
        "X1_0": X1_0, "X2_0": X2_0, "R1": R1, "R2": R2, "X1": X1f, "X2": X2f,
        "trace_times": times, "trace1": Y[:, :n], "trace2": Y[:, n:2 * n],
    }
    reason = "marker crossing within one family (incipient gradient catastrophe)" if halted else ""
    return SimResult("characteristics", np.asarray(times), data.x, np.array(frames1), np.array(frames2),
                     t1, t2, t_final, supports, halted, reason, markers, inv, sys, data)


def _upwind_step(r, v, dt, dx, background):
    left = np.concatenate([[background], r[:-1]])
    right = np.concatenate([r[1:], [background]])
    back = (r - left) / dx
    fwd = (right - r) / dx
    return r - dt * np.where(v > 0, v * back, v * fwd)


def _supports_touch(x, r1, r2, eps):
    s1 = detect_supports(x, r1, eps)
    s2 = detect_supports(x, r2, eps)
    if not s1 or not s2:
        return False, s1, s2
    return max(b for _, b in s1) >= min(a for a, _ in s2) and min(a for a, _ in s1) <= max(b for _, b in s2), s1, s2


def _simulate_upwind(sys, data, t_end, cfl, n_frames, eps_supp):
    x = data.x
    dx = float(x[1] - x[0])
    if not np.allclose(np.diff(x), dx, rtol=1e-9, atol=0.0):
        raise ValueError("upwind scheme needs a uniform grid")
    r1, r2 = data.r
    bg1, bg2 = sys.r0
    times = np.linspace(data.t0, t_end, n_frames)
    frames1, frames2, supports = [r1.copy()], [r2.copy()], []
    t = data.t0
    t1 = t2 = None
    _, s1, s2 = _supports_touch(x, r1, r2, eps_supp)
    supports.append([s1, s2])
    for t_next in times[1:]:
        while t < t_next - 1e-14:
            v1, v2 = sys.speeds(r1, r2)
            vmax = max(float(np.max(np.abs(v1))), float(np.max(np.abs(v2))), 1e-12)
            dt = min(cfl * dx / vmax, t_next - t)
            r1, r2 = _upwind_step(r1, v1, dt, dx, bg1), _upwind_step(r2, v2, dt, dx, bg2)
            t += dt
            touch, _, _ = _supports_touch(x, r1, r2, eps_supp)
            if touch and t1 is None:
                t1 = t
            if t1 is not None and t2 is None and not touch:
                t2 = t
        frames1.append(r1.copy())
        frames2.append(r2.copy())
        _, s1, s2 = _supports_touch(x, r1, r2, eps_supp)
        supports.append([s1, s2])
    return SimResult("upwind", times, x, np.array(frames1), np.array(frames2), t1, t2, float(t), supports,
                     system=sys, data=data)


def _align(xs, vals, profile, guess, width):
    """L2-optimal shift d with vals ~ profile(xs - d); returns (d, max error)."""
    def obj(d):
        return float(np.sum((vals - profile(xs - d)) ** 2))

    res = minimize_scalar(obj, bounds=(guess - 0.1 * width, guess + 0.1 * width), method="bounded",
                          options={"xatol": 1e-14, "maxiter": 500})
    d = float(res.x)
    return d, float(np.max(np.abs(vals - profile(xs - d))))


def elasticity_report(res: SimResult, tol_match: float = 1e-6, eps_supp: float | None = None) -> dict:
    """Support counts before/after the interaction, profile match and phase shifts."""
    if res.t1 is not None and (res.t2 is None or res.t_final < res.t2):
        return {"verdict": None, "status": "interaction ongoing"}
    if res.t1 is None:
        return {"verdict": None, "status": "no interaction in the simulated interval"}
    eps = (EPS_SUPP if res.scheme == "characteristics" else 1e-4) if eps_supp is None else eps_supp
    sys, data = res.system, res.data
    counts_before = [len(detect_supports(res.x, fr[0], eps)) for fr in (res.r1, res.r2)]
    counts_after = [len(detect_supports(res.x, fr[-1], eps)) for fr in (res.r1, res.r2)]
    r_init = data.r
    coupled = sys.self_coupled((r_init[0].min(), r_init[0].max()), (r_init[1].min(), r_init[1].max()))
    elapsed = res.t_final - data.t0
    waves = []
    for s in range(2):
        prof = data.profiles[s]
        free = float(sys.speeds(np.array(sys.r0[0]), np.array(sys.r0[1]))[s]) * elapsed
        width = prof.support[1] - prof.support[0]
        if res.markers:
            xs = res.markers[f"X{s + 1}"]
            vals = res.markers[f"R{s + 1}"]
            guess = float(np.mean(xs - res.markers[f"X{s + 1}_0"]))
        else:
            xs = res.x
            vals = (res.r1, res.r2)[s][-1]
            guess = free
        entry = {"free_flight_shift": free, "self_coupled": coupled[s]}
        if coupled[s]:
            init = prof(np.linspace(*prof.support, 2001))
            entry["mode"] = "value-range"
            entry["match_error"] = max(abs(float(vals.min()) - float(init.min())),
                                       abs(float(vals.max()) - float(init.max())))
            entry["shift"] = guess
        else:
            d, err = _align(xs, vals, prof, guess, width)
            entry["mode"] = "shape"
            entry["shift"] = d
            entry["match_error"] = err
        entry["interaction_shift"] = entry["shift"] - free
        waves.append(entry)
    count_ok = counts_before == [1, 1] and counts_after == [1, 1]
    match_ok = all(w["match_error"] <= tol_match for w in waves)
    return {
        "verdict": bool(count_ok and match_ok),
        "status": "complete",
        "support_counts_before": counts_before,
        "support_counts_after": counts_after,
        "wave_count_conserved": count_ok,
        "waves": waves,
        "tol_match": tol_match,
        "t1": res.t1, "t2": res.t2,
    }


def catastrophe_time_estimate(sys: DiagonalSystem, data: InitialData, family: int = 0) -> float:
    """1 / max(-d/dx nu_s(r(t0, x))): the breaking time of a self-coupled simple wave."""
    r1, r2 = data.r
    v = sys.speeds(r1, r2)[family]
    slope = np.gradient(v, data.x)
    m = float(np.max(-slope))
    return np.inf if m <= 0 else 1.0 / m


def exact_phase_shifts(profiles, coupling: float = 0.3, base_gap: float = 2.0):
    """Interaction shifts for nu1 = 1 + c r2, nu2 = -1 + c r1 with zero background.

    D1 = int c R2 / (2 + c R2) and D2 = int c R1 / (2 - c R1), each over the
    other wave's support.
    """
    from scipy.integrate import quad

    P1, P2 = profiles
    d1 = quad(lambda b: coupling * P2(np.array([b]))[0] / (base_gap + coupling * P2(np.array([b]))[0]),
              *P2.support, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    d2 = quad(lambda a: coupling * P1(np.array([a]))[0] / (base_gap - coupling * P1(np.array([a]))[0]),
              *P1.support, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return d1, d2
