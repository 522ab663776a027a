"""Command line front end: ``kwave <subcommand> --config run.json --out DIR``."""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, KwaveError, PathIndependenceError
from .exprcore import compile_vector
from .implicitsol import (ImplicitSolution, derivative_matrix, pde_residual, sampler, solve_pfaffian_point,
                          solve_point, write_field_csv)
from .involution import abelianize_pair, check_abelian, check_lambda_involutivity, check_span_condition
from .model import registry_get
from .surface import integrate_surface
from .wavealg import SimpleElement, WaveCovector

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

COMMANDS = ("check-involutivity", "abelianize", "surface", "implicit-eval", "pfaffian-eval",
            "simulate2w", "showcase", "residual")

DEFAULTS = {
    "seed": 0, "n_samples": 50, "tol_span": 1e-8, "tol_abel": 1e-8, "tol_wave": 1e-10,
    "tol_path": 1e-7, "tol_involution": 1e-6, "tol_residual": 1e-6, "tol_match": 1e-6,
    "tol_cat": 1e-8, "err_tol": 1e-9, "h": 1e-4,
}


# ---------------------------------------------------------------- io helpers

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_with(path: Path, writer) -> None:
    """Call ``writer(tmp_path)`` then rename onto ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(payload) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def _schema():
    text = resources.files("kwave").joinpath("schema/config.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg) -> None:
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _pointer(err.absolute_path))


# ---------------------------------------------------------------- config -> objects

def _numerics(cfg):
    out = dict(DEFAULTS)
    out.update(cfg.get("numerics", {}))
    return out


def _model(cfg):
    if "model" not in cfg:
        raise ConfigError("a model section is required for this command", "/model")
    m = cfg["model"]
    try:
        return registry_get(m["name"], m.get("params", {}))
    except KwaveError as exc:
        raise ConfigError(str(exc), "/model") from None


def _elements(cfg, q, need_lambda=False):
    names = [f"u{a + 1}" for a in range(q)]
    out = []
    for i, el in enumerate(cfg.get("elements", [])):
        ptr = f"/elements/{i}"
        if len(el["gamma"]) != q:
            raise ConfigError(f"gamma needs {q} components", ptr + "/gamma")
        try:
            gamma = compile_vector(el["gamma"], names)
            lam = WaveCovector(compile_vector(el["lambda"], names)) if "lambda" in el else None
        except KwaveError as exc:
            raise ConfigError(str(exc), ptr) from None
        if need_lambda and lam is None:
            raise ConfigError("lambda is required", ptr)
        out.append(SimpleElement(gamma, lam, el.get("label", f"element-{i + 1}")))
    if not out:
        raise ConfigError("at least one element is required", "/elements")
    return out


def _require(task, key):
    if key not in task:
        raise ConfigError(f"'{key}' is required", f"/task/{key}")
    return task[key]


def _axis(spec):
    return np.linspace(spec["start"], spec["stop"], spec["num"])


def _implicit_solution(cfg, pfaffian=False):
    task = cfg.get("task", {})
    f_exprs = _require(task, "f")
    p = _require(task, "p")
    q = len(f_exprs)
    key = "covectors_r" if pfaffian else "covectors"
    covs = _require(task, key)
    k = len(covs)
    rnames = [f"r{s + 1}" for s in range(k)]
    unames = [f"u{a + 1}" for a in range(q)]
    try:
        f = compile_vector(f_exprs, rnames)
        cov_fns = [compile_vector(c, rnames if pfaffian else unames) for c in covs]
        psi = [compile_vector([e], rnames) for e in task["psi"]] if "psi" in task else None
    except KwaveError as exc:
        raise ConfigError(str(exc), f"/task/{key}") from None
    for i, c in enumerate(covs):
        if len(c) != p:
            raise ConfigError(f"covector needs {p} components", f"/task/{key}/{i}")
    psi_fns = [lambda r, fn=fn: float(fn(r)[0]) for fn in psi] if psi else None
    if pfaffian:
        # solve_point is not used on this path; covectors are only needed as functions of r
        return ImplicitSolution(f, [lambda u: None] * k, p, q, psi=psi_fns, covectors_r=cov_fns)
    return ImplicitSolution(f, cov_fns, p, q)


def _points(cfg, p, nums):
    task = cfg.get("task", {})
    if "points" in task:
        pts = np.asarray(task["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != p:
            raise ConfigError(f"points must be a list of {p}-vectors", "/task/points")
        return pts
    box = _require(task, "box")
    if len(box) != p:
        raise ConfigError(f"box needs {p} intervals", "/task/box")
    rng = np.random.default_rng(nums["seed"])
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return lo + (hi - lo) * rng.random((nums["n_samples"], p))


def _map_points(fn, pts):
    workers = max(1, int(os.environ.get("KWAVE_THREADS", "1") or 1))
    if workers == 1:
        return [fn(x) for x in pts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, pts))


# ---------------------------------------------------------------- commands

def cmd_check_involutivity(cfg, out, args):
    nums = _numerics(cfg)
    model = _model(cfg)
    els = _elements(cfg, model.q, need_lambda=True)
    samples = model.domain.sample(nums["n_samples"], nums["seed"])
    wave = []
    for el in els:
        worst = max(el.wave_residual(model, u) for u in samples)
        norm = max(float(np.linalg.norm(model.A(u))) for u in samples)
        wave.append({"label": el.label, "max_residual": worst, "tol": nums["tol_wave"] * (1 + norm),
                     "ok": worst <= nums["tol_wave"] * (1 + norm)})
    structs = check_span_condition(els, samples, nums["tol_span"]) if len(els) > 1 else []
    abel_ok, abel_res = check_abelian(els, samples, nums["tol_abel"]) if len(els) > 1 else (True, 0.0)
    results = {
        "wave_relation": wave,
        "span": [{"pair": [s.i, s.j], "max_residual": s.max_residual, "in_span": s.ok,
                  "h_range": [[float(s.h_i.min()), float(s.h_i.max())], [float(s.h_j.min()), float(s.h_j.max())]]}
                 for s in structs],
        "abelian": {"ok": abel_ok, "max_bracket": abel_res},
    }
    task = cfg.get("task", {})
    if "axes" in task and "base_point" in task:
        surf = integrate_surface(els, task["base_point"], [_axis(a) for a in task["axes"]],
                                 err_tol=nums["err_tol"], tol_path=nums["tol_path"], seed=nums["seed"],
                                 domain=model.domain, raise_on_path=False)
        inv = check_lambda_involutivity(els, surf, nums["tol_involution"])
        results["lambda_involutivity"] = inv.to_dict()
    verdict = all(w["ok"] for w in wave) and all(s.ok for s in structs)
    if "lambda_involutivity" in results:
        verdict = verdict and results["lambda_involutivity"]["verdict"]
    return verdict, results, {k: nums[k] for k in ("tol_wave", "tol_span", "tol_abel", "tol_involution")}


def cmd_abelianize(cfg, out, args):
    nums = _numerics(cfg)
    model = _model(cfg)
    els = _elements(cfg, model.q)
    if len(els) != 2:
        raise ConfigError("abelianize needs exactly two elements", "/elements")
    task = cfg.get("task", {})
    base = _require(task, "base_point")
    res = abelianize_pair(els[0], els[1], base, tuple(task.get("extents", [[0, 1], [0, 1]])),
                          tuple(task.get("shape", [41, 41])), nums["tol_span"], nums["tol_abel"])

    def write(tmp):
        import csv
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s1", "s2"] + [f"u{a + 1}" for a in range(model.q)] + ["f1", "f2", "valid"])
            for i, s1 in enumerate(res.s1):
                for j, s2 in enumerate(res.s2):
                    w.writerow([repr(float(s1)), repr(float(s2))] + [repr(float(v)) for v in res.nodes[i, j]]
                               + [repr(float(res.f1[i, j])), repr(float(res.f2[i, j])), int(res.valid[i, j])])

    atomic_write_with(out / "rescaling.csv", write)
    results = {k: v for k, v in res.to_dict().items() if k not in ("f1", "f2", "s1", "s2")}
    results["f_at_base"] = [float(res.f1_at(np.asarray(base, float))), float(res.f2_at(np.asarray(base, float)))]
    return res.verified, results, {"tol_span": nums["tol_span"], "tol_abel": nums["tol_abel"]}


def cmd_surface(cfg, out, args):
    nums = _numerics(cfg)
    model = _model(cfg)
    els = _elements(cfg, model.q)
    task = cfg.get("task", {})
    axes = [_axis(a) for a in _require(task, "axes")]
    if len(axes) != len(els):
        raise ConfigError("one axis per element is required", "/task/axes")
    try:
        surf = integrate_surface(els, _require(task, "base_point"), axes, err_tol=nums["err_tol"],
                                 tol_path=nums["tol_path"], seed=nums["seed"], domain=model.domain)
        verdict = True
    except PathIndependenceError:
        surf = integrate_surface(els, task["base_point"], axes, err_tol=nums["err_tol"], tol_path=nums["tol_path"],
                                 seed=nums["seed"], domain=model.domain, raise_on_path=False)
        verdict = False
    atomic_write_with(out / "surface.csv", lambda tmp: surf.to_csv(tmp, model.var_names or None))
    results = {"audit": surf.audit, "provenance": surf.provenance, "valid_nodes": int(surf.valid.sum()),
               "nodes": int(surf.valid.size)}
    return verdict, results, {"tol_path": nums["tol_path"], "err_tol": nums["err_tol"]}


def cmd_implicit_eval(cfg, out, args):
    nums = _numerics(cfg)
    sol = _implicit_solution(cfg)
    pts = _points(cfg, sol.p, nums)
    model = _model(cfg) if "model" in cfg else None
    rows, failures, ranks = [], [], []

    def one(x):
        try:
            ps = solve_point(sol, x, tol_cat=nums["tol_cat"])
            dec = derivative_matrix(sol, x, ps.u, ps.phi)
            return ps, dec, None
        except KwaveError as exc:
            return None, None, str(exc)

    for x, (ps, dec, err) in zip(pts, _map_points(one, pts)):
        if err:
            failures.append({"x": x.tolist(), "error": err})
            continue
        res = model.residual(ps.u, dec.du).__abs__().max() if model is not None else 0.0
        rows.append((x, ps.u, ps.phi.det, res))
        ranks.append(dec.rank)
    atomic_write_with(out / "field.csv", lambda tmp: write_field_csv(tmp, rows, sol.p, sol.q))
    rank_ok = all(r <= sol.k for r in ranks)
    worst = max((r[3] for r in rows), default=0.0)
    results = {"solved": len(rows), "failed": failures, "max_rank": max(ranks, default=0), "k": sol.k,
               "max_residual": worst}
    verdict = not failures and rank_ok and worst <= nums["tol_residual"]
    return verdict, results, {"tol_cat": nums["tol_cat"], "tol_residual": nums["tol_residual"], "newton_tol": 1e-12}


def cmd_pfaffian_eval(cfg, out, args):
    nums = _numerics(cfg)
    sol = _implicit_solution(cfg, pfaffian=True)
    pts = _points(cfg, sol.p, nums)
    rows, failures = [], []
    for x in pts:
        try:
            r, u, it = solve_pfaffian_point(sol, x, tol_cat=nums["tol_cat"])
            rows.append((x, u, float("nan"), float(np.max(np.abs(sol.Lam_r(r) @ x - r - sol.phases(r))))))
        except KwaveError as exc:
            failures.append({"x": x.tolist(), "error": str(exc)})
    atomic_write_with(out / "field.csv", lambda tmp: write_field_csv(tmp, rows, sol.p, sol.q))
    results = {"solved": len(rows), "failed": failures, "max_relation_residual": max((r[3] for r in rows), default=0.0)}
    return not failures, results, {"tol_cat": nums["tol_cat"], "newton_tol": 1e-12}


def cmd_residual(cfg, out, args):
    nums = _numerics(cfg)
    model = _model(cfg)
    sol = _implicit_solution(cfg)
    pts = _points(cfg, sol.p, nums)
    rep = pde_residual(model, sampler(sol, tol_cat=nums["tol_cat"]), pts, nums["h"])
    return rep.max <= nums["tol_residual"], rep.to_dict(), {"tol_residual": nums["tol_residual"], "h": nums["h"]}


def cmd_simulate2w(cfg, out, args):
    from .waves1d import DiagonalSystem, InitialData, Profile, elasticity_report, simulate, validate_initial_data

    nums = _numerics(cfg)
    task = cfg.get("task", {})
    try:
        sys_ = DiagonalSystem(_require(task, "nu1"), _require(task, "nu2"), tuple(task.get("r0", [0.0, 0.0])))
    except KwaveError as exc:
        raise ConfigError(str(exc), "/task/nu1") from None
    r0 = sys_.r0
    profs = []
    for s, spec in enumerate(_require(task, "profiles")):
        bg = spec.get("background", r0[s])
        amp = spec.get("amplitude", 0.2)
        try:
            profs.append(Profile.from_expr(spec["support"], amp, bg, spec["shape"]) if "shape" in spec
                         else Profile(tuple(spec["support"]), amp, bg))
        except KwaveError as exc:
            raise ConfigError(str(exc), f"/task/profiles/{s}") from None
    x = _axis(_require(task, "grid"))
    data = InitialData(x, tuple(profs))
    check = validate_initial_data(sys_, data)
    if not check["valid"]:
        return False, {"initial_data": check}, {}
    res = simulate(sys_, data, _require(task, "t_end"), task.get("scheme", "characteristics"),
                   task.get("cfl", 0.5), task.get("n_frames", 41), task.get("n_markers", 2001))
    rep = elasticity_report(res, nums["tol_match"])
    if args.emit_frames:
        frames = out / "frames"
        frames.mkdir(parents=True, exist_ok=True)
        for n, t in enumerate(res.times):
            def write(tmp, n=n, t=t):
                import csv
                with open(tmp, "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["t", "x", "r1", "r2"])
                    for xv, a, b in zip(res.x, res.r1[n], res.r2[n]):
                        w.writerow([repr(float(t)), repr(float(xv)), repr(float(a)), repr(float(b))])
            atomic_write_with(frames / f"frame_{n:04d}.csv", write)
    atomic_write_with(out / "traces.csv", res.write_traces)
    results = {"initial_data": check, "simulation": res.to_dict(), "elasticity": rep}
    verdict = bool(rep.get("verdict")) and not res.halted
    return verdict, results, {"tol_match": nums["tol_match"], "eps_supp": 1e-9 if res.scheme == "characteristics" else 1e-4}


def cmd_showcase(cfg, out, args):
    from .showcase import alfven_build, alfven_verify, barotropic_examples, barotropic_verify

    nums = _numerics(cfg)
    task = cfg.get("task", {})
    case = args.case or task.get("case")
    if case is None:
        raise ConfigError("showcase case (mhd or barotropic) is required", "/task/case")
    tol = nums["tol_residual"]
    if case == "mhd":
        psi = args.psi or task.get("psi_stream", "0.2*sin(x1)*sin(x2)")
        try:
            sol = alfven_build(psi, task.get("H0", 1.0), task.get("rho0", 1.0), task.get("p0", 1.0), task.get("eps", 1))
        except KwaveError as exc:
            raise ConfigError(str(exc), "/task/psi_stream") from None
        rep = alfven_verify(sol, n_samples=nums["n_samples"], h=nums["h"], seed=nums["seed"])
        verdict = (rep["residual_max"] <= tol and rep["gauss_max"] <= tol
                   and rep["H2_variation"] <= 1e-10 * sol.H0 ** 2 and rep["alignment_exact_max"] == 0.0
                   and rep["wave_relation_max"] <= rep["wave_relation_tol"])
        grid = np.linspace(-np.pi, np.pi, 41)

        def write(tmp):
            import csv
            with open(tmp, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x1", "x2", "rho", "p", "v1", "v2", "v3", "H1", "H2", "H3"])
                for a in grid:
                    for b in grid:
                        w.writerow([repr(float(a)), repr(float(b))] + [repr(float(v)) for v in sol.state([a, b])])

        atomic_write_with(out / "alfven_field.csv", write)
        return verdict, {"case": "mhd", "psi": str(psi), **rep}, {"tol_residual": tol, "h": nums["h"]}
    examples = barotropic_examples()
    name = task.get("example")
    chosen = {name: examples[name]} if name else examples
    if name and name not in examples:
        raise ConfigError(f"unknown barotropic example '{name}'", "/task/example")
    reports = {k: barotropic_verify(s, n_samples=min(nums["n_samples"], 40), h=nums["h"], seed=nums["seed"])
               for k, s in chosen.items()}
    verdict = all(r["residual_max"] <= tol for r in reports.values())
    for r in reports.values():
        if r["variant"] == "a-invariant":
            verdict = verdict and r["divergence_max"] <= 5e-8 and r["rho_transport_max"] <= tol
    return verdict, {"case": "barotropic", "examples": reports}, {"tol_residual": tol, "h": nums["h"]}


HANDLERS = {
    "check-involutivity": cmd_check_involutivity,
    "abelianize": cmd_abelianize,
    "surface": cmd_surface,
    "implicit-eval": cmd_implicit_eval,
    "pfaffian-eval": cmd_pfaffian_eval,
    "simulate2w": cmd_simulate2w,
    "showcase": cmd_showcase,
    "residual": cmd_residual,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kwave", description="Riemann k-wave construction and verification.")
    parser.add_argument("--version", action="version", version=f"kwave {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        if name == "simulate2w":
            p.add_argument("--emit-frames", action="store_true", help="write one CSV per output time")
        if name == "showcase":
            p.add_argument("case", nargs="?", choices=["mhd", "barotropic"])
            p.add_argument("--psi", help="stream function in x1, x2 for the mhd case")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.emit_frames = getattr(args, "emit_frames", False)
    args.case = getattr(args, "case", None)
    args.psi = getattr(args, "psi", None)
    started = time.time()
    try:
        cfg = load_config(args.config) if args.config else {}
        if not args.config and args.command != "showcase":
            raise ConfigError("--config is required for this command", "")
        task_cmd = cfg.get("task", {}).get("command")
        if task_cmd and task_cmd != args.command:
            raise ConfigError(f"config is for '{task_cmd}', not '{args.command}'", "/task/command")
        out = Path(args.out or cfg.get("output", {}).get("directory", "kwave-out"))
        out.mkdir(parents=True, exist_ok=True)
        verdict, results, tolerances = HANDLERS[args.command](cfg, out, args)
    except (KwaveError, jsonschema.SchemaError, OSError, ValueError) as exc:
        print(f"kwave: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = {
        "command": args.command,
        "verdict": "pass" if verdict else "fail",
        "results": results,
        "tolerances": tolerances,
        "seed": _numerics(cfg)["seed"],
        "versions": {"kwave": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": ".".join(map(str, sys.version_info[:3]))},
    }
    atomic_write_text(out / "report.json", dump_json(report))
    meta = {"started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
            "elapsed_s": time.time() - started, "argv": list(argv if argv is not None else sys.argv[1:]),
            "threads": os.environ.get("KWAVE_THREADS", "1")}
    atomic_write_text(out / "meta.json", dump_json(meta))
    print(f"kwave {args.command}: {report['verdict']} (report: {out / 'report.json'})")
    return EXIT_PASS if verdict else EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
