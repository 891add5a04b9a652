"""Command-line driver.

    minkgauss <subcommand> [--config FILE] [flags] [--set key=value ...]

Subcommands: semitrough, barriers, solve, flow, exhaust, diagnose.  Config
files are YAML (JSON is a subset); flags and ``--set`` override file values.
Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import copy
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from .barriers import BarrierConfig, build_barriers, mollified_boundary, verify_barriers
from .diagnostics import (
    DiagnosticsConfig,
    c2_beta_sensitivity,
    diagnose_boost_closeness,
    diagnose_c2_monitor,
    diagnose_gradient_bound,
    diagnose_velocity_bound,
)
from .elliptic import NewtonOptions, solve_dirichlet
from .errors import MinkGaussError
from .exhaust import ExhaustionSchedule, exhaust
from .flow import init_flow, load_checkpoint, run_to_steady, save_checkpoint
from .grid import Grid, GridFunction, load_binary, save_binary, save_csv
from .report import format_report
from .semitrough import make_semitrough, solve_profile
from .sphere import CapUnion, SphereCap, basis_vector

DEFAULTS = {
    "n": 2,
    "R": 4.0,
    "h": 0.1,
    "f": 1.0,
    "out": "out",
    "boundary": "barrier_mollified",
    "boundary_file": None,
    "smoothing_radius": 0.0,
    "gap_fraction": 0.5,
    "F": None,  # None -> the half-space cap(e1, pi/2)
    "profile": {"t_span": 200.0, "tol": 1e-10, "b": 0.6},
    "barriers": {"k1": 2.0, "k2": 0.5, "ball_count": 16, "verify_radius": 5.0, "radii": [10.0, 20.0, 40.0, 80.0]},
    "newton": {"max_iterations": 60, "residual_tol": 1e-8, "shrink": 0.5, "min_step": 1e-10, "eps_space": 1e-14, "eps_convex": 0.0},
    "flow": {
        "initial": "barrier_mollified",
        "perturb": 0.05,
        "perturb_radius": 1.5,
        "perturb_center": [1.0, 0.0],
        "epsilon": 0.1,
        "eta_margin": 1.0,
        "tol": 1e-6,
        "t_max": 1000.0,
        "resume": None,
        "ramp": True,
    },
    "exhaust": {"radii": [4.0, 8.0, 16.0], "spacings": [0.25], "compact_radius": 2.0, "mode": "elliptic"},
    "diagnose": {
        "monitors": ["gradient", "boost"],
        "lambda_shrink": 0.5,
        "beta": 5.0,
        "slope": 0.5,
        "phi0": 1.0,
        "radii": [10.0, 20.0, 40.0, 80.0],
        "t_end": 0.5,
        "checkpoints": 10,
    },
}


class UsageError(Exception):
    pass


# --- config handling ------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _set_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    d = cfg
    for p in parts[:-1]:
        if not isinstance(d.get(p), dict):
            d[p] = {}
        d = d[p]
    d[parts[-1]] = value


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            data = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        if not isinstance(data, dict):
            raise UsageError("config file must hold a mapping")
        cfg = _merge(cfg, data)
    for flag in ("n", "R", "h", "f", "out", "boundary", "boundary_file", "smoothing_radius"):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[flag] = val
    if getattr(args, "tol", None) is not None:
        cfg["newton"]["residual_tol"] = args.tol
        cfg["flow"]["tol"] = args.tol
    if getattr(args, "mode", None) is not None:
        cfg["exhaust"]["mode"] = args.mode
    if getattr(args, "monitors", None):
        cfg["diagnose"]["monitors"] = args.monitors.split(",")
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_dotted(cfg, k.strip(), yaml.safe_load(v))
    return cfg


def cap_union_from_cfg(cfg) -> CapUnion:
    n = int(cfg["n"])
    if cfg.get("F") is None:
        return CapUnion([SphereCap(basis_vector(n, 0), math.pi / 2)])
    spec = cfg["F"]
    caps = spec["caps"] if isinstance(spec, dict) else spec
    try:
        return CapUnion([SphereCap(np.asarray(c["center"], dtype=float), float(c["radius"])) for c in caps])
    except (KeyError, TypeError) as exc:
        raise UsageError(f"malformed F entry: {exc}")


def _barrier_config(cfg) -> BarrierConfig:
    b = cfg["barriers"]
    return BarrierConfig(float(b["k1"]), float(b["k2"]), int(b["ball_count"]), float(b["verify_radius"]))


def _newton(cfg, warm=None) -> NewtonOptions:
    return NewtonOptions(**{k: v for k, v in cfg["newton"].items()}, warm_start=warm)


def _grid(cfg) -> Grid:
    try:
        return Grid(int(cfg["n"]), float(cfg["R"]), float(cfg["h"]))
    except ValueError as exc:
        raise UsageError(str(exc))


def _profile(cfg):
    p = cfg["profile"]
    return solve_profile(int(cfg["n"]), float(p["t_span"]), float(p["tol"]), float(p["b"]))


def bump(pts: np.ndarray, radius: float) -> np.ndarray:
    """(1 - |x|^2/r^2)_+^3, the compactly supported perturbation profile for flow data."""
    return np.clip(1.0 - np.sum(pts**2, axis=-1) / radius**2, 0.0, None) ** 3


def boundary_data(cfg, grid: Grid, pair=None):
    """Full-grid array whose boundary ring is the Dirichlet data (interior = warm start)."""
    kind = cfg["boundary"]
    if kind == "hyperboloid":
        f = float(cfg["f"])
        return np.sqrt(f ** (-2.0 / grid.n) + np.sum(grid.points() ** 2, axis=-1)), None
    if kind == "barrier_mollified":
        r = float(cfg["smoothing_radius"])
        mb = mollified_boundary(pair, grid, r, float(cfg["gap_fraction"]), mollify_interior=r > 0)
        return mb["data"], mb
    if kind == "file":
        if not cfg.get("boundary_file"):
            raise UsageError("boundary=file needs boundary_file")
        u = load_binary(cfg["boundary_file"])
        if u.grid != grid:
            raise UsageError("boundary file grid does not match n/R/h")
        return u.values, None
    raise UsageError(f"unknown boundary source {kind!r}")


def _outdir(cfg) -> Path:
    d = Path(cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(report: dict, outdir: Path, name: str) -> None:
    text = format_report(report)
    (outdir / name).write_text(text)
    sys.stdout.write(text)


# --- subcommands ------------------------------------------------------------------


def cmd_semitrough(cfg) -> int:
    prof = _profile(cfg)
    out = _outdir(cfg)
    prof.to_csv(out / "profile.csv")
    val = prof.validate()
    rep = {
        "command": "semitrough",
        "n": prof.n,
        "a": prof.a,
        "b": prof.b,
        "shift": prof.shift,
        "t_min": prof.t_min,
        "t_max": prof.t_max,
        "samples": int(prof.t.size),
        "validation": val,
        "ok": val["ok"],
    }
    _emit(rep, out, "semitrough_report.txt")
    return 0 if rep["ok"] else 1


def cmd_barriers(cfg) -> int:
    F = cap_union_from_cfg(cfg)
    prof = _profile(cfg)
    pair = build_barriers(F, _barrier_config(cfg), prof)
    rep = verify_barriers(pair, cfg["barriers"]["radii"], raise_on_fail=False)
    out = _outdir(cfg)
    pair.to_csv(out / "barriers.csv", _grid(cfg))
    rep = {"command": "barriers", "F": F.as_dict(), "delta0": F.delta0, **rep}
    _emit(rep, out, "barriers_report.txt")
    return 0 if rep["ok"] else 1


def _pair_if_needed(cfg, kinds):
    if any(k == "barrier_mollified" for k in kinds):
        return build_barriers(cap_union_from_cfg(cfg), _barrier_config(cfg), _profile(cfg))
    return None


def cmd_solve(cfg) -> int:
    grid = _grid(cfg)
    pair = _pair_if_needed(cfg, [cfg["boundary"]])
    data, _ = boundary_data(cfg, grid, pair)
    warm = GridFunction(grid, data) if cfg["boundary"] == "barrier_mollified" else None
    barriers = pair.on_grid(grid)[:2] if pair is not None else None
    u, rep = solve_dirichlet(grid, float(cfg["f"]), data, _newton(cfg, warm), barriers=barriers)
    out = _outdir(cfg)
    save_csv(u, out / "solution.csv")
    save_binary(u, out / "solution.bin")
    body = rep.as_dict()
    ok = body["final_residual"] <= cfg["newton"]["residual_tol"]
    if body["comparison_flags"]:
        ok = ok and body["comparison_flags"]["sandwich_ok"]
    report = {"command": "solve", "grid": grid.as_dict(), "f": float(cfg["f"]), "boundary": cfg["boundary"], **body, "ok": ok}
    _emit(report, out, "solve_report.txt")
    return 0 if ok else 1


def initial_flow_state(cfg, grid: Grid, pair):
    fl = cfg["flow"]
    kind = fl["initial"]
    sub = dict(cfg, boundary=kind)
    data, _ = boundary_data(sub, grid, pair)
    pts = grid.points()
    u0 = np.array(data)
    if fl["perturb"]:
        c = np.zeros(grid.n)
        given = np.asarray(fl.get("perturb_center") or [], dtype=float)[: grid.n]
        c[: given.size] = given
        u0 = u0 + float(fl["perturb"]) * bump(pts - c, float(fl["perturb_radius"]))
    barriers = pair.on_grid(grid)[:2] if pair is not None else None
    return init_flow(GridFunction(grid, u0), float(cfg["f"]), float(fl["epsilon"]), float(fl["eta_margin"]), bool(fl["ramp"]), barriers)


def cmd_flow(cfg) -> int:
    grid = _grid(cfg)
    fl = cfg["flow"]
    if fl.get("resume"):
        st = load_checkpoint(fl["resume"])
        pair = None
    else:
        pair = _pair_if_needed(cfg, [fl["initial"]])
        st = initial_flow_state(cfg, grid, pair)
    st, rep = run_to_steady(st, float(fl["tol"]), float(fl["t_max"]), require_decay=False)
    out = _outdir(cfg)
    save_checkpoint(st, out / "checkpoint")
    save_csv(st.u, out / "flow_solution.csv")
    ok = bool(rep["final_residual"] <= float(fl["tol"]) and rep["bounded_by_V_eps"])
    if rep["fit_points"] >= 3:
        ok = ok and rep["fit_c3"] > 0
    if pair is not None:
        lo, up, _ = pair.on_grid(grid)
        rep["lower_margin"] = float(np.min(st.u.values - lo))
        rep["upper_margin"] = float(np.min(up - st.u.values))
    report = {"command": "flow", "grid": grid.as_dict(), "f0": float(cfg["f"]), **rep, "ok": ok}
    _emit(report, out, "flow_report.txt")
    return 0 if ok else 1


def cmd_exhaust(cfg) -> int:
    F = cap_union_from_cfg(cfg)
    ex = cfg["exhaust"]
    sched = ExhaustionSchedule(tuple(ex["radii"]), float(ex["compact_radius"]), tuple(ex["spacings"]))
    out = _outdir(cfg)

    def save(stage, u):
        save_binary(u, out / f"exhaust_R{stage['R']:g}.bin")

    _, rep, _ = exhaust(
        F,
        float(cfg["f"]),
        sched,
        _profile(cfg),
        mode=ex["mode"],
        barrier_config=_barrier_config(cfg),
        newton=_newton(cfg),
        smoothing_radius=float(cfg["smoothing_radius"]),
        gap_fraction=float(cfg["gap_fraction"]),
        flow_opts={k: cfg["flow"][k] for k in ("epsilon", "tol", "t_max")},
        on_stage=save,
    )
    _emit({"command": "exhaust", "F": F.as_dict(), **rep}, out, "exhaust_report.txt")
    return 0 if rep["ok"] else 1


def cmd_diagnose(cfg) -> int:
    dg = cfg["diagnose"]
    dcfg = DiagnosticsConfig(float(dg["lambda_shrink"]), float(dg["beta"]), None, float(dg["slope"]))
    F = cap_union_from_cfg(cfg)
    prof = _profile(cfg)
    pair = build_barriers(F, _barrier_config(cfg), prof)
    grid = _grid(cfg)
    report = {"command": "diagnose", "monitors": list(dg["monitors"])}
    ok = True
    if "gradient" in dg["monitors"]:
        data, _ = boundary_data(dict(cfg, boundary="barrier_mollified"), grid, pair)
        warm = GridFunction(grid, data)
        u, _ = solve_dirichlet(grid, float(cfg["f"]), data, _newton(cfg, warm))
        r = diagnose_gradient_bound(u, pair, dcfg)
        report["gradient_bound"] = r
        ok = ok and r["ok"]
    if "c2" in dg["monitors"] or "velocity" in dg["monitors"]:
        st = initial_flow_state(cfg, grid, pair)
        times = np.linspace(0.0, float(dg["t_end"]), int(dg["checkpoints"]) + 1)
        states = _flow_checkpoints(st, times)
        if "c2" in dg["monitors"]:
            r = diagnose_c2_monitor([(s.t, s.u) for s in states], dcfg)
            r["beta_sensitivity"] = c2_beta_sensitivity([(s.t, s.u) for s in states], dcfg)
            report["c2_monitor"] = r
            ok = ok and r["ok"]
        if "velocity" in dg["monitors"] and grid.n == 2:
            r = diagnose_velocity_bound(states, slope=dcfg.slope)
            report["velocity_monitor"] = r
            ok = ok and r["ok"]
    if "boost" in dg["monitors"]:
        z = make_semitrough(F.caps[0], float(cfg["f"]), prof)
        r = diagnose_boost_closeness(z, F.caps[0].support, float(dg["phi0"]), dg["radii"], n=F.dim)
        report["boost_closeness"] = r
        ok = ok and r["ok"]
    report["ok"] = bool(ok)
    _emit(report, _outdir(cfg), "diagnose_report.txt")
    return 0 if ok else 1


def _flow_checkpoints(st, times):
    from .flow import _advance

    st = st.clone()
    out = []
    for T in times:
        while st.t < T:
            _advance(st, 1e-14)
        snap = st.clone()
        snap.velocity_history = []
        out.append(snap)
    return out


COMMANDS = {
    "semitrough": cmd_semitrough,
    "barriers": cmd_barriers,
    "solve": cmd_solve,
    "flow": cmd_flow,
    "exhaust": cmd_exhaust,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minkgauss", description="Constant Gauss curvature hypersurfaces in Minkowski space.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", ""))
        s.add_argument("--config", help="YAML/JSON config file")
        s.add_argument("--n", type=int)
        s.add_argument("--R", type=float)
        s.add_argument("--h", type=float)
        s.add_argument("--f", type=float, help="prescribed curvature f (f0 for flows)")
        s.add_argument("--tol", type=float, help="residual tolerance")
        s.add_argument("--out", help="output directory")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (dotted path)")
        if name in ("solve",):
            s.add_argument("--boundary", choices=["hyperboloid", "barrier_mollified", "file"])
            s.add_argument("--boundary-file", dest="boundary_file")
            s.add_argument("--smoothing-radius", dest="smoothing_radius", type=float)
        if name == "exhaust":
            s.add_argument("--mode", choices=["elliptic", "flow"])
        if name == "diagnose":
            s.add_argument("--monitors", help="comma list of gradient,c2,velocity,boost")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except MinkGaussError as exc:
        sys.stderr.write(f"verification failure: {type(exc).__name__}: {exc}\n")
        return 1
    except (ValueError, KeyError, TypeError) as exc:
        sys.stderr.write(f"error: invalid configuration: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
