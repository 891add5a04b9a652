"""Exhaustion: solve ball problems on growing boxes and watch them settle on a compact."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .barriers import BarrierConfig, build_barriers, mollified_boundary
from .elliptic import NewtonOptions, solve_dirichlet
from .errors import NotCauchy
from .flow import init_flow, run_to_steady
from .grid import Grid, GridFunction, gauss_curvature, gauss_map_image
from .sphere import CapUnion, klein_hull


@dataclass(frozen=True)
class ExhaustionSchedule:
    radii: tuple = (4.0, 8.0, 16.0)
    compact_radius: float = 2.0
    spacings: tuple = (0.25, 0.25, 0.25)

    def __post_init__(self):
        r = tuple(float(x) for x in self.radii)
        h = tuple(float(x) for x in self.spacings)
        if len(h) == 1:
            h = h * len(r)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "spacings", h)
        if len(h) != len(r):
            raise ValueError("need one spacing per radius")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("radii must increase")
        if not self.compact_radius < min(r):
            raise ValueError("compact_radius must be below the smallest radius")
        if any(b > a for a, b in zip(h, h[1:])):
            raise ValueError("spacings must refine or stay fixed")


def _on_compact(u: GridFunction, pts: np.ndarray) -> np.ndarray:
    axes = [u.grid.axis] * u.grid.n
    return RegularGridInterpolator(axes, u.values, method="linear")(pts)


def compact_nodes(grid: Grid, radius: float) -> np.ndarray:
    pts = grid.points().reshape(-1, grid.n)
    return pts[np.sum(pts**2, axis=-1) <= radius**2 + 1e-12]


def gauss_map_containment(u: GridFunction, F: CapUnion, slack_inner: float, slack_outer: float, resolution: int = 128) -> dict:
    hull = klein_hull(F, resolution)
    p = gauss_map_image(u)
    sd = hull.signed_distance(p)
    return {
        "points": int(len(p)),
        "inside_inner_fraction": float(np.mean(sd <= slack_inner)),
        "outside_outer_fraction": float(np.mean(sd > slack_outer)),
        "max_signed_distance": float(np.max(sd)),
        "slack_inner": slack_inner,
        "slack_outer": slack_outer,
    }


def solve_stage(F, f0, R, h, pair, mode="elliptic", newton=None, smoothing_radius=0.0, flow_opts=None, warm=None, gap_fraction=0.5):
    """One exhaustion stage: barrier data on [-R, R]^n, then an elliptic or flow solve."""
    grid = Grid(F.dim, R, h)
    mb = mollified_boundary(pair, grid, smoothing_radius, gap_fraction, mollify_interior=smoothing_radius > 0)
    data = GridFunction(grid, mb["data"])
    lo, up, _ = pair.on_grid(grid)
    newton = newton or NewtonOptions(eps_space=1e-14, eps_convex=0.0, residual_tol=1e-8)
    if mode == "elliptic":
        opts = NewtonOptions(**{**newton.__dict__, "warm_start": warm if warm is not None else data})
        u, rep = solve_dirichlet(grid, f0, data, opts, barriers=(lo, up))
        info = rep.as_dict()
    elif mode == "flow":
        fo = {"epsilon": 0.1, "tol": 1e-6, "t_max": 1e3, **(flow_opts or {})}
        st = init_flow(data, f0, epsilon=fo["epsilon"])
        st, info = run_to_steady(st, fo["tol"], fo["t_max"])
        u = st.u
        info["comparison_flags"] = {
            "lower_margin": float(np.min(u.values - lo)),
            "upper_margin": float(np.min(up - u.values)),
        }
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return u, info, mb


def exhaust(
    F: CapUnion,
    f0: float,
    schedule: ExhaustionSchedule,
    profile,
    mode: str = "elliptic",
    barrier_config: BarrierConfig = None,
    newton: NewtonOptions = None,
    smoothing_radius: float = 0.0,
    flow_opts: dict = None,
    cauchy_tol: float = 0.0,
    raise_on_fail: bool = False,
    on_stage=None,
    gap_fraction: float = 0.5,
):
    """Run the schedule; returns (final GridFunction, report, per-stage solutions)."""
    barrier_config = barrier_config or BarrierConfig(k1=2.0 * f0, k2=0.5 * f0)
    pair = build_barriers(F, barrier_config, profile)
    stages = []
    sols = []
    for R, h in zip(schedule.radii, schedule.spacings):
        try:
            u, info, mb = solve_stage(F, f0, R, h, pair, mode, newton, smoothing_radius, flow_opts, gap_fraction=gap_fraction)
        except Exception as exc:  # record the failing stage, then re-raise for the caller
            stages.append({"R": R, "h": h, "error": f"{type(exc).__name__}: {exc}"})
            report = {"stages": stages, "ok": False, "failed_stage": R}
            exc.partial_report = report
            raise
        cert = gauss_curvature(u, eps_space=1e-300, eps_convex=1e-300)
        stage = {
            "R": R,
            "h": h,
            "curvature_residual": float(np.max(np.abs(np.log(cert.K) - math.log(f0)))),
            "gradient_norm_max": cert.gradient_norm_max,
            "min_hessian_eigenvalue": cert.min_hessian_eigenvalue,
            "lower_margin": info["comparison_flags"]["lower_margin"],
            "upper_margin": info["comparison_flags"]["upper_margin"],
            "boundary_within_barriers": mb["within_barriers"],
        }
        stages.append(stage)
        sols.append(u)
        if on_stage is not None:
            on_stage(stage, u)
    pts = compact_nodes(Grid(F.dim, schedule.radii[0], schedule.spacings[-1]), schedule.compact_radius)
    vals = [_on_compact(u, pts) for u in sols]
    d = [float(np.max(np.abs(b - a))) for a, b in zip(vals, vals[1:])]
    cauchy_ok = all(b < a + cauchy_tol for a, b in zip(d, d[1:]))
    final = sols[-1]
    h = schedule.spacings[-1]
    contain = gauss_map_containment(final, F, h, 3 * h)
    report = {
        "mode": mode,
        "f0": f0,
        "radii": list(schedule.radii),
        "spacings": list(schedule.spacings),
        "compact_radius": schedule.compact_radius,
        "stages": stages,
        "cauchy_differences": d,
        "cauchy_decreasing": bool(cauchy_ok),
        "gauss_map": contain,
        "containment_ok": bool(contain["inside_inner_fraction"] >= 0.99 and contain["outside_outer_fraction"] == 0.0),
        "convergence_note": "sup-norm Cauchy differences on the compact stand in for smooth convergence",
    }
    report["ok"] = bool(cauchy_ok and report["containment_ok"])
    if raise_on_fail and not cauchy_ok:
        raise NotCauchy(f"Cauchy differences not decreasing: {d}")
    return final, report, sols
