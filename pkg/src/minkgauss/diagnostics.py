"""Runtime monitors for the a priori estimates.

* gradient bound: 1/sqrt(1-|Du|^2) <= (u-psi)^-1 sup_{u>psi} (upper-psi)/sqrt(1-|Dpsi|^2)
  with psi = lambda * lower(x / lambda) + delta;
* C^2 monitor: (l - u) e^{beta vtilde} times the largest principal curvature along a flow;
* velocity monitor (n = 2): (l - u) du/dt along a flow;
* boost closeness: sup over rapidities of |u^phi - v^phi| on spheres of growing radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolated, DimensionUnsupported, MonitorExceeded, NotDecreasing
from .grid import Grid, GridFunction, curvature_parts, gradient, hessian, interior_gradient
from .sphere import sample_sphere


@dataclass
class DiagnosticsConfig:
    lambda_shrink: float = 0.5
    beta: float = 5.0
    affine_l: tuple = field(default=None)  # (slope vector, constant); None -> default rule
    slope: float = 0.5

    def __post_init__(self):
        if not 0 < self.lambda_shrink < 1:
            raise ValueError("lambda_shrink must lie in (0, 1)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.affine_l is not None and np.linalg.norm(self.affine_l[0]) >= 1:
            raise ValueError("the affine function l must be spacelike (|Dl| < 1)")


def default_affine(u: GridFunction, slope: float = 0.5) -> tuple:
    """l(x) = slope x^1 + c with {l > u} a nonempty blob away from the boundary.

    c sits halfway between the two thresholds: l - u < 0 on the boundary ring
    and max(l - u) > 0 in the interior.
    """
    g = u.grid
    pts = g.points()
    w = slope * pts[..., 0] - u.values
    bmax = float(np.max(w[g.boundary_mask()]))
    imax = float(np.max(w[g.interior]))
    if imax <= bmax:
        raise ValueError("no admissible constant: l - u peaks on the boundary")
    c = -0.5 * (bmax + imax)
    a = np.zeros(g.n)
    a[0] = slope
    return a, c


def _affine_values(l, pts):
    a, c = l
    return pts @ np.asarray(a, dtype=float) + c


# --- gradient bound -----------------------------------------------------------


def diagnose_gradient_bound(u: GridFunction, pair, cfg: DiagnosticsConfig = None, compact_radius: float = None, tol: float = 1.05, raise_on_fail: bool = False) -> dict:
    cfg = cfg or DiagnosticsConfig()
    g = u.grid
    lam = cfg.lambda_shrink
    pts = g.points()
    lower, upper, _ = pair.on_grid(g)
    lower_lam = lam * pair.lower(pts / lam)
    comp = np.sum(pts**2, axis=-1) <= (compact_radius if compact_radius is not None else g.R) ** 2
    delta = 0.5 * float(np.min((lower - lower_lam)[comp]))
    psi = GridFunction(g, lower_lam + delta)
    Dpsi = gradient(psi)
    Du = gradient(u)
    qpsi = np.sum(Dpsi**2, axis=-1)
    qu = np.sum(Du**2, axis=-1)
    above = (u.values > psi.values) & ~g.boundary_mask()
    out = {
        "lambda": lam,
        "delta": delta,
        "nodes": int(np.sum(above)),
        "hypothesis_psi_above_upper_on_boundary": bool(np.all((psi.values > upper)[g.boundary_mask()])),
        "psi_above_upper_fraction_on_boundary": float(np.mean((psi.values > upper)[g.boundary_mask()])),
    }
    if not np.any(above):
        out.update({"worst_ratio": 0.0, "witness": None, "vacuous": True, "ok": True})
        return out
    sup_rhs = float(np.max(((upper - psi.values) / np.sqrt(1.0 - qpsi))[above]))
    lhs = 1.0 / np.sqrt(1.0 - qu)
    rhs = sup_rhs / (u.values - psi.values)
    ratio = np.where(above, lhs / rhs, 0.0)
    k = int(np.argmax(ratio))
    node = tuple(int(i) for i in np.unravel_index(k, ratio.shape))
    out.update(
        {
            "worst_ratio": float(ratio.flat[k]),
            "witness": node,
            "witness_point": pts[node].tolist(),
            "sup_factor": sup_rhs,
            "vacuous": False,
        }
    )
    out["ok"] = bool(out["worst_ratio"] <= tol)
    if raise_on_fail and not out["ok"]:
        raise BoundViolated(node, out["worst_ratio"])
    return out


# --- C^2 and velocity monitors --------------------------------------------------


def c2_quantity(u: GridFunction, l, beta: float) -> tuple:
    """max over {l > u} of (l - u) e^{beta vtilde} kappa_max, with its node (None if the set is empty).

    The exponent is combined in log space so large tilts do not overflow before
    the comparison.
    """
    g = u.grid
    Du = interior_gradient(u)
    kappa = curvature_parts(Du, hessian(u))
    kmax = kappa[..., -1]
    vt = 1.0 / np.sqrt(1.0 - np.sum(Du * Du, axis=-1))
    pts = g.interior_points()
    gap = _affine_values(l, pts) - u.interior_values
    mask = (gap > 0) & (kmax > 0)
    if not np.any(mask):
        return 0.0, None
    with np.errstate(divide="ignore"):
        logq = np.where(mask, np.log(np.where(mask, gap, 1.0)) + beta * vt + np.log(np.where(mask, kmax, 1.0)), -np.inf)
    k = int(np.argmax(logq))
    node = tuple(int(i) + 1 for i in np.unravel_index(k, logq.shape))
    return float(math.exp(logq.flat[k])) if logq.flat[k] < 700 else float("inf"), node


def velocity_quantity(state, l) -> tuple:
    from .flow import velocity

    g = state.u.grid
    vel, _, _ = velocity(state)
    pts = g.interior_points()
    gap = _affine_values(l, pts) - state.u.interior_values
    mask = gap > 0
    if not np.any(mask):
        return 0.0, None
    val = np.where(mask, gap * vel, -np.inf)
    k = int(np.argmax(val))
    return float(val.flat[k]), tuple(int(i) + 1 for i in np.unravel_index(k, val.shape))


def _series_check(series, factor: float, margin: float, name: str, raise_on_fail: bool) -> dict:
    t0, m0, _ = series[0]
    limit = m0 + (factor - 1.0) * abs(m0) + margin
    worst = max(series, key=lambda r: r[1])
    ok = all(v <= limit for _, v, _ in series)
    if raise_on_fail and not ok:
        bad = next(r for r in series if r[1] > limit)
        raise MonitorExceeded(bad[0], bad[2], bad[1], limit)
    return {
        "monitor": name,
        "initial": m0,
        "limit": limit,
        "max": worst[1],
        "max_time": worst[0],
        "ratio_to_initial": (worst[1] / m0) if m0 > 0 else float("nan"),
        "series": [(t, v) for t, v, _ in series],
        "ok": bool(ok),
    }


def diagnose_c2_monitor(snapshots, cfg: DiagnosticsConfig = None, l=None, factor: float = 1.05, raise_on_fail: bool = False) -> dict:
    """C^2 monitor over a list of (t, GridFunction) checkpoints; l defaults from the first one."""
    cfg = cfg or DiagnosticsConfig()
    if l is None:
        l = cfg.affine_l or default_affine(snapshots[0][1], cfg.slope)
    series = []
    for t, u in snapshots:
        val, node = c2_quantity(u, l, cfg.beta)
        series.append((t, val, node))
    out = _series_check(series, factor, 0.0, "c2", raise_on_fail)
    out["beta"] = cfg.beta
    out["affine_l"] = [list(map(float, l[0])), float(l[1])]
    return out


def c2_beta_sensitivity(snapshots, cfg: DiagnosticsConfig = None, betas=(2.0, 5.0, 10.0)) -> dict:
    cfg = cfg or DiagnosticsConfig()
    l = cfg.affine_l or default_affine(snapshots[0][1], cfg.slope)
    out = {}
    for b in betas:
        r = diagnose_c2_monitor(snapshots, DiagnosticsConfig(cfg.lambda_shrink, b, cfg.affine_l, cfg.slope), l=l)
        out[str(b)] = {"initial": r["initial"], "max": r["max"], "ok": r["ok"]}
    return out


def diagnose_velocity_bound(states, l=None, slope: float = 0.5, factor: float = 1.05, margin: float = 0.0, raise_on_fail: bool = False) -> dict:
    """(l - u) du/dt over a list of FlowState checkpoints (n = 2 only)."""
    first = states[0]
    if first.u.grid.n != 2:
        raise DimensionUnsupported("the velocity monitor is only available for n = 2")
    if l is None:
        l = default_affine(first.u, slope)
    series = []
    for st in states:
        val, node = velocity_quantity(st, l)
        series.append((st.t, val, node))
    out = _series_check(series, factor, margin, "velocity", raise_on_fail)
    out["affine_l"] = [list(map(float, l[0])), float(l[1])]
    return out


# --- boosts -----------------------------------------------------------------------


def boost_eval(u, phi: float, x, tol: float = 1e-11, max_iter: int = 200) -> np.ndarray:
    """Height of the boosted graph of a spacelike function u above the points x.

    The boost mixes x^1 and the height: (y, u(y)) -> (cosh(phi) y^1 + sinh(phi) u, y', sinh(phi) y^1 + cosh(phi) u).
    For x we solve cosh(phi) s + sinh(phi) u(s, x') = x^1 by bracketed secant/bisection;
    the left side has slope in [e^-|phi|, e^|phi|].
    """
    x = np.asarray(x, dtype=float)
    if phi == 0.0:
        return np.asarray(u(x), dtype=float)
    ch, sh = math.cosh(phi), math.sinh(phi)
    x1 = x[..., 0]

    def at(s):
        y = x.copy()
        y[..., 0] = s
        return np.asarray(u(y), dtype=float)

    def G(s):
        val = at(s)
        return ch * s + sh * val - x1, val

    s0 = x1 / ch
    g0, _ = G(s0)
    width = np.abs(g0) * math.exp(abs(phi)) * (1 + 1e-9) + 1e-12
    lo, hi = s0 - width, s0 + width
    glo, _ = G(lo)
    ghi, _ = G(hi)
    for _ in range(max_iter):
        # Illinois-style regula falsi with a bisection fallback
        denom = ghi - glo
        s = np.where(denom > 0, lo - glo * (hi - lo) / np.where(denom > 0, denom, 1.0), 0.5 * (lo + hi))
        bad = (s <= lo) | (s >= hi) | ~np.isfinite(s)
        s = np.where(bad, 0.5 * (lo + hi), s)
        gs, _ = G(s)
        neg = gs < 0
        lo, glo = np.where(neg, s, lo), np.where(neg, gs, glo)
        hi, ghi = np.where(neg, hi, s), np.where(neg, ghi, gs)
        # keep the bracket shrinking geometrically
        mid = 0.5 * (lo + hi)
        gm, _ = G(mid)
        negm = gm < 0
        lo, glo = np.where(negm, mid, lo), np.where(negm, gm, glo)
        hi, ghi = np.where(negm, hi, mid), np.where(negm, ghi, gm)
        if np.all(hi - lo <= tol * (1.0 + np.abs(lo))):
            break
    s = np.where(np.abs(glo) < np.abs(ghi), lo, hi)
    return sh * s + ch * at(s)


def diagnose_boost_closeness(u, v, phi0: float, radii=(10.0, 20.0, 40.0, 80.0), n: int = 2, samples: int = 360, rapidities: int = 7, raise_on_fail: bool = False) -> dict:
    radii = [float(r) for r in radii]
    phis = np.linspace(-phi0, phi0, rapidities) if phi0 > 0 else np.zeros(1)
    table = []
    sups = []
    for R in radii:
        pts = R * sample_sphere(n, samples)
        row = []
        for phi in phis:
            d = np.abs(boost_eval(u, float(phi), pts) - boost_eval(v, float(phi), pts))
            row.append(float(np.max(d)))
        table.append(row)
        sups.append(max(row))
    decreasing = all(b < a for a, b in zip(sups, sups[1:])) or all(s == 0.0 for s in sups)
    out = {
        "radii": radii,
        "rapidities": phis.tolist(),
        "table": table,
        "sup_over_phi": sups,
        "decreasing": bool(decreasing),
        "ok": bool(decreasing),
    }
    if raise_on_fail and not decreasing:
        i = next(i for i in range(1, len(sups)) if sups[i] >= sups[i - 1])
        raise NotDecreasing(radii[i], sups)
    return out
