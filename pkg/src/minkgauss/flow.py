"""Explicit time stepping of the logarithmic Gauss curvature flow

    du/dt = sqrt(1 - |Du|^2) (log K[u] - fhat(x, u, t))

with Dirichlet data frozen at the initial boundary values.  The ramp fhat
starts at log K[u0] near the boundary (so the initial data are compatible)
and relaxes to log f0 by time epsilon.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import NoDecay, OrderingViolated, StepCollapse, Timeout
from .grid import Grid, GridFunction, hessian, interior_gradient, load_binary, save_binary


def smooth_step(y):
    """C-infinity transition from 0 (y <= 0) to 1 (y >= 1)."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
        b = np.where(y < 1, np.exp(-1.0 / np.where(y < 1, 1.0 - y, 1.0)), 0.0)
    return a / (a + b)


def zeta(s):
    """1 on [0, 1/3], 0 on [2/3, inf), smooth in between."""
    return 1.0 - smooth_step(3.0 * np.asarray(s, dtype=float) - 1.0)


@dataclass
class RampSpec:
    epsilon: float = 0.1
    eta_margin: float = 1.0
    initial_log_K: Optional[np.ndarray] = None
    enabled: bool = True
    barriers: Optional[tuple] = None  # (lower, upper) node arrays for the graph cutoff
    _eta_x: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def time_factor(self, t: float) -> float:
        return float(zeta(t / self.epsilon)) if self.enabled else 0.0

    def eta(self, grid: Grid, u_interior: Optional[np.ndarray] = None) -> np.ndarray:
        """Spatial cutoff at interior nodes: 1 next to the boundary, 0 deep inside and on barrier graphs."""
        key = (grid.n, grid.R, grid.h)
        if self._eta_x is None or self._eta_x[0] != key:
            pts = grid.interior_points()
            dist = grid.R - np.max(np.abs(pts), axis=-1)
            self._eta_x = (key, zeta(dist / self.eta_margin))
        out = self._eta_x[1]
        if self.barriers is not None and u_interior is not None:
            lo, up = (np.asarray(b)[grid.interior] for b in self.barriers)
            gap = np.maximum(up - lo, 1e-300)
            room = np.minimum(u_interior - lo, up - u_interior) / gap
            out = out * smooth_step(4.0 * room)
        return out


@dataclass
class FlowState:
    u: GridFunction
    t: float
    ramp: RampSpec
    f0: float = 1.0
    dt_last: float = 0.0
    velocity_history: list = field(default_factory=list)
    dt_factor: float = 1.0
    streak: int = 0
    steps: int = 0
    rejections: int = 0
    min_convexity: float = float("inf")
    min_space_margin: float = float("inf")
    pre_ramp_peak: float = 0.0
    _parts: object = field(default=None, repr=False, compare=False)

    def clone(self) -> "FlowState":
        return replace(
            self,
            u=self.u.copy(),
            velocity_history=list(self.velocity_history),
            _parts=None,
        )

    def parts(self):
        if self._parts is None:
            self._parts = _log_curvature_fast(self.u)
        return self._parts


def init_flow(u0: GridFunction, f0: float = 1.0, epsilon: float = 0.1, eta_margin: float = 1.0, ramp: bool = True, barriers=None) -> FlowState:
    lk = _log_curvature_fast(u0)[0]
    spec = RampSpec(epsilon=epsilon, eta_margin=eta_margin, initial_log_K=lk, enabled=ramp, barriers=barriers)
    return FlowState(u=u0.copy(), t=0.0, ramp=spec, f0=f0)


class Parts(NamedTuple):
    """Curvature quantities at interior nodes for one iterate."""

    logK: np.ndarray
    s: np.ndarray  # sqrt(1 - |Du|^2)
    A: np.ndarray  # (D^2u)^-1
    q: np.ndarray  # |Du|^2
    emin: np.ndarray  # smallest Hessian eigenvalue
    trA: np.ndarray
    offA: np.ndarray  # sum of |A_ij| over i != j
    amin: np.ndarray  # smallest diagonal entry of A


def _parts_2d(a: np.ndarray, h: float) -> Parts:
    """Slice-based n = 2 version of the curvature parts (the flow's hot loop)."""
    c = a[1:-1, 1:-1]
    xp, xm, yp, ym = a[2:, 1:-1], a[:-2, 1:-1], a[1:-1, 2:], a[1:-1, :-2]
    ux = (xp - xm) / (2 * h)
    uy = (yp - ym) / (2 * h)
    h2 = h * h
    uxx = (xp - 2 * c + xm) / h2
    uyy = (yp - 2 * c + ym) / h2
    uxy = (a[2:, 2:] - a[2:, :-2] - a[:-2, 2:] + a[:-2, :-2]) / (4 * h2)
    q = ux * ux + uy * uy
    det = uxx * uyy - uxy * uxy
    tr = uxx + uyy
    emin = 0.5 * (tr - np.sqrt((uxx - uyy) ** 2 + 4 * uxy * uxy))
    A = np.empty(c.shape + (2, 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        A[..., 0, 0] = uyy * inv
        A[..., 1, 1] = uxx * inv
        A[..., 0, 1] = A[..., 1, 0] = -uxy * inv
        logK = np.log(det) - 2.0 * np.log1p(-q)
        s = np.sqrt(1.0 - q)
    return Parts(logK, s, A, q, emin, tr * inv, 2.0 * np.abs(uxy * inv), np.minimum(uxx, uyy) * inv)


def _log_curvature_fast(u: GridFunction) -> Parts:
    n = u.grid.n
    if n == 2:
        return _parts_2d(u.values, u.grid.h)
    Du = interior_gradient(u)
    q = np.sum(Du * Du, axis=-1)
    D2 = hessian(u)
    ev = np.linalg.eigvalsh(D2)
    det = np.prod(ev, axis=-1)
    emin = ev[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        A = np.linalg.inv(D2)
        logK = np.log(det) - 0.5 * (n + 2) * np.log1p(-q)
        s = np.sqrt(1.0 - q)
    diag = np.diagonal(A, axis1=-2, axis2=-1)
    off = np.sum(np.abs(A), axis=(-2, -1)) - np.sum(np.abs(diag), axis=-1)
    return Parts(logK, s, A, q, emin, np.sum(diag, axis=-1), off, np.min(diag, axis=-1))


def fhat(state: FlowState, u_interior: np.ndarray, t: float) -> np.ndarray:
    base = math.log(state.f0)
    ramp = state.ramp
    tf = ramp.time_factor(t)
    if tf == 0.0 or ramp.initial_log_K is None:
        return np.full(u_interior.shape, base)
    eta = ramp.eta(state.u.grid, u_interior)
    return eta * tf * (ramp.initial_log_K - base) + base


def velocity(state: FlowState):
    """(du/dt, log K - fhat, parts) at interior nodes of the current state."""
    p = state.parts()
    F = p.logK - fhat(state, state.u.interior_values, state.t)
    return p.s * F, F, p


def stable_dt(grid: Grid, p: Parts) -> float:
    """0.4 h^2 / max s (tr A + |off-diagonal A| / 2), with an advective guard from the first-order term."""
    dt = 0.4 * grid.h**2 / np.max(p.s * (p.trA + 0.5 * p.offA))
    # first-order part s (n+2) Du.Dv / (1 - |Du|^2): keep the centered stencil monotone
    bb = (grid.n + 2) ** 2 * p.q / p.s
    adv = np.min(2.0 * p.amin / np.maximum(bb, 1e-300))
    return float(min(dt, adv)) if np.isfinite(adv) else float(dt)


def step(state: FlowState, dt: Optional[float] = None, dt_min: float = 1e-14, eps_space: float = 1e-14, eps_convex: float = 0.0) -> FlowState:
    """One explicit step; dt defaults to (and is capped by) the stability bound times the control factor."""
    vel, F, parts = velocity(state)
    grid = state.u.grid
    bound = stable_dt(grid, parts)
    dt = bound * state.dt_factor if dt is None else min(dt, bound)
    V = float(np.max(np.abs(F)))
    new = state.clone()
    new.velocity_history.append((state.t, V))
    if state.t < state.ramp.epsilon:
        new.pre_ramp_peak = max(new.pre_ramp_peak, V)
    while True:
        cand = state.u.values.copy()
        cand[grid.interior] += dt * vel
        cu = GridFunction(grid, cand)
        cp = _log_curvature_fast(cu)
        qc, ec = cp.q, cp.emin
        if np.all(ec > eps_convex) and np.all(qc < 1.0 - eps_space):
            break
        new.rejections += 1
        new.dt_factor *= 0.5
        new.streak = 0
        dt *= 0.5
        if dt < dt_min:
            raise StepCollapse(f"time step {dt:.3g} below minimum at t={state.t:.6g}")
    new.u = cu
    new.t = state.t + dt
    new.dt_last = dt
    new.steps += 1
    new.streak += 1
    if new.streak >= 10 and new.dt_factor < 1.0:
        new.dt_factor = min(1.0, 2.0 * new.dt_factor)
        new.streak = 0
    new.min_convexity = min(state.min_convexity, float(np.min(ec)))
    new.min_space_margin = min(state.min_space_margin, float(np.min(1.0 - qc)))
    return new


def _advance(state: FlowState, dt_min: float) -> FlowState:
    """In-place variant of ``step`` used by long runs (avoids copying the history)."""
    vel, F, parts = velocity(state)
    grid = state.u.grid
    dt = stable_dt(grid, parts) * state.dt_factor
    V = float(np.max(np.abs(F)))
    state.velocity_history.append((state.t, V))
    if state.t < state.ramp.epsilon:
        state.pre_ramp_peak = max(state.pre_ramp_peak, V)
    base = state.u.values
    while True:
        cand = base.copy()
        cand[grid.interior] += dt * vel
        cu = GridFunction.__new__(GridFunction)
        cu.grid, cu.values, cu.meta = grid, cand, state.u.meta
        parts = _log_curvature_fast(cu)
        qc, ec = parts[3], parts[4]
        if np.all(ec > 0.0) and np.all(qc < 1.0):
            break
        state.rejections += 1
        state.dt_factor *= 0.5
        state.streak = 0
        dt *= 0.5
        if dt < dt_min:
            raise StepCollapse(f"time step {dt:.3g} below minimum at t={state.t:.6g}")
    state.u = cu
    state._parts = parts
    state.t += dt
    state.dt_last = dt
    state.steps += 1
    state.streak += 1
    if state.streak >= 10 and state.dt_factor < 1.0:
        state.dt_factor = min(1.0, 2.0 * state.dt_factor)
        state.streak = 0
    state.min_convexity = min(state.min_convexity, float(np.min(ec)))
    state.min_space_margin = min(state.min_space_margin, float(np.min(1.0 - qc)))
    return state


def steady_residual(state: FlowState) -> float:
    logK = state.parts()[0]
    return float(np.max(np.abs(logK - math.log(state.f0))))


def decay_fit(history, t_start: float) -> dict:
    """Least-squares fit log V = log c2 - c3 t over records with t >= t_start."""
    h = np.array([(t, v) for t, v in history if t >= t_start and v > 0])
    if len(h) < 3:
        return {"c2": float("nan"), "c3": float("nan"), "r2": float("nan"), "points": int(len(h))}
    t, y = h[:, 0], np.log(h[:, 1])
    slope, icpt = np.polyfit(t, y, 1)
    pred = icpt + slope * t
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"c2": float(math.exp(icpt)), "c3": float(-slope), "r2": float(r2), "points": int(len(h))}


def post_ramp_monotone(history, epsilon: float, slack: float = 1e-10) -> dict:
    vals = [(t, v) for t, v in history if t >= epsilon]
    worst = 0.0
    witness = None
    for (t0, v0), (t1, v1) in zip(vals, vals[1:]):
        if v1 - v0 > worst:
            worst, witness = v1 - v0, t1
    v_eps = vals[0][1] if vals else float("nan")
    above = max((v - v_eps for _, v in vals), default=0.0)
    return {
        "max_increase": float(worst),
        "increase_time": witness,
        "non_increasing": bool(worst <= slack),
        "max_above_V_eps": float(above),
        "bounded_by_V_eps": bool(above <= slack),
    }


def run_to_steady(
    state: FlowState,
    tol: float = 1e-6,
    t_max: float = 1e3,
    max_steps: int = 10_000_000,
    dt_min: float = 1e-14,
    callback=None,
    callback_every: int = 0,
    require_decay: bool = True,
):
    """Advance until sup|log K - log f0| <= tol after the ramp, or raise Timeout past t_max."""
    state = state.clone()
    ramp_end = state.ramp.epsilon if state.ramp.enabled else 0.0
    while True:
        if state.t >= ramp_end:
            res = steady_residual(state)
            if res <= tol:
                state.velocity_history.append((state.t, res))
                break
        if state.t >= t_max or state.steps >= max_steps:
            raise Timeout(f"flow not steady at t={state.t:.6g} after {state.steps} steps")
        _advance(state, dt_min)
        if callback is not None and callback_every and state.steps % callback_every == 0:
            callback(state)
    fit = decay_fit(state.velocity_history, ramp_end)
    mono = post_ramp_monotone(state.velocity_history, ramp_end)
    report = {
        "t_final": state.t,
        "steps": state.steps,
        "rejections": state.rejections,
        "final_residual": steady_residual(state),
        "pre_ramp_peak": state.pre_ramp_peak,
        "min_convexity": state.min_convexity,
        "min_space_margin": state.min_space_margin,
        **{f"fit_{k}": v for k, v in fit.items()},
        **mono,
    }
    # A run that is already steady has nothing to fit.
    if require_decay and fit["points"] >= 3 and not fit["c3"] > 0:
        raise NoDecay(f"fitted decay rate {fit['c3']:.3g} is not positive")
    return state, report


def run_until(state: FlowState, times, dt_min: float = 1e-14) -> list:
    """Clone and advance, returning snapshots (t, values) at (or just past) each requested time."""
    state = state.clone()
    out = []
    for T in sorted(times):
        while state.t < T:
            _advance(state, dt_min)
        out.append((state.t, state.u.values.copy()))
    return out


def parabolic_comparison(a: FlowState, b: FlowState, times, tol: float = 1e-8, raise_on_fail: bool = True) -> dict:
    """Run both flows with a shared step sequence and check a.u >= b.u - tol at each checkpoint."""
    if a.u.grid != b.u.grid:
        raise ValueError("comparison requires a common grid")
    a, b = a.clone(), b.clone()
    worst = math.inf
    witness = None
    records = []
    grid = a.u.grid
    for T in sorted(times):
        while a.t < T - 1e-15:
            va, _, pa = velocity(a)
            vb, _, pb = velocity(b)
            dt = min(stable_dt(grid, pa), stable_dt(grid, pb), T - a.t)
            for st, v in ((a, va), (b, vb)):
                st.u.values[grid.interior] += dt * v
                st._parts = None
                st.t += dt
                st.steps += 1
        diff = a.u.values - b.u.values
        k = int(np.argmin(diff))
        m = float(diff.flat[k])
        records.append((a.t, m))
        if m < worst:
            worst, witness = m, (tuple(int(i) for i in np.unravel_index(k, diff.shape)), a.t)
    out = {"min_difference": worst, "witness": witness, "checkpoints": records, "ok": bool(worst >= -tol)}
    if raise_on_fail and not out["ok"]:
        raise OrderingViolated(witness, worst)
    return out


# --- checkpoints --------------------------------------------------------------


def save_checkpoint(state: FlowState, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_binary(state.u, d / "u.bin")
    with open(d / "velocity.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "V"])
        for t, v in state.velocity_history:
            w.writerow([format(t, ".17g"), format(v, ".17g")])
    meta = {
        "t": state.t,
        "f0": state.f0,
        "dt_last": state.dt_last,
        "dt_factor": state.dt_factor,
        "streak": state.streak,
        "steps": state.steps,
        "rejections": state.rejections,
        "pre_ramp_peak": state.pre_ramp_peak,
        "epsilon": state.ramp.epsilon,
        "eta_margin": state.ramp.eta_margin,
        "ramp_enabled": state.ramp.enabled,
    }
    (d / "state.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    if state.ramp.initial_log_K is not None:
        np.save(d / "initial_log_K.npy", state.ramp.initial_log_K)


def load_checkpoint(directory) -> FlowState:
    d = Path(directory)
    u = load_binary(d / "u.bin")
    meta = json.loads((d / "state.json").read_text())
    hist = []
    with open(d / "velocity.csv") as fh:
        r = csv.reader(fh)
        next(r)
        hist = [(float(a), float(b)) for a, b in r]
    lk_path = d / "initial_log_K.npy"
    lk = np.load(lk_path) if lk_path.exists() else None
    ramp = RampSpec(epsilon=meta["epsilon"], eta_margin=meta["eta_margin"], initial_log_K=lk, enabled=meta["ramp_enabled"])
    return FlowState(
        u=u,
        t=meta["t"],
        ramp=ramp,
        f0=meta["f0"],
        dt_last=meta["dt_last"],
        velocity_history=hist,
        dt_factor=meta["dt_factor"],
        streak=meta["streak"],
        steps=meta["steps"],
        rejections=meta["rejections"],
        pre_ramp_peak=meta["pre_ramp_peak"],
    )
