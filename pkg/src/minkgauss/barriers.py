"""Lower and upper barriers built from finite semitrough families.

lower(x) = max over sub-balls B of F of z_{k1,B}(x)
upper(x) = min over super-balls B of F of z_{k2,B}(x)

with k1 > k2.  Both are evaluable anywhere; values on solver grids are
memoized.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import GapTooSmall, VerificationFailed
from .grid import Grid
from .semitrough import make_semitrough
from .sphere import CapUnion, enumerate_subballs, enumerate_superballs, sample_sphere, support_function


@dataclass(frozen=True)
class BarrierConfig:
    k1: float = 2.0
    k2: float = 0.5
    ball_count: int = 16
    verify_radius: float = 5.0

    def __post_init__(self):
        if not self.k1 > self.k2 > 0:
            raise ValueError(f"need k1 > k2 > 0, got k1={self.k1}, k2={self.k2}")
        if self.ball_count < 1:
            raise ValueError("ball_count must be >= 1")


@dataclass(eq=False)
class BarrierPair:
    F: CapUnion
    config: BarrierConfig
    lower_family: list
    upper_family: list
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def n(self) -> int:
        return self.F.dim

    def lower(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], -np.inf)
        for z in self.lower_family:
            out = np.maximum(out, z(x))
        return out

    def upper(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], np.inf)
        for z in self.upper_family:
            out = np.minimum(out, z(x))
        return out

    def V_F(self, x) -> np.ndarray:
        return support_function(self.F, x)

    def on_grid(self, grid: Grid) -> tuple:
        """(lower, upper, V_F) node arrays, memoized per grid."""
        key = (grid.n, grid.R, grid.h)
        with self._lock:
            hit = self._cache.get(key)
        if hit is None:
            pts = grid.points()
            hit = (self.lower(pts), self.upper(pts), self.V_F(pts))
            for a in hit:
                a.setflags(write=False)
            with self._lock:
                hit = self._cache.setdefault(key, hit)
        return hit

    def to_csv(self, path, grid: Grid) -> None:
        lo, up, vf = self.on_grid(grid)
        pts = grid.points().reshape(-1, grid.n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(grid.n)] + ["lower", "upper", "V_F"])
            for p, a, b, c in zip(pts, lo.ravel(), up.ravel(), vf.ravel()):
                w.writerow([format(float(v), ".17g") for v in (*p, a, b, c)])


def build_barriers(F: CapUnion, config: BarrierConfig, profile) -> BarrierPair:
    subs = enumerate_subballs(F, config.ball_count)
    sups = enumerate_superballs(F, config.ball_count)
    return BarrierPair(
        F=F,
        config=config,
        lower_family=[make_semitrough(c, config.k1, profile) for c in subs],
        upper_family=[make_semitrough(c, config.k2, profile) for c in sups],
    )


def _sphere_points(n: int, R: float, count: int) -> np.ndarray:
    return R * sample_sphere(n, count)


def ball_points(n: int, radius: float, spacing: float) -> np.ndarray:
    """Lattice points of spacing ``spacing`` inside the closed ball of given radius."""
    m = int(math.floor(radius / spacing))
    ax = spacing * np.arange(-m, m + 1)
    pts = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return pts[np.sum(pts**2, axis=-1) <= radius**2 + 1e-12]


def max_slope(func, pts: np.ndarray, spacing: float, seed: int = 0, pairs: int = 20000) -> float:
    """Largest difference quotient of ``func`` over lattice neighbours and random pairs in ``pts``."""
    vals = func(pts)
    n = pts.shape[1]
    worst = 0.0
    lookup = {tuple(np.round(p / spacing).astype(int)): i for i, p in enumerate(pts)}
    keys = np.round(pts / spacing).astype(int)
    for d in range(n):
        e = np.zeros(n, dtype=int)
        e[d] = 1
        idx_a, idx_b = [], []
        for i, k in enumerate(keys):
            j = lookup.get(tuple(k + e))
            if j is not None:
                idx_a.append(i)
                idx_b.append(j)
        if idx_a:
            q = np.abs(vals[idx_b] - vals[idx_a]) / spacing
            worst = max(worst, float(np.max(q)))
    rng = np.random.default_rng(seed)
    a = rng.integers(0, len(pts), pairs)
    b = rng.integers(0, len(pts), pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    dist = np.sqrt(np.sum((pts[a] - pts[b]) ** 2, axis=-1))
    worst = max(worst, float(np.max(np.abs(vals[a] - vals[b]) / dist)))
    return worst


def verify_barriers(
    pair: BarrierPair,
    radii=(10.0, 20.0, 40.0, 80.0),
    samples: int = 720,
    spacing: float = 0.25,
    raise_on_fail: bool = True,
    order_tol: float = 1e-9,
) -> dict:
    """Asymptotic defect per radius, spacelike margin and compact gap of a barrier pair.

    The ordering lower <= upper is accepted up to ``order_tol * (1 + |x|)``:
    far out both families sit on the same lightcone asymptote and differ only
    by the root-finding error of the boosted evaluation.
    """
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be increasing")
    n = pair.n
    defects, witnesses = [], []
    order_min = np.inf
    order_scaled = np.inf
    for R in radii:
        pts = _sphere_points(n, R, samples)
        lo, up, vf = pair.lower(pts), pair.upper(pts), pair.V_F(pts)
        d = np.abs(lo - vf) + np.abs(up - vf)
        k = int(np.argmax(d))
        defects.append(float(d[k]))
        witnesses.append(pts[k].tolist())
        order_min = min(order_min, float(np.min(up - lo)))
        order_scaled = min(order_scaled, float(np.min((up - lo) / (1.0 + R))))
    K = pair.config.verify_radius
    comp = ball_points(n, K, spacing)
    lo, up, vf = pair.lower(comp), pair.upper(comp), pair.V_F(comp)
    gap_lower = lo - vf
    gap_pair = up - lo
    delta = float(min(np.min(gap_lower), np.min(gap_pair)))
    slope_lo = max_slope(pair.lower, comp, spacing)
    slope_up = max_slope(pair.upper, comp, spacing)
    theta = 1.0 - max(slope_lo, slope_up)
    order_min = min(order_min, float(np.min(gap_pair)))
    order_scaled = min(order_scaled, float(np.min(gap_pair)) / (1.0 + K))
    report = {
        "radii": radii,
        "defects": defects,
        "defect_witnesses": witnesses,
        "defects_decreasing": all(b < a for a, b in zip(defects, defects[1:])),
        "compact_radius": K,
        "delta": delta,
        "delta_witness": comp[int(np.argmin(np.minimum(gap_lower, gap_pair)))].tolist(),
        "theta": theta,
        "max_slope_lower": slope_lo,
        "max_slope_upper": slope_up,
        "min_upper_minus_lower": order_min,
    }
    report["ok"] = bool(report["defects_decreasing"] and delta > 0 and theta > 0 and order_scaled >= -order_tol)
    if raise_on_fail and not report["ok"]:
        if not report["defects_decreasing"]:
            i = next(i for i in range(1, len(defects)) if defects[i] >= defects[i - 1])
            raise VerificationFailed("asymptotic defect decreasing", witnesses[i], f"defects {defects}")
        if order_scaled < -order_tol:
            raise VerificationFailed("lower <= upper", None, f"min(upper - lower) = {order_min}")
        if delta <= 0:
            raise VerificationFailed("compact gap delta > 0", report["delta_witness"], f"delta = {delta}")
        raise VerificationFailed("spacelike margin theta > 0", None, f"theta = {theta}")
    return report


def bump_weights(n: int, radius: float, points_per_radius: int = 4):
    """Quadrature offsets and normalized weights of the kernel (1 - |y|^2/r^2)^3 on the ball."""
    s = radius / points_per_radius
    offs = ball_points(n, radius, s)
    w = np.clip(1.0 - np.sum(offs**2, axis=-1) / radius**2, 0.0, None) ** 3
    keep = w > 0
    offs, w = offs[keep], w[keep]
    return offs, w / w.sum()


def mollify(func, pts: np.ndarray, radius: float, points_per_radius: int = 4) -> np.ndarray:
    """Convolution of ``func`` with the polynomial bump of the given radius, at ``pts``."""
    if radius <= 0:
        return func(pts)
    offs, w = bump_weights(pts.shape[-1], radius, points_per_radius)
    vals = func(pts[:, None, :] - offs[None, :, :])
    return vals @ w


def mollified_boundary(
    pair: BarrierPair,
    grid: Grid,
    smoothing_radius: float,
    gap_fraction: float = 0.5,
    points_per_radius: int = 4,
    mollify_interior: bool = False,
) -> dict:
    """Smoothed lower barrier, lifted by a fraction of the barrier gap, on the boundary ring.

    Returns the full-grid data array (interior entries hold the warm start
    lower + gap_fraction * (upper - lower)) together with diagnostics.  With
    ``mollify_interior`` the warm start uses the mollified lower barrier
    everywhere.  Together with ``gap_fraction = 0`` this gives convex data
    even when the upper barrier, a minimum of semitroughs, has concave
    creases: mollifying a convex function lifts it and keeps it convex.
    """
    if smoothing_radius != 0 and smoothing_radius < 2 * grid.h - 1e-12:
        raise ValueError("smoothing_radius must be at least two grid spacings (or zero)")
    mask = grid.boundary_mask()
    pts = grid.points()[mask]
    lo_all, up_all, _ = pair.on_grid(grid)
    lo, up = lo_all[mask], up_all[mask]
    moll = mollify(pair.lower, pts, smoothing_radius, points_per_radius)
    err = moll - lo
    gap = up - lo
    if np.any(gap < 2 * np.abs(err) - 1e-15) and gap_fraction > 0:
        k = int(np.argmax(2 * np.abs(err) - gap))
        raise GapTooSmall(f"gap {gap[k]:.3g} below twice the mollification error {err[k]:.3g} at {pts[k].tolist()}")
    base = lo_all
    if mollify_interior and smoothing_radius > 0:
        base = mollify(pair.lower, grid.points().reshape(-1, grid.n), smoothing_radius, points_per_radius).reshape(grid.shape)
    data = np.array(base + gap_fraction * (up_all - lo_all))
    data[mask] = moll + gap_fraction * gap
    ring = data[mask]
    below = float(np.min(ring - lo))
    above = float(np.min(up - ring))
    return {
        "data": data,
        "mollified": moll,
        "mollification_error_max": float(np.max(np.abs(err))),
        "margin_below": below,
        "margin_above": above,
        "within_barriers": bool(below >= 0 and above >= 0),
    }
