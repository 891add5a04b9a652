"""Geometry of the ideal boundary S^{n-1}.

Sets F on the sphere are finite unions of closed spherical caps.  The
support function V_F(x) = sup_{lam in F} x.lam, distances on the sphere,
families of sub- and super-caps used by the barrier construction and the
Euclidean convex hull of F inside the Klein ball live here.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateHull, EmptyFamily, InvalidCapUnion

UNIT_TOL = 1e-12


def unit_vector(coords) -> np.ndarray:
    """Return a read-only normalized copy of ``coords``."""
    v = np.array(coords, dtype=float).reshape(-1)
    nrm = np.linalg.norm(v)
    if not np.isfinite(nrm) or nrm == 0.0:
        raise ValueError("cannot normalize a zero or non-finite vector")
    v = v / nrm
    v.setflags(write=False)
    return v


def basis_vector(n: int, i: int = 0) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    e.setflags(write=False)
    return e


def sphere_distance(x, y):
    """Great-circle distance arccos(x.y), computed with atan2 for accuracy."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dot = np.sum(x * y, axis=-1)
    yy = np.sum(y * y, axis=-1)
    # |x| |y| sin(angle) as the norm of the component of x orthogonal to y, times |y|
    perp = x - (dot / yy)[..., None] * y
    cross = np.linalg.norm(perp, axis=-1) * np.sqrt(yy)
    return np.arctan2(cross, dot)


def geodesic_point(center, direction, angle):
    """Point at arc length ``angle`` from ``center`` along tangent ``direction``."""
    return math.cos(angle) * np.asarray(center) + math.sin(angle) * np.asarray(direction)


def tangent_frame(center) -> np.ndarray:
    """Orthonormal basis of the tangent space at ``center`` (rows)."""
    c = np.asarray(center, dtype=float)
    n = c.size
    # Complete c to an orthonormal basis by QR on [c | I].
    q, _ = np.linalg.qr(np.column_stack([c, np.eye(n)]))
    frame = q[:, 1:n].T
    return frame


@dataclass(frozen=True, eq=False)
class SphereCap:
    """Closed geodesic ball {x in S^{n-1}: d_S(x, center) <= radius}."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", unit_vector(self.center))
        r = float(self.radius)
        if not (0.0 < r < math.pi):
            raise InvalidCapUnion(f"cap radius must lie in (0, pi), got {r}")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.center.size

    def contains(self, x, tol: float = 0.0):
        return sphere_distance(x, self.center) <= self.radius + tol

    def support(self, x):
        """V_B(x) for arbitrary x in R^n (vectorized over leading axes)."""
        x = np.asarray(x, dtype=float)
        norm = np.linalg.norm(x, axis=-1)
        along = x @ self.center
        # |x - (x.c) c| directly; sqrt(|x|^2 - along^2) cancels near the axis
        perp = np.linalg.norm(x - along[..., None] * self.center, axis=-1)
        outside = along * math.cos(self.radius) + perp * math.sin(self.radius)
        return np.where(along >= norm * math.cos(self.radius), norm, outside)

    def complement(self) -> "SphereCap":
        """Closure of the complement, a cap of radius pi - radius."""
        return SphereCap(-self.center, math.pi - self.radius)

    def contains_cap(self, other: "SphereCap", tol: float = 1e-12) -> bool:
        return float(sphere_distance(self.center, other.center)) + other.radius <= self.radius + tol

    def as_dict(self) -> dict:
        return {"center": [float(c) for c in self.center], "radius": self.radius}

    def __repr__(self):
        c = ", ".join(f"{v:.6g}" for v in self.center)
        return f"SphereCap(center=({c}), radius={self.radius:.6g})"


def _merge_arcs(caps):
    """Merge arcs on S^1 into disjoint closed arcs; returns list of (start, length, source cap)."""
    arcs = []
    for cap in caps:
        ang = math.atan2(cap.center[1], cap.center[0])
        arcs.append(((ang - cap.radius) % (2 * math.pi), 2 * cap.radius, cap))
    arcs.sort(key=lambda a: (a[0], a[1]))
    merged = []
    for start, length, cap in arcs:
        if merged and start <= merged[-1][0] + merged[-1][1]:
            s0, l0, c0 = merged[-1]
            if start + length - s0 > l0:
                merged[-1] = (s0, start + length - s0, None)
        else:
            merged.append((start, length, cap))
    # wrap-around merge of the last arc into the first
    while len(merged) > 1:
        s_last, l_last, _ = merged[-1]
        s0, l0, _ = merged[0]
        if s_last + l_last >= s0 + 2 * math.pi:
            end = max(s_last + l_last, s0 + l0 + 2 * math.pi)
            merged = [(s_last, end - s_last, None)] + merged[1:-1]
        else:
            break
    return merged


def _arc_cap(start: float, length: float, source=None) -> SphereCap:
    if source is not None:
        return source
    mid = start + 0.5 * length
    return SphereCap(np.array([math.cos(mid), math.sin(mid)]), 0.5 * length)


@dataclass(frozen=True, eq=False)
class CapUnion:
    """F as a finite union of closed caps with rolling-ball radius ``delta0``.

    On S^1 overlapping arcs are merged.  For n >= 3 caps must be pairwise
    disjoint or nested (nested ones are dropped); overlapping caps would
    give F a corner, which no positive rolling-ball radius can accommodate.
    """

    caps: tuple
    delta0: float = field(init=False)
    gaps: tuple = field(init=False)

    def __post_init__(self):
        caps = [c if isinstance(c, SphereCap) else SphereCap(*c) for c in self.caps]
        if not caps:
            raise InvalidCapUnion("F needs at least one cap")
        n = caps[0].dim
        if any(c.dim != n for c in caps):
            raise InvalidCapUnion("caps of mixed dimension")
        if n < 2:
            raise InvalidCapUnion("the ideal boundary S^{n-1} needs n >= 2")
        if n == 2:
            merged = _merge_arcs(caps)
            if len(merged) == 1 and merged[0][1] >= 2 * math.pi - 1e-12:
                raise InvalidCapUnion("caps cover the whole circle; complement is empty")
            caps = [_arc_cap(s, l, src) for s, l, src in merged]
            gaps = []
            for i, (s, l, src) in enumerate(merged):
                s_next = merged[(i + 1) % len(merged)][0]
                if i + 1 == len(merged):
                    s_next += 2 * math.pi
                if len(merged) == 1 and src is not None:
                    gaps.append(src.complement())
                else:
                    gaps.append(_arc_cap(s + l, s_next - (s + l)))
            radii = [c.radius for c in caps] + [g.radius for g in gaps]
            delta0 = min(radii)
            gaps = tuple(gaps)
        else:
            kept = []
            for i, c in enumerate(caps):
                inside = any(
                    j != i and o.contains_cap(c) and not (c.contains_cap(o) and j > i)
                    for j, o in enumerate(caps)
                )
                if not inside:
                    kept.append(c)
            caps = kept
            delta0 = min(min(c.radius for c in caps), min(math.pi - c.radius for c in caps))
            for i in range(len(caps)):
                for j in range(i + 1, len(caps)):
                    gap = float(sphere_distance(caps[i].center, caps[j].center)) - caps[i].radius - caps[j].radius
                    if gap <= 0:
                        raise InvalidCapUnion(
                            "overlapping or touching caps give F a boundary corner "
                            f"(caps {i} and {j}, gap {gap:.3g})"
                        )
                    delta0 = min(delta0, 0.5 * gap)
            gaps = ()
        if not delta0 > 0:
            raise InvalidCapUnion("rolling-ball radius is not positive")
        object.__setattr__(self, "caps", tuple(caps))
        object.__setattr__(self, "delta0", float(delta0))
        object.__setattr__(self, "gaps", gaps)
        witness = self.rolling_ball_witness()
        if witness is not None:
            raise InvalidCapUnion(f"rolling-ball test failed at {witness}")

    @property
    def dim(self) -> int:
        return self.caps[0].dim

    @property
    def phi0(self) -> float:
        """Largest admissible |rapidity| for caps with delta0 <= radius <= pi - delta0."""
        return math.atanh(math.cos(self.delta0))

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1], dtype=bool)
        for cap in self.caps:
            out |= cap.contains(x, tol)
        return out

    def rolling_ball_witness(self, samples: int = 2000):
        """Sampled check that every complement point sits in a delta0-ball avoiding F.

        Returns a failing sample point, or None.
        """
        pts = sample_sphere(self.dim, samples)
        d = dist_to_set(pts, self)
        for p, dist in zip(pts, d):
            if dist <= 0 or dist >= self.delta0:
                continue
            # exterior tangent ball of radius delta0 at the nearest point of F
            k = int(np.argmin([max(0.0, float(sphere_distance(p, c.center)) - c.radius) for c in self.caps]))
            cap = self.caps[k]
            tau = p - (p @ cap.center) * cap.center
            tau /= np.linalg.norm(tau)
            centre = geodesic_point(cap.center, tau, cap.radius + self.delta0)
            if dist_to_set(centre, self) < self.delta0 - 1e-9:
                return p
        return None

    def as_dict(self) -> dict:
        return {"caps": [c.as_dict() for c in self.caps], "delta0": self.delta0}

    @classmethod
    def from_dict(cls, data) -> "CapUnion":
        return cls(tuple(SphereCap(c["center"], c["radius"]) for c in data["caps"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "CapUnion":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sample_sphere(n: int, count: int) -> np.ndarray:
    """Deterministic near-uniform points on S^{n-1} (n = 2 angles, n = 3 Fibonacci)."""
    if n == 2:
        ang = 2 * math.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if n == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        r = np.sqrt(1 - z**2)
        golden = math.pi * (3 - math.sqrt(5))
        return np.column_stack([r * np.cos(golden * i), r * np.sin(golden * i), z])
    rng = np.random.default_rng(12345)
    pts = rng.normal(size=(count, n))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def support_function(F: CapUnion, x):
    """V_F(x) = max over caps of the cap support function."""
    x = np.asarray(x, dtype=float)
    return np.max(np.stack([cap.support(x) for cap in F.caps]), axis=0)


def dist_to_set(x, F: CapUnion):
    """Spherical distance from unit vector(s) x to F."""
    x = np.asarray(x, dtype=float)
    return np.min(
        np.stack([np.maximum(0.0, sphere_distance(x, cap.center) - cap.radius) for cap in F.caps]), axis=0
    )


def _tangent_directions(center, level: int) -> list:
    """Tangent directions at ``center``; nested under increasing ``level``."""
    frame = tangent_frame(center)
    if frame.shape[0] == 1:
        return [frame[0], -frame[0]]
    if frame.shape[0] == 2:
        m = 4 * 2**level
        return [math.cos(2 * math.pi * k / m) * frame[0] + math.sin(2 * math.pi * k / m) * frame[1] for k in range(m)]
    dirs = sample_sphere(frame.shape[0], 8 * 2**level)
    return [d @ frame for d in dirs]


def _radius_ladder(lo: float, hi: float, level: int) -> list:
    if hi <= lo * (1 + 1e-12):
        return [lo]
    m = 2**level
    return [lo * (hi / lo) ** (j / m) for j in range(m + 1)]


def _nested_family(base, candidates_at_level, count: int) -> list:
    """Prefix of a fixed infinite sequence: families are nested in ``count``."""
    family = list(base)
    keys = {(tuple(np.round(c.center, 12)), round(c.radius, 12)) for c in family}
    level = 0
    while len(family) < count and level < 12:
        for cap in candidates_at_level(level):
            key = (tuple(np.round(cap.center, 12)), round(cap.radius, 12))
            if key not in keys:
                keys.add(key)
                family.append(cap)
        level += 1
    return family[: max(count, len(base))]


def enumerate_subballs(F: CapUnion, count: int) -> list:
    """Caps B inside F with radius >= delta0; F's own caps come first."""
    if count < 1:
        raise ValueError("count must be >= 1")
    d0 = F.delta0
    base = [c for c in F.caps if c.radius >= d0 - 1e-15]
    if not base:
        raise EmptyFamily("no cap of radius delta0 fits inside F")

    def level_caps(level):
        out = []
        for cap in F.caps:
            for rho in _radius_ladder(d0, cap.radius, level)[:-1]:
                for tau in _tangent_directions(cap.center, level):
                    out.append(SphereCap(geodesic_point(cap.center, tau, cap.radius - rho), rho))
        return out

    return _nested_family(base, level_caps, count)


def enumerate_superballs(F: CapUnion, count: int) -> list:
    """Caps containing F with radius <= pi - delta0, as complements of balls in the closed complement of F."""
    if count < 1:
        raise ValueError("count must be >= 1")
    d0 = F.delta0
    n = F.dim
    if n == 2:
        holes = list(F.gaps)
    elif len(F.caps) == 1:
        holes = [F.caps[0].complement()]
    else:
        holes = []
    base = [h.complement() for h in holes if h.radius >= d0 - 1e-15]

    def fits(ball):
        return ball.radius >= d0 - 1e-15 and bool(dist_to_set(ball.center, F) >= ball.radius - 1e-12)

    def level_caps(level):
        out = []
        if holes:
            for hole in holes:
                for rho in _radius_ladder(d0, hole.radius, level)[:-1]:
                    for tau in _tangent_directions(hole.center, level):
                        out.append(SphereCap(geodesic_point(hole.center, tau, hole.radius - rho), rho))
        else:
            for cap in F.caps:
                for tau in _tangent_directions(cap.center, level):
                    # grow the exterior tangent ball while it stays off F
                    hi = d0
                    for rho in _radius_ladder(d0, math.pi - cap.radius, level + 2):
                        ball = SphereCap(geodesic_point(cap.center, tau, cap.radius + rho), rho)
                        if not fits(ball):
                            break
                        hi = rho
                    for rho in _radius_ladder(d0, hi, level):
                        out.append(SphereCap(geodesic_point(cap.center, tau, cap.radius + rho), rho))
            for p in sample_sphere(n, 16 * 4**level):
                d = float(dist_to_set(p, F))
                if d >= d0 and d < math.pi - 1e-9:
                    out.append(SphereCap(p, d))
        return [b.complement() for b in out if fits(b)]

    family = _nested_family(base, level_caps, count)
    if not family:
        raise EmptyFamily("no super-ball of radius <= pi - delta0 contains F")
    return family


@dataclass(frozen=True, eq=False)
class ConvexBody:
    """Convex polytope {p : A p + b <= 0} with its vertex list."""

    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def signed_distance(self, p):
        """Max over facets of the signed distance (positive outside)."""
        p = np.asarray(p, dtype=float)
        return np.max(p @ self.normals.T + self.offsets, axis=-1)

    def contains(self, p, slack: float = 0.0):
        return self.signed_distance(p) <= slack

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.vertices.shape[1])])
            for v in self.vertices:
                w.writerow([repr(float(c)) for c in v])


def cap_samples(cap: SphereCap, resolution: int) -> np.ndarray:
    """Points on a cap: boundary rings plus interior rings and the center."""
    n = cap.dim
    if n == 2:
        t = np.linspace(-cap.radius, cap.radius, resolution)
        ang = math.atan2(cap.center[1], cap.center[0]) + t
        return np.column_stack([np.cos(ang), np.sin(ang)])
    frame = tangent_frame(cap.center)
    rings = max(2, resolution // 2)
    pts = [cap.center]
    dirs = sample_sphere(frame.shape[0], resolution) @ frame
    for j in range(1, rings + 1):
        s = cap.radius * j / rings
        pts.extend(math.cos(s) * cap.center + math.sin(s) * d for d in dirs)
    return np.array(pts)


def klein_hull(F: CapUnion, resolution: int = 64) -> ConvexBody:
    """Euclidean convex hull of F in the closed unit ball (Klein geodesics are chords)."""
    if resolution < 8:
        raise ValueError("resolution must be >= 8 samples per cap")
    pts = np.vstack([cap_samples(cap, resolution) for cap in F.caps])
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateHull(f"sampled points of F are affinely dependent: {exc}") from exc
    eq = hull.equations
    return ConvexBody(pts[hull.vertices], eq[:, :-1], eq[:, -1])
