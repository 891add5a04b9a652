"""Uniform Cartesian grids on boxes [-R, R]^n and the discrete Gauss curvature.

Derivatives use second-order central differences at interior nodes; the
gradient falls back to second-order one-sided differences on the boundary
(``numpy.gradient`` with ``edge_order=2``).  Second derivatives, curvature and
everything built on them live on interior nodes only.
"""

from __future__ import annotations

import csv
import itertools
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, NotConvex, NotSpacelike

EPS_SPACE = 1e-6
EPS_CONVEX = 1e-10


@dataclass(frozen=True)
class Grid:
    n: int
    R: float
    h: float

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {self.n}")
        if self.h <= 0 or self.R <= 0:
            raise ValueError("R and h must be positive")
        m = 2.0 * self.R / self.h
        if abs(m - round(m)) > 1e-9 * max(1.0, m):
            raise ValueError(f"h={self.h} does not divide 2R={2 * self.R}")
        if round(m) + 1 < 9:
            raise ValueError("need at least 9 nodes per axis")

    @property
    def m(self) -> int:
        """Nodes per axis."""
        return int(round(2.0 * self.R / self.h)) + 1

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.n

    @property
    def interior_shape(self) -> tuple:
        return (self.m - 2,) * self.n

    @property
    def axis(self) -> np.ndarray:
        return -self.R + self.h * np.arange(self.m)

    def points(self) -> np.ndarray:
        """Node coordinates, shape (*shape, n)."""
        mesh = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1)

    def interior_points(self) -> np.ndarray:
        return self.points()[self.interior]

    @property
    def interior(self) -> tuple:
        return (slice(1, -1),) * self.n

    def boundary_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        mask[self.interior] = False
        return mask

    def as_dict(self) -> dict:
        return {"n": self.n, "R": self.R, "h": self.h}


@dataclass
class GridFunction:
    """Node values of a candidate solution; the boundary ring is Dirichlet data."""

    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @classmethod
    def from_function(cls, grid: Grid, func) -> "GridFunction":
        return cls(grid, func(grid.points()))

    @property
    def boundary_values(self) -> np.ndarray:
        return self.values[self.grid.boundary_mask()]

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy(), dict(self.meta))

    def with_interior(self, interior: np.ndarray) -> "GridFunction":
        v = self.values.copy()
        v[self.grid.interior] = interior
        return GridFunction(self.grid, v, dict(self.meta))


def _shifted(a: np.ndarray, offset) -> np.ndarray:
    """View of the interior block of ``a`` displaced by ``offset`` (entries in -1, 0, 1)."""
    return a[tuple(slice(1 + o, a.shape[k] - 1 + o) for k, o in enumerate(offset))]


def _unit(n: int, i: int, s: int = 1) -> tuple:
    e = [0] * n
    e[i] = s
    return tuple(e)


def gradient(u: GridFunction) -> np.ndarray:
    """Du at every node, shape (*shape, n)."""
    g = u.grid
    if g.n == 1:
        return np.gradient(u.values, g.h, edge_order=2)[..., None]
    return np.stack(np.gradient(u.values, g.h, edge_order=2), axis=-1)


def interior_gradient(u: GridFunction) -> np.ndarray:
    """Central-difference Du at interior nodes, shape (*interior_shape, n)."""
    g, a = u.grid, u.values
    comps = [(_shifted(a, _unit(g.n, i, 1)) - _shifted(a, _unit(g.n, i, -1))) / (2 * g.h) for i in range(g.n)]
    return np.stack(comps, axis=-1)


def hessian(u: GridFunction) -> np.ndarray:
    """Central-difference D^2u at interior nodes, shape (*interior_shape, n, n)."""
    g, a = u.grid, u.values
    n, h2 = g.n, g.h * g.h
    c = _shifted(a, (0,) * n)
    H = np.empty(g.interior_shape + (n, n))
    for i in range(n):
        H[..., i, i] = (_shifted(a, _unit(n, i, 1)) - 2 * c + _shifted(a, _unit(n, i, -1))) / h2
        for j in range(i + 1, n):
            def off(si, sj):
                e = [0] * n
                e[i], e[j] = si, sj
                return _shifted(a, tuple(e))

            cross = (off(1, 1) - off(1, -1) - off(-1, 1) + off(-1, -1)) / (4 * h2)
            H[..., i, j] = cross
            H[..., j, i] = cross
    return H


@dataclass
class CurvatureReport:
    K: np.ndarray
    gradient_norm_max: float
    min_hessian_eigenvalue: float
    principal_curvatures: np.ndarray
    H: np.ndarray
    v_tilde: np.ndarray
    clipped: bool
    eps_space: float
    eps_convex: float
    safeguard: bool

    def summary(self) -> dict:
        return {
            "K_min": float(np.min(self.K)),
            "K_max": float(np.max(self.K)),
            "gradient_norm_max": self.gradient_norm_max,
            "min_hessian_eigenvalue": self.min_hessian_eigenvalue,
            "v_tilde_max": float(np.max(self.v_tilde)),
            "clipped": self.clipped,
            "eps_space": self.eps_space,
            "eps_convex": self.eps_convex,
        }


def curvature_parts(Du: np.ndarray, D2u: np.ndarray):
    """Principal curvatures of a spacelike graph from nodal Du, D^2u.

    They are the eigenvalues of h_ij = u_ij / sqrt(1 - |Du|^2) relative to
    g_ij = delta_ij - u_i u_j; we reduce to a symmetric problem through the
    Cholesky factor of g.
    """
    n = Du.shape[-1]
    w = 1.0 - np.sum(Du * Du, axis=-1)
    g = np.eye(n) - Du[..., :, None] * Du[..., None, :]
    L = np.linalg.cholesky(g)
    hmat = D2u / np.sqrt(w)[..., None, None]
    Linv = np.linalg.inv(L)
    S = Linv @ hmat @ np.swapaxes(Linv, -1, -2)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    return np.linalg.eigvalsh(S)


def gauss_curvature(
    u: GridFunction,
    eps_space: float = EPS_SPACE,
    eps_convex: float = EPS_CONVEX,
    safeguard: bool = False,
    strict: bool = False,
) -> CurvatureReport:
    """K[u] = det D^2u / (1 - |Du|^2)^((n+2)/2) at interior nodes.

    The determinant is taken as the product of Hessian eigenvalues so that
    the safeguards (|Du|^2 clipped at 1 - eps_space, eigenvalues floored at
    eps_convex) are exact no-ops on inputs with comfortable margins.
    """
    n = u.grid.n
    Du = interior_gradient(u)
    D2u = hessian(u)
    q = np.sum(Du * Du, axis=-1)
    eig = np.linalg.eigvalsh(D2u)
    gmax = float(math.sqrt(np.max(q)))
    emin = float(np.min(eig))
    if gmax >= 1.0 and not safeguard:
        idx = np.unravel_index(int(np.argmax(q)), q.shape)
        raise NotSpacelike(f"|Du| = {gmax:.6g} >= 1 at interior node {tuple(int(i) + 1 for i in idx)}")
    if strict and emin <= 0.0:
        idx = np.unravel_index(int(np.argmin(eig.min(axis=-1))), q.shape)
        raise NotConvex(f"Hessian eigenvalue {emin:.6g} <= 0 at interior node {tuple(int(i) + 1 for i in idx)}")
    clipped = False
    if safeguard:
        qc = np.minimum(q, 1.0 - eps_space)
        ec = np.maximum(eig, eps_convex)
        clipped = bool(np.any(qc != q) or np.any(ec != eig))
        q, eig = qc, ec
    w = 1.0 - q
    K = np.prod(eig, axis=-1) / w ** ((n + 2) / 2.0)
    if gmax < 1.0:
        kappa = curvature_parts(Du, D2u)
        vt = 1.0 / np.sqrt(1.0 - np.sum(Du * Du, axis=-1))
    else:
        kappa = np.full(eig.shape, np.nan)
        vt = 1.0 / np.sqrt(w)
    return CurvatureReport(
        K=K,
        gradient_norm_max=gmax,
        min_hessian_eigenvalue=emin,
        principal_curvatures=kappa,
        H=np.sum(kappa, axis=-1),
        v_tilde=vt,
        clipped=clipped,
        eps_space=eps_space,
        eps_convex=eps_convex,
        safeguard=safeguard,
    )


def log_curvature(u: GridFunction) -> np.ndarray:
    """log K[u] at interior nodes, or -inf where u is not strictly convex and spacelike."""
    Du = interior_gradient(u)
    D2u = hessian(u)
    q = np.sum(Du * Du, axis=-1)
    det = np.linalg.det(D2u) if u.grid.n > 1 else D2u[..., 0, 0]
    n = u.grid.n
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(det) - 0.5 * (n + 2) * np.log1p(-q)
    bad = (q >= 1.0) | ~(np.linalg.eigvalsh(D2u).min(axis=-1) > 0)
    out[bad] = -np.inf
    return out


def blow_down(u, direction, radii=(10.0, 20.0, 40.0, 80.0, 160.0, 320.0), tol: float = 1e-8) -> dict:
    """Estimate V_u(direction) = lim u(r x)/r with one Richardson step (error ~ 1/r)."""
    d = np.asarray(direction, dtype=float)
    radii = np.asarray(radii, dtype=float)
    q = np.array([float(u(r * d)) / r for r in radii])
    ratio = radii[1:] / radii[:-1]
    est = (ratio * q[1:] - q[:-1]) / (ratio - 1.0)
    steps = np.abs(np.diff(est))
    if steps.size >= 2 and steps[-1] > tol and steps[-1] >= steps[-2]:
        raise NoConvergence(f"blow-down estimates diverge: {est.tolist()}")
    return {
        "limit": float(est[-1]),
        "quotients": q.tolist(),
        "estimates": est.tolist(),
        "last_change": float(steps[-1]) if steps.size else 0.0,
    }


def gauss_map_image(u: GridFunction) -> np.ndarray:
    """Du at interior nodes as points of the Klein ball, shape (M, n)."""
    p = interior_gradient(u).reshape(-1, u.grid.n)
    nrm = np.sqrt(np.sum(p * p, axis=-1))
    if np.any(nrm >= 1.0):
        raise NotSpacelike(f"gradient norm {nrm.max():.6g} >= 1")
    return p


# --- I/O ------------------------------------------------------------------

_HEADER = "<qdd"


def save_csv(u: GridFunction, path) -> None:
    pts = u.grid.points().reshape(-1, u.grid.n)
    vals = u.values.reshape(-1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(u.grid.n)] + ["u"])
        for p, v in zip(pts, vals):
            w.writerow([format(float(c), ".17g") for c in p] + [format(float(v), ".17g")])


def load_csv(path, grid: Grid) -> GridFunction:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return GridFunction(grid, data[:, -1].reshape(grid.shape))


def save_binary(u: GridFunction, path) -> None:
    """Header (n:int64, h:float64, R:float64, counts:int64 x n), then row-major float64, little-endian."""
    g = u.grid
    with open(path, "wb") as fh:
        fh.write(struct.pack(_HEADER, g.n, g.h, g.R))
        fh.write(struct.pack("<" + "q" * g.n, *g.shape))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def load_binary(path) -> GridFunction:
    with open(path, "rb") as fh:
        raw = fh.read()
    n, h, R = struct.unpack_from(_HEADER, raw, 0)
    off = struct.calcsize(_HEADER)
    counts = struct.unpack_from("<" + "q" * n, raw, off)
    off += 8 * n
    vals = np.frombuffer(raw, dtype="<f8", offset=off).reshape(counts)
    grid = Grid(n, R, h)
    if grid.shape != tuple(counts):
        raise ValueError("binary grid header is inconsistent")
    return GridFunction(grid, vals.copy())


def stencil_offsets(n: int) -> list:
    """All offsets used by the curvature stencil (center, axis neighbours, diagonal corners)."""
    offs = [(0,) * n]
    for i in range(n):
        offs += [_unit(n, i, 1), _unit(n, i, -1)]
        for j in range(i + 1, n):
            for si, sj in itertools.product((1, -1), repeat=2):
                e = [0] * n
                e[i], e[j] = si, sj
                offs.append(tuple(e))
    return offs
