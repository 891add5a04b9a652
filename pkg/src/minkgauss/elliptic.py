"""Damped Newton for det D^2u / (1 - |Du|^2)^((n+2)/2) = f on a box.

We drive the log residual

    G(u) = log det D^2u - (n+2)/2 log(1 - |Du|^2) - log f

to zero at interior nodes with Dirichlet data on the boundary ring.  The
Jacobian of the discrete G is assembled exactly from the stencil, so the
Newton iteration converges quadratically once it is close.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    LineSearchStalled,
    MaxIterations,
    NotConvex,
    NotSpacelike,
    NotSpacelikeCompatible,
    OrderingViolated,
    SingularHessian,
)
from .grid import EPS_CONVEX, EPS_SPACE, Grid, GridFunction, _shifted, gauss_curvature, hessian, interior_gradient


@dataclass
class NewtonOptions:
    max_iterations: int = 60
    residual_tol: float = 1e-9
    shrink: float = 0.5
    min_step: float = 1e-10
    eps_space: float = EPS_SPACE
    eps_convex: float = EPS_CONVEX
    warm_start: Optional[GridFunction] = None

    def __post_init__(self):
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    clipping_events: int
    comparison_flags: dict = field(default_factory=dict)
    residual_history: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    certified_residual: float = float("nan")
    min_hessian_eigenvalue: float = float("nan")
    gradient_norm_max: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


# --- residual and linearization ---------------------------------------------


def _parts(u: GridFunction):
    Du = interior_gradient(u)
    D2u = hessian(u)
    q = np.sum(Du * Du, axis=-1)
    return Du, D2u, q


def admissible(u: GridFunction, eps_space: float = EPS_SPACE, eps_convex: float = EPS_CONVEX) -> tuple:
    """(ok, min eigenvalue, max |Du|) for strict convexity and spacelikeness at interior nodes."""
    _, D2u, q = _parts(u)
    emin = float(np.min(np.linalg.eigvalsh(D2u)))
    gmax = float(math.sqrt(np.max(q)))
    return (emin > eps_convex and gmax * gmax < 1.0 - eps_space), emin, gmax


def residual(u: GridFunction, f: float) -> np.ndarray:
    """log K[u] - log f at interior nodes (nan where u is inadmissible)."""
    _, D2u, q = _parts(u)
    n = u.grid.n
    det = np.linalg.det(D2u)
    with np.errstate(divide="ignore", invalid="ignore"):
        G = np.log(det) - 0.5 * (n + 2) * np.log1p(-q) - math.log(f)
    G[(det <= 0) | (q >= 1)] = np.nan
    return G


def _interior_index(grid: Grid) -> np.ndarray:
    idx = -np.ones(grid.shape, dtype=np.int64)
    idx[grid.interior] = np.arange(int(np.prod(grid.interior_shape))).reshape(grid.interior_shape)
    return idx


def assemble_operator(grid: Grid, A: np.ndarray, b: np.ndarray, c: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Sparse matrix of v -> A:D^2v + b.Dv (+ c v) on interior unknowns with v = 0 on the boundary."""
    n, h = grid.n, grid.h
    idx = _interior_index(grid)
    rows_all = idx[grid.interior].ravel()
    rows, cols, vals = [], [], []

    def add(offset, coef):
        nb = _shifted(idx, offset).ravel()
        coef = np.broadcast_to(coef, grid.interior_shape).ravel()
        keep = nb >= 0
        rows.append(rows_all[keep])
        cols.append(nb[keep])
        vals.append(coef[keep])

    center = -2.0 * np.trace(A, axis1=-2, axis2=-1) / h**2
    if c is not None:
        center = center + c
    add((0,) * n, center)
    for i in range(n):
        e = [0] * n
        e[i] = 1
        add(tuple(e), A[..., i, i] / h**2 + b[..., i] / (2 * h))
        e[i] = -1
        add(tuple(e), A[..., i, i] / h**2 - b[..., i] / (2 * h))
        for j in range(i + 1, n):
            for si in (1, -1):
                for sj in (1, -1):
                    e = [0] * n
                    e[i], e[j] = si, sj
                    add(tuple(e), si * sj * A[..., i, j] / (2 * h**2))
    N = rows_all.size
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )


def linearization_coefficients(u: GridFunction):
    """A = (D^2u)^-1 and b = (n+2) Du / (1 - |Du|^2) at interior nodes."""
    Du, D2u, q = _parts(u)
    n = u.grid.n
    cond = np.linalg.cond(D2u)
    if not np.all(np.isfinite(cond)) or np.max(cond) > 1e14:
        raise SingularHessian(f"nodal Hessian condition number {np.max(cond):.3g}")
    A = np.linalg.inv(D2u)
    b = (n + 2) * Du / (1.0 - q)[..., None]
    return A, b


def newton_linearization(u: GridFunction, f: float = 1.0) -> sp.csr_matrix:
    """Jacobian of the discrete log residual G with respect to interior values.

    v -> trace((D^2u)^-1 D^2v) + (n+2) Du.Dv / (1 - |Du|^2).  The constant f
    does not enter the derivative; it is accepted for symmetry with ``residual``.
    """
    A, b = linearization_coefficients(u)
    return assemble_operator(u.grid, A, b)


# --- initial iterates -------------------------------------------------------


def harmonic_extension(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Discrete harmonic function with the boundary ring of ``values``."""
    n = grid.n
    A = np.broadcast_to(np.eye(n), grid.interior_shape + (n, n))
    b = np.zeros(grid.interior_shape + (n,))
    L = assemble_operator(grid, A, b)
    full = np.array(values, dtype=float)
    full[grid.interior] = 0.0
    # the boundary ring enters through the full-stencil Laplacian of the zero-interior field
    lap = sum(
        _shifted(full, tuple(1 if k == i else 0 for k in range(n)))
        + _shifted(full, tuple(-1 if k == i else 0 for k in range(n)))
        for i in range(n)
    ) / grid.h**2
    rhs = -lap.ravel()
    x = spla.spsolve(L.tocsc(), rhs)
    full[grid.interior] = x.reshape(grid.interior_shape)
    return full


def default_initial(grid: Grid, f: float, boundary: np.ndarray) -> np.ndarray:
    """Hyperboloid of curvature f plus the harmonic extension of the boundary mismatch."""
    pts = grid.points()
    hyp = np.sqrt(f ** (-2.0 / grid.n) + np.sum(pts**2, axis=-1))
    mismatch = np.where(grid.boundary_mask(), boundary - hyp, 0.0)
    return hyp + harmonic_extension(grid, mismatch)


def check_boundary_compatible(grid: Grid, boundary: np.ndarray, chunk: int = 2048) -> float:
    """Largest difference quotient between boundary nodes; must be < 1."""
    mask = grid.boundary_mask()
    pts = grid.points()[mask]
    vals = boundary[mask]
    worst = 0.0
    for s in range(0, len(pts), chunk):
        d = np.sqrt(np.sum((pts[s : s + chunk, None, :] - pts[None, :, :]) ** 2, axis=-1))
        dv = np.abs(vals[s : s + chunk, None] - vals[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            qq = np.where(d > 0, dv / d, 0.0)
        worst = max(worst, float(np.max(qq)))
    return worst


def _boundary_array(grid: Grid, boundary) -> np.ndarray:
    if isinstance(boundary, GridFunction):
        return boundary.values.copy()
    if callable(boundary):
        return np.asarray(boundary(grid.points()), dtype=float)
    arr = np.asarray(boundary, dtype=float)
    if arr.shape != grid.shape:
        raise ValueError("boundary array must have the grid shape")
    return arr.copy()


# --- solver -----------------------------------------------------------------


def solve_dirichlet(
    grid: Grid,
    f: float,
    boundary,
    opts: Optional[NewtonOptions] = None,
    barriers: Optional[tuple] = None,
    sandwich_tol: float = 1e-8,
):
    """Damped Newton solve of K[u] = f with u = boundary on the boundary ring.

    ``boundary`` is a GridFunction, a full-grid array (only the ring is used)
    or a callable on points.  ``barriers`` = (lower, upper) node arrays turn on
    the sandwich flags in the report.
    """
    opts = opts or NewtonOptions()
    if f <= 0:
        raise ValueError("f must be positive")
    bvals = _boundary_array(grid, boundary)
    quotient = check_boundary_compatible(grid, bvals)
    if quotient >= 1.0:
        raise NotSpacelikeCompatible(f"boundary difference quotient {quotient:.6g} >= 1")
    mask = grid.boundary_mask()
    if opts.warm_start is not None:
        init = opts.warm_start.values.copy()
        init[mask] = bvals[mask]
    else:
        init = default_initial(grid, f, bvals)
    u = GridFunction(grid, init)
    ok, emin, gmax = admissible(u, opts.eps_space, opts.eps_convex)
    if not ok:
        if gmax * gmax >= 1.0 - opts.eps_space:
            raise NotSpacelike(f"initial iterate not strictly spacelike (max |Du| = {gmax:.6g})")
        raise NotConvex(f"initial iterate not strictly convex (min eigenvalue {emin:.3g}); supply a warm start")

    G = residual(u, f)
    report = SolveReport(iterations=0, final_residual=float(np.max(np.abs(G))), clipping_events=0)
    report.residual_history.append(report.final_residual)
    interior = grid.interior
    for it in range(opts.max_iterations):
        if report.final_residual <= opts.residual_tol:
            break
        J = newton_linearization(u, f)
        d = spla.spsolve(J.tocsc(), -G.ravel()).reshape(grid.interior_shape)
        norm0 = float(np.linalg.norm(G))
        alpha = 1.0
        while True:
            cand = u.values.copy()
            cand[interior] += alpha * d
            cu = GridFunction(grid, cand)
            ok, _, _ = admissible(cu, opts.eps_space, opts.eps_convex)
            if ok:
                Gc = residual(cu, f)
                if np.all(np.isfinite(Gc)) and np.linalg.norm(Gc) < norm0:
                    break
            else:
                report.clipping_events += 1
            alpha *= opts.shrink
            if alpha < opts.min_step:
                raise LineSearchStalled(
                    f"backtracking reached step {alpha:.3g} at iteration {it} (residual {report.final_residual:.3g})"
                )
        u, G = cu, Gc
        report.iterations = it + 1
        report.final_residual = float(np.max(np.abs(G)))
        report.residual_history.append(report.final_residual)
        report.step_lengths.append(alpha)
    if report.final_residual > opts.residual_tol:
        raise MaxIterations(
            f"residual {report.final_residual:.3g} > {opts.residual_tol:.3g} after {report.iterations} iterations"
        )
    cert = gauss_curvature(u, opts.eps_space, opts.eps_convex)
    report.certified_residual = float(np.max(np.abs(np.log(cert.K) - math.log(f))))
    report.min_hessian_eigenvalue = cert.min_hessian_eigenvalue
    report.gradient_norm_max = cert.gradient_norm_max
    if barriers is not None:
        lower, upper = (np.asarray(b, dtype=float) for b in barriers)
        lo = float(np.min(u.values - lower))
        hi = float(np.min(upper - u.values))
        report.comparison_flags = {
            "lower_margin": lo,
            "upper_margin": hi,
            "sandwich_ok": bool(lo >= -sandwich_tol and hi >= -sandwich_tol),
        }
    u.meta.update({"f": f, "solver": "newton"})
    return u, report


def comparison_check(u: GridFunction, v: GridFunction, tol: float = 1e-8, raise_on_fail: bool = True) -> dict:
    """Check u >= v - tol at every node; report min(u - v) and its witness node."""
    if u.grid != v.grid:
        raise ValueError("comparison requires a common grid")
    diff = u.values - v.values
    k = int(np.argmin(diff))
    node = tuple(int(i) for i in np.unravel_index(k, diff.shape))
    out = {"min_difference": float(diff.flat[k]), "witness": node, "ok": bool(diff.flat[k] >= -tol)}
    if raise_on_fail and not out["ok"]:
        raise OrderingViolated(node, out["min_difference"])
    return out


def make_boundary(grid: Grid, func: Callable) -> np.ndarray:
    """Evaluate ``func`` on all nodes (the solver only reads the boundary ring)."""
    return np.asarray(func(grid.points()), dtype=float)
