"""Semitrough profiles and their boosted, rotated, rescaled copies.

The standard semitrough is u(x) = sqrt(f(x^1)^2 + |x'|^2) where the
profile f solves the first-integral form

    (1 - f'^2)^(-n/2) - f^n = 1,

normalized so that sqrt(1 + t^2) - f(t) -> 0 as t -> +inf.  A semitrough
for a cap B of radius delta and curvature k is obtained by a Lorentz boost
of rapidity phi = atanh(cos delta) along e_1, a rotation taking e_1 to the
cap center and the homothety x -> mu x with mu = k^(-1/n).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import BracketFailure, NonMonotoneTail, ToleranceNotMet
from .sphere import SphereCap

LEFT_TAIL = 1e-8


def first_integral_gap(f, n: int):
    """1 - f'^2 along solutions, i.e. (1 + f^n)^(-2/n), computed without cancellation."""
    f = np.maximum(np.asarray(f, dtype=float), 0.0)
    return np.exp(-(2.0 / n) * np.log1p(f**n))


def slope_from_value(f, n: int):
    """f' = sqrt(1 - (1 + f^n)^(-2/n)), accurate for tiny and huge f."""
    f = np.maximum(np.asarray(f, dtype=float), 0.0)
    return np.sqrt(-np.expm1(-(2.0 / n) * np.log1p(f**n)))


def initial_height(n: int, b: float) -> float:
    """a > 0 with (1 - b^2)^(-n/2) - a^n = 1."""
    if not 0.0 < b < 1.0:
        raise ValueError("initial slope b must lie in (0, 1)")
    return float(np.expm1(-(n / 2.0) * math.log1p(-b * b)) ** (1.0 / n))


def _rk4_adaptive(rhs, y0, direction, stop, tol, h0=1e-2, h_max=0.25, max_steps=2_000_000):
    """Classical RK4 with step doubling; integrates the autonomous ODE y' = rhs(y).

    Returns arrays (t, y).  ``stop(t, y)`` ends the integration.
    """
    t, y, h = 0.0, y0, h0
    ts, ys = [t], [y]

    def rk4(y, h):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        return y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0

    for _ in range(max_steps):
        if stop(t, y):
            break
        s = direction * h
        full = rk4(y, s)
        half = rk4(rk4(y, 0.5 * s), 0.5 * s)
        err = abs(half - full) / 15.0
        scale = tol * max(1.0, abs(y)) if direction > 0 else tol * max(abs(y), 1e-300)
        if err <= scale or h < 1e-12:
            y = half + (half - full) / 15.0
            if y < 0.0:
                y = 0.0
            t += s
            ts.append(t)
            ys.append(y)
            grow = 2.0 if err == 0 else min(2.0, 0.9 * (scale / err) ** 0.2)
            h = min(h * max(grow, 0.5), h_max if direction > 0 or y > 1e-3 else 64 * h_max)
        else:
            h *= max(0.2, 0.9 * (scale / err) ** 0.25)
    else:
        raise ToleranceNotMet("profile integration exceeded the step budget")
    return np.array(ts), np.array(ys)


@dataclass(frozen=True, eq=False)
class ProfileFunction:
    """Tabulated profile f on a strictly increasing t-grid.

    ``gap`` stores 1 - f'^2 so that the first-integral residual can be
    evaluated without cancellation when f' is close to one.
    """

    n: int
    t: np.ndarray
    f: np.ndarray
    fp: np.ndarray
    gap: np.ndarray
    shift: float
    a: float
    b: float

    def __post_init__(self):
        for name in ("t", "f", "fp", "gap"):
            getattr(self, name).setflags(write=False)
        object.__setattr__(self, "_spline", CubicHermiteSpline(self.t, self.f, self.fp, extrapolate=False))
        r_max = math.sqrt(1.0 + self.t[-1] ** 2) - self.f[-1]
        object.__setattr__(self, "_right_residual", r_max)

    @property
    def t_min(self) -> float:
        return float(self.t[0])

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    def residuals(self) -> np.ndarray:
        """(1 - f'^2)^(-n/2) - f^n - 1 at every sample."""
        return self.gap ** (-self.n / 2.0) - self.f**self.n - 1.0

    def value(self, t):
        """f(t) with f = 0 left of the table and the hyperbolic tail right of it."""
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        left = t < self.t[0]
        right = t > self.t[-1]
        mid = ~(left | right)
        out[left] = 0.0
        out[mid] = self._spline(t[mid])
        tr = t[right]
        out[right] = np.sqrt(1.0 + tr**2) - self._right_residual * (self.t[-1] / tr) ** (self.n + 1)
        return out

    def slope(self, t):
        return slope_from_value(self.value(t), self.n)

    def value_and_slope(self, t):
        v = self.value(t)
        return v, slope_from_value(v, self.n)

    def relative_residuals(self) -> np.ndarray:
        """Residuals scaled by 1 + f^n; stored doubles limit the absolute ones to ~f^n * eps."""
        return self.residuals() / (1.0 + self.f**self.n)

    def derivative_consistency(self) -> float:
        """Max gap between divided differences of f and the tabulated f' (midpoint rule)."""
        dt = np.diff(self.t)
        dq = np.diff(self.f) / dt
        mid = 0.5 * (self.fp[1:] + self.fp[:-1])
        return float(np.max(np.abs(dq - mid)))

    def validate(self, tol: float = 1e-9) -> dict:
        """Structural checks; the first-integral residual is taken relative to 1 + f^n."""
        res = float(np.max(np.abs(self.relative_residuals())))
        d2 = np.diff(np.diff(self.f) / np.diff(self.t))
        report = {
            "max_first_integral_residual": float(np.max(np.abs(self.residuals()))),
            "max_relative_residual": res,
            "f_positive": bool(np.all(self.f > 0)),
            "slope_in_unit_interval": bool(np.all((self.fp > 0) & (self.fp < 1))),
            "convex": bool(np.all(d2 > 0)),
            "left_tail_value": float(self.f[0]),
            "left_tail_slope": float(self.fp[0]),
            "right_tail_residual": float(abs(math.sqrt(1 + self.t[-1] ** 2) - self.f[-1])),
        }
        report["ok"] = (
            res <= tol
            and report["f_positive"]
            and report["slope_in_unit_interval"]
            and report["convex"]
            and report["left_tail_value"] < 1e-6
            and report["left_tail_slope"] < 1e-6
            and report["right_tail_residual"] < 1e-4
        )
        return report

    def to_csv(self, path) -> None:
        res = self.residuals()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "f", "fprime", "residual"])
            for row in zip(self.t, self.f, self.fp, res):
                w.writerow([format(float(v), ".17g") for v in row])


class HyperbolaProfile:
    """f(t) = sqrt(1 + t^2); its 'semitrough' is the unit hyperboloid."""

    def __init__(self, n: int):
        self.n = n

    def value(self, t):
        return np.sqrt(1.0 + np.asarray(t, dtype=float) ** 2)

    def value_and_slope(self, t):
        t = np.asarray(t, dtype=float)
        v = np.sqrt(1.0 + t**2)
        return v, t / v


def _richardson_shift(t, r, p):
    """Estimates of lim r(t) assuming r = lam + A t^-p + B t^-(p+1), over the last decade.

    Callers pass r = t - sqrt(f^2 - 1), which has the same limit as
    sqrt(1 + t^2) - f(t) but no t^-2 term before re-basing.  Returns the
    two-term estimates from consecutive triples of marks T/8, T/4, T/2, T.
    """
    T = t[-1]
    idx = [int(np.argmin(np.abs(t - m))) for m in (T / 8, T / 4, T / 2, T)]
    est = []
    for j in range(len(idx) - 2):
        tt = np.array([t[i] for i in idx[j : j + 3]])
        rr = np.array([r[i] for i in idx[j : j + 3]])
        A = np.column_stack([np.ones(3), tt ** (-p), tt ** (-p - 1.0)])
        est.append(float(np.linalg.solve(A, rr)[0]))
    return est


def solve_profile(n: int, t_span: float = 200.0, tol: float = 1e-10, b: float = 0.6) -> ProfileFunction:
    """Integrate the semitrough profile and normalize its asymptotics.

    ``t_span`` is the right end of the table after normalization; the left
    end is wherever f drops below 1e-8.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if t_span < 20:
        raise ValueError("t_span must be >= 20")
    if tol > 1e-8:
        raise ValueError("tol must be <= 1e-8")
    a = initial_height(n, b)

    def rhs(y):
        return float(slope_from_value(y, n))

    step_tol = min(tol, 1e-12)
    t_end = t_span + 10.0
    tf, yf = _rk4_adaptive(rhs, a, +1, lambda t, y: t >= t_end, step_tol)
    tb, yb = _rk4_adaptive(
        rhs, a, -1, lambda t, y: (y < LEFT_TAIL and rhs(y) < LEFT_TAIL) or y <= 0.0, step_tol
    )
    t = np.concatenate([tb[:0:-1], tf])
    f = np.concatenate([yb[:0:-1], yf])
    keep = f > 0
    t, f = t[keep], f[keep]

    tail = f > 2.0
    r = t[tail] - np.sqrt((f[tail] - 1.0) * (f[tail] + 1.0))
    est = _richardson_shift(t[tail], r, n + 1)
    if abs(est[-1] - est[-2]) > 1e-8:
        raise NonMonotoneTail(f"shift estimates did not settle: {est}")
    lam = float(est[-1])

    t = t - lam
    cut = t <= t_span
    t, f = t[cut], f[cut]
    gap = first_integral_gap(f, n)
    fp = slope_from_value(f, n)
    prof = ProfileFunction(n=n, t=t, f=f, fp=fp, gap=gap, shift=lam, a=a, b=b)
    res = float(np.max(np.abs(prof.relative_residuals())))
    if res > tol:
        raise ToleranceNotMet(f"first-integral residual {res:.3e} exceeds {tol:.1e}")
    return prof


def eval_standard(profile, x):
    """Standard semitrough sqrt(f(x^1)^2 + |x'|^2)."""
    x = np.asarray(x, dtype=float)
    f = profile.value(x[..., 0])
    rho2 = np.sum(x[..., 1:] ** 2, axis=-1)
    return np.sqrt(f**2 + rho2)


def lightcone_bound(k: float, x, n: int | None = None):
    """h_k(x) = sqrt(k^(-2/n) + |x|^2), the hyperboloid of curvature k."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1] if n is None else n
    return np.sqrt(k ** (-2.0 / n) + np.sum(x**2, axis=-1))


def householder_to(c) -> np.ndarray:
    """Orthogonal symmetric matrix H with H e_1 = c."""
    c = np.asarray(c, dtype=float)
    n = c.size
    e1 = np.zeros(n)
    e1[0] = 1.0
    v = e1 - c
    nv = v @ v
    if nv < 1e-30:
        return np.eye(n)
    return np.eye(n) - 2.0 * np.outer(v, v) / nv


def boosted_height(profile, phi: float, y1, rho, tol: float = 1e-11, max_iter: int = 200):
    """Height of the boosted standard graph above the point (y1, rho).

    Solves cosh(phi) s + sinh(phi) u(s, rho) = y1 for s by safeguarded
    Newton; the left side is strictly increasing with slope in
    [e^-|phi|, e^|phi|] because |du/ds| < 1, which gives the bracket.
    """
    y1 = np.asarray(y1, dtype=float)
    rho = np.asarray(rho, dtype=float)
    ch, sh = math.cosh(phi), math.sinh(phi)

    def G(s):
        f, fp = profile.value_and_slope(s)
        u = np.sqrt(f * f + rho * rho)
        safe = np.where(u > 0, u, 1.0)
        du = np.where(u > 0, f * fp / safe, 0.0)
        return ch * s + sh * u - y1, ch + sh * du, u

    if phi == 0.0:
        f, _ = profile.value_and_slope(y1)
        return np.sqrt(f * f + rho * rho)

    s = ch * y1 - sh * np.sqrt(y1 * y1 + rho * rho)
    g, dg, _ = G(s)
    width = np.abs(g) * math.exp(abs(phi)) * (1 + 1e-12) + 1e-12
    lo, hi = s - width, s + width
    glo, _, _ = G(lo)
    ghi, _, _ = G(hi)
    if np.any(glo > 0) or np.any(ghi < 0):
        raise BracketFailure("boost equation bracket violated; profile is not spacelike")
    active = np.ones(s.shape, dtype=bool)
    for _ in range(max_iter):
        g, dg, _ = G(s)
        neg = g < 0
        lo = np.where(neg, s, lo)
        hi = np.where(neg, hi, s)
        step = g / dg
        s_new = s - step
        out = (s_new <= lo) | (s_new >= hi)
        s_new = np.where(out, 0.5 * (lo + hi), s_new)
        done = np.abs(s_new - s) <= tol * (1.0 + np.abs(s))
        s = np.where(active, s_new, s)
        active &= ~done
        if not np.any(active):
            break
    _, _, u = G(s)
    return sh * s + ch * u


@dataclass(frozen=True, eq=False)
class Semitrough:
    """Constant-curvature entire graph asymptotic to V_B for a cap B."""

    cap: SphereCap
    k: float
    rotation: np.ndarray
    phi: float
    mu: float
    profile: object

    @property
    def n(self) -> int:
        return self.cap.dim

    def __call__(self, x):
        return semitrough_eval(self, x)

    def asymptote(self, x):
        return self.cap.support(x)


def make_semitrough(cap: SphereCap, k: float, profile) -> Semitrough:
    if k <= 0:
        raise ValueError("curvature k must be positive")
    phi = math.atanh(math.cos(cap.radius))
    rot = householder_to(cap.center)
    rot.setflags(write=False)
    return Semitrough(cap=cap, k=float(k), rotation=rot, phi=phi, mu=float(k) ** (-1.0 / cap.dim), profile=profile)


def semitrough_eval(z: Semitrough, x):
    """Evaluate z at points x of shape (..., n)."""
    x = np.asarray(x, dtype=float)
    y = (x @ z.rotation) / z.mu
    rho = np.sqrt(np.sum(y[..., 1:] ** 2, axis=-1))
    return z.mu * boosted_height(z.profile, z.phi, y[..., 0], rho)
