import math

import numpy as np
import pytest

from minkgauss.barriers import (
    BarrierConfig,
    ball_points,
    build_barriers,
    max_slope,
    mollified_boundary,
    mollify,
    verify_barriers,
)
from minkgauss.elliptic import check_boundary_compatible
from minkgauss.errors import GapTooSmall, VerificationFailed
from minkgauss.grid import Grid, GridFunction, gauss_curvature
from minkgauss.semitrough import make_semitrough
from minkgauss.sphere import CapUnion, SphereCap, basis_vector, unit_vector


def test_config_validation():
    with pytest.raises(ValueError):
        BarrierConfig(k1=0.5, k2=2.0)
    with pytest.raises(ValueError):
        BarrierConfig(ball_count=0)


def test_single_cap_lower_is_its_semitrough(halfplane, halfplane_pair, profile2):
    z = make_semitrough(halfplane.caps[0], 2.0, profile2)
    x = np.random.default_rng(0).uniform(-20, 20, size=(2000, 2))
    assert np.max(np.abs(halfplane_pair.lower(x) - z(x))) < 1e-12


def test_ordering_and_asymptote(halfplane_pair):
    x = np.random.default_rng(1).uniform(-30, 30, size=(10000, 2))
    lo, up, vf = halfplane_pair.lower(x), halfplane_pair.upper(x), halfplane_pair.V_F(x)
    assert np.all(lo <= up)
    # far out sqrt(f^2 + x2^2) rounds to |x2| once f^2 is below eps * x2^2; strictness on a compact
    assert np.all(lo >= vf - 1e-13 * np.linalg.norm(x, axis=-1))
    near = np.linalg.norm(x, axis=-1) <= 5.0
    assert np.all((lo > vf)[near])


def test_two_cap_ordering(profile2):
    F = CapUnion([SphereCap(basis_vector(2, 0), 0.6), SphereCap(unit_vector([-1.0, 1.0]), 0.4)])
    pair = build_barriers(F, BarrierConfig(2.0, 0.5, 8), profile2)
    x = np.random.default_rng(2).uniform(-15, 15, size=(5000, 2))
    scale = 1.0 + np.linalg.norm(x, axis=-1)
    assert np.all(pair.lower(x) <= pair.upper(x) + 1e-9 * scale)
    assert np.all(pair.lower(x) >= pair.V_F(x) - 1e-9 * scale)
    assert verify_barriers(pair, raise_on_fail=False)["min_upper_minus_lower"] > -1e-9 * 81


def test_verify_barriers_halfplane(halfplane_pair):
    rep = verify_barriers(halfplane_pair)
    assert rep["ok"]
    assert rep["defects"][-1] < rep["defects"][0]
    assert rep["delta"] > 0 and rep["theta"] > 0
    assert rep["min_upper_minus_lower"] >= 0


def test_verify_rejects_bad_radii(halfplane_pair):
    with pytest.raises(ValueError):
        verify_barriers(halfplane_pair, radii=(20.0, 10.0))


def test_verify_failure_raises(halfplane, profile2):
    # swapping the curvatures inverts the sandwich
    pair = build_barriers(halfplane, BarrierConfig(2.0, 0.5, 4), profile2)
    pair.lower_family, pair.upper_family = pair.upper_family, pair.lower_family
    with pytest.raises(VerificationFailed):
        verify_barriers(pair, radii=(10.0, 20.0))
    assert not verify_barriers(pair, radii=(10.0, 20.0), raise_on_fail=False)["ok"]


def test_on_grid_memoized(halfplane_pair):
    g = Grid(2, 1.0, 0.1)
    a = halfplane_pair.on_grid(g)
    b = halfplane_pair.on_grid(g)
    assert a[0] is b[0]
    assert not a[0].flags.writeable


def test_mollified_boundary_radius_zero(halfplane_pair):
    g = Grid(2, 4.0, 0.1)
    mb = mollified_boundary(halfplane_pair, g, 0.0)
    lo, up, _ = halfplane_pair.on_grid(g)
    m = g.boundary_mask()
    assert np.allclose(mb["data"][m], (lo + 0.5 * (up - lo))[m])
    assert mb["within_barriers"]
    assert check_boundary_compatible(g, mb["data"]) < 1.0
    low = mollified_boundary(halfplane_pair, g, 0.0, gap_fraction=0.0)
    assert np.array_equal(low["data"][m], lo[m])


def test_mollified_boundary_smoothing(halfplane_pair):
    g = Grid(2, 1.0, 0.1)
    mb = mollified_boundary(halfplane_pair, g, 0.2)
    assert mb["within_barriers"]
    assert 0 < mb["mollification_error_max"] < 0.05
    with pytest.raises(ValueError):
        mollified_boundary(halfplane_pair, g, 0.05)


def test_mollified_boundary_gap_too_small(halfplane_pair):
    with pytest.raises(GapTooSmall):
        mollified_boundary(halfplane_pair, Grid(2, 4.0, 0.1), 0.2)


def test_mollify_reproduces_affine():
    pts = np.random.default_rng(3).normal(size=(20, 2))
    f = lambda x: 0.3 * x[..., 0] - 0.1 * x[..., 1] + 2.0
    assert np.allclose(mollify(f, pts, 0.5), f(pts), atol=1e-12)


def test_max_slope_and_ball_points():
    pts = ball_points(2, 2.0, 0.25)
    assert np.all(np.linalg.norm(pts, axis=-1) <= 2.0 + 1e-12)
    s = max_slope(lambda x: 0.5 * x[..., 0], pts, 0.25)
    assert s == pytest.approx(0.5, abs=1e-12)


def test_barriers_csv(tmp_path, halfplane_pair):
    g = Grid(2, 1.0, 0.25)
    halfplane_pair.to_csv(tmp_path / "b.csv", g)
    data = np.loadtxt(tmp_path / "b.csv", delimiter=",", skiprows=1)
    assert data.shape == (81, 5)
    assert np.all(data[:, 2] <= data[:, 3])


def test_mollified_lower_data_is_convex(profile2):
    F = CapUnion([SphereCap(basis_vector(2, 0), 0.8), SphereCap(-basis_vector(2, 0), 0.8)])
    pair = build_barriers(F, BarrierConfig(2.0, 0.5), profile2)
    g = Grid(2, 2.0, 0.1)
    mid = mollified_boundary(pair, g, 0.0)
    assert gauss_curvature(GridFunction(g, mid["data"]), safeguard=True).min_hessian_eigenvalue < 0
    mb = mollified_boundary(pair, g, 0.4, gap_fraction=0.0, mollify_interior=True)
    assert mb["within_barriers"]
    assert gauss_curvature(GridFunction(g, mb["data"]), safeguard=True).min_hessian_eigenvalue > 0
