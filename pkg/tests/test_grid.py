import math

import numpy as np
import pytest

from conftest import hyperboloid
from minkgauss.errors import NoConvergence, NotConvex, NotSpacelike
from minkgauss.grid import (
    Grid,
    GridFunction,
    blow_down,
    gauss_curvature,
    gauss_map_image,
    gradient,
    hessian,
    interior_gradient,
    load_binary,
    load_csv,
    log_curvature,
    save_binary,
    save_csv,
)
from minkgauss.semitrough import eval_standard


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(4, 2.0, 0.1)
    with pytest.raises(ValueError):
        Grid(2, 2.0, 0.3)  # does not divide 2R
    g = Grid(2, 2.0, 0.1)
    assert g.shape == (41, 41)
    assert g.interior_shape == (39, 39)
    assert g.boundary_mask().sum() == 41 * 4 - 4


def test_gridfunction_rejects_nonfinite():
    g = Grid(1, 1.0, 0.1)
    v = np.zeros(g.shape)
    v[3] = np.nan
    with pytest.raises(ValueError):
        GridFunction(g, v)


def test_gradient_affine_exact():
    g = Grid(2, 2.0, 0.1)
    s = np.array([0.3, -0.2])
    u = GridFunction.from_function(g, lambda x: x @ s + 1.0)
    assert np.max(np.abs(gradient(u) - s)) < 1e-13
    assert np.max(np.abs(hessian(u))) < 1e-11


def test_gradient_hyperboloid():
    g = Grid(2, 2.0, 0.05)
    u = GridFunction.from_function(g, hyperboloid())
    D = interior_gradient(u)
    i0 = int(round(g.R / g.h)) - 1  # interior index of the origin
    assert np.max(np.abs(D[i0, i0])) < 1e-14
    i1 = int(round((1.0 + g.R) / g.h)) - 1
    assert D[i1, i0] == pytest.approx([1 / math.sqrt(2), 0.0], abs=5 * g.h**2)


def test_hessian_quadratic_exact():
    g = Grid(2, 1.0, 0.1)
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    u = GridFunction.from_function(g, lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, A, x))
    assert np.max(np.abs(hessian(u) - A)) < 1e-11


def test_hessian_hyperboloid_origin():
    g = Grid(2, 1.0, 0.05)
    H = hessian(GridFunction.from_function(g, hyperboloid()))
    i0 = int(round(g.R / g.h)) - 1
    assert np.allclose(H[i0, i0], np.eye(2), atol=g.h**2)


@pytest.mark.parametrize("k", [1.0, 4.0])
def test_gauss_curvature_hyperboloid(k):
    errs = []
    for h in (0.1, 0.05):
        g = Grid(2, 2.0, h)
        rep = gauss_curvature(GridFunction.from_function(g, hyperboloid(k)))
        errs.append(np.max(np.abs(rep.K - k)))
    assert errs[0] / errs[1] > 3.5
    assert errs[1] < 10 * k * 0.05**2


def test_gauss_curvature_n1_and_n3():
    g1 = Grid(1, 2.0, 0.05)
    assert np.max(np.abs(gauss_curvature(GridFunction.from_function(g1, hyperboloid(n=1))).K - 1)) < 1e-2
    g3 = Grid(3, 1.0, 0.1)
    assert np.max(np.abs(gauss_curvature(GridFunction.from_function(g3, hyperboloid(2.0, 3))).K - 2)) < 0.1


def test_affine_not_convex():
    g = Grid(2, 1.0, 0.1)
    u = GridFunction.from_function(g, lambda x: 0.3 * x[..., 0])
    with pytest.raises(NotConvex):
        gauss_curvature(u, strict=True)
    rep = gauss_curvature(u, eps_convex=0.0)
    assert np.all(rep.K == 0.0)


def test_timelike_rejected():
    g = Grid(2, 1.0, 0.1)
    u = GridFunction.from_function(g, lambda x: 2.0 * np.sum(x**2, axis=-1))
    with pytest.raises(NotSpacelike):
        gauss_curvature(u)


def test_log_curvature_consistent():
    g = Grid(2, 1.0, 0.1)
    u = GridFunction.from_function(g, hyperboloid(2.0))
    assert np.allclose(log_curvature(u), np.log(gauss_curvature(u).K), atol=1e-13)


def test_principal_curvatures_product():
    g = Grid(2, 1.0, 0.1)
    rep = gauss_curvature(GridFunction.from_function(g, hyperboloid(2.0)))
    assert np.allclose(np.prod(rep.principal_curvatures, axis=-1), rep.K, rtol=1e-10)


def test_blow_down(profile2):
    # hyperboloid tail is O(1/r^2); one Richardson step leaves ~1/(4 r^2)
    assert blow_down(hyperboloid(), np.array([0.6, 0.8]))["limit"] == pytest.approx(1.0, abs=1e-4)
    u = lambda x: eval_standard(profile2, x)
    assert blow_down(u, np.array([-1.0, 0.0]))["limit"] == pytest.approx(0.0, abs=1e-6)
    assert blow_down(u, np.array([1.0, 0.0]))["limit"] == pytest.approx(1.0, abs=1e-4)


def test_blow_down_divergent():
    with pytest.raises(NoConvergence):
        blow_down(lambda x: np.linalg.norm(x) ** 1.5, np.array([1.0, 0.0]))


def test_gauss_map_image():
    R = 2.0
    g = Grid(2, R, 0.05)
    p = gauss_map_image(GridFunction.from_function(g, hyperboloid()))
    assert np.all(np.linalg.norm(p, axis=-1) < 1)
    r_in = (R - g.h) / math.sqrt(1 + (R - g.h) ** 2)
    assert np.max(np.abs(p)) == pytest.approx(r_in, abs=1e-3)
    s = np.array([0.2, 0.1])
    q = gauss_map_image(GridFunction.from_function(g, lambda x: x @ s))
    assert np.allclose(q, s)


def test_io_roundtrip(tmp_path):
    g = Grid(2, 1.0, 0.1)
    u = GridFunction.from_function(g, hyperboloid())
    save_binary(u, tmp_path / "u.bin")
    v = load_binary(tmp_path / "u.bin")
    assert v.grid == g and np.array_equal(v.values, u.values)
    raw = (tmp_path / "u.bin").read_bytes()
    assert len(raw) == 8 + 8 + 8 + 2 * 8 + 21 * 21 * 8
    save_csv(u, tmp_path / "u.csv")
    w = load_csv(tmp_path / "u.csv", g)
    assert np.array_equal(w.values, u.values)
