import math

import numpy as np
import pytest

from minkgauss.errors import InvalidCapUnion
from minkgauss.sphere import (
    CapUnion,
    SphereCap,
    basis_vector,
    dist_to_set,
    enumerate_subballs,
    enumerate_superballs,
    klein_hull,
    sample_sphere,
    sphere_distance,
    support_function,
    unit_vector,
)

E1 = basis_vector(2, 0)
E2 = basis_vector(2, 1)


def test_unit_vector_normalises():
    v = unit_vector([3.0, 4.0])
    assert abs(np.linalg.norm(v) - 1.0) <= 1e-12
    with pytest.raises(ValueError):
        unit_vector([0.0, 0.0])


@pytest.mark.parametrize("y, expected", [(E1, 0.0), (-E1, math.pi), (E2, math.pi / 2)])
def test_sphere_distance(y, expected):
    assert sphere_distance(E1, y) == pytest.approx(expected, abs=1e-14)


def test_cap_radius_range():
    with pytest.raises(ValueError):
        SphereCap(E1, 0.0)
    with pytest.raises(ValueError):
        SphereCap(E1, math.pi)


def test_support_function_halfplane(halfplane):
    assert support_function(halfplane, E1) == pytest.approx(1.0)
    assert support_function(halfplane, -E1) == pytest.approx(0.0, abs=1e-15)
    assert support_function(halfplane, 2 * E2) == pytest.approx(2.0)


def test_support_function_matches_dense_sampling(halfplane):
    # V_F(x) = sup over lambda in F of x . lambda, brute force on 20001 samples of the half-circle
    ang = np.linspace(-math.pi / 2, math.pi / 2, 20001)
    lam = np.column_stack([np.cos(ang), np.sin(ang)])
    rng = np.random.default_rng(3)
    for x in rng.normal(size=(50, 2)) * 3:
        assert support_function(halfplane, x) == pytest.approx(np.max(lam @ x), abs=1e-7)


def test_dist_to_set():
    F = CapUnion([SphereCap(E1, math.pi / 4)])
    assert dist_to_set(E1, F) == 0.0
    assert dist_to_set(-E1, F) == pytest.approx(3 * math.pi / 4)


def test_cos_dist_equals_support():
    F = CapUnion([SphereCap(unit_vector([1.0, 1.0, 0.0]), 0.7), SphereCap(-basis_vector(3, 2), 0.5)])
    xs = sample_sphere(3, 1000)
    cosd = np.array([math.cos(dist_to_set(x, F)) for x in xs])
    V = np.array([support_function(F, x) for x in xs])
    assert np.max(np.abs(np.maximum(cosd, 0.0) - np.maximum(V, 0.0))) < 1e-12


def test_membership(halfplane):
    assert halfplane.contains(E2)
    assert not halfplane.contains(unit_vector([-1.0, 0.1]))


def test_whole_sphere_is_rejected():
    with pytest.raises(InvalidCapUnion):
        CapUnion([SphereCap(E1, 2.0), SphereCap(-E1, 2.0)])


def test_subballs_include_single_cap(halfplane):
    fam = enumerate_subballs(halfplane, 8)
    assert any(np.allclose(c.center, E1) and abs(c.radius - math.pi / 2) < 1e-12 for c in fam)
    for c in fam:
        # sampled containment of every sub-ball in F
        assert all(halfplane.contains(p, 1e-9) for p in sample_cap_boundary(c))


def test_superballs_approach_support(halfplane):
    fam = enumerate_superballs(halfplane, 16)
    assert any(np.allclose(c.center, E1) and abs(c.radius - math.pi / 2) < 1e-12 for c in fam)
    inf_v = min(c.support(-E1) for c in fam)
    assert inf_v == pytest.approx(0.0, abs=1e-12)
    for c in fam:
        assert math.pi - c.radius >= halfplane.delta0 - 1e-12


def sample_cap_boundary(cap, m=32):
    t = np.linspace(-cap.radius, cap.radius, m)
    a = math.atan2(cap.center[1], cap.center[0]) + t
    return np.column_stack([np.cos(a), np.sin(a)])


def test_klein_hull_halfdisk(halfplane):
    hull = klein_hull(halfplane, 256)
    assert hull.contains(0.999 * E1)
    assert hull.contains(np.array([0.5, 0.5]))
    assert not hull.contains(np.array([-0.05, 0.0]))
    # the half-disk boundary circle is approximated from inside
    assert hull.contains(np.array([0.0, 0.99]), slack=1e-3)


def test_klein_hull_antipodal_lens():
    F = CapUnion([SphereCap(E1, 0.1), SphereCap(-E1, 0.1)])
    hull = klein_hull(F, 32)
    assert hull.contains(np.zeros(2))
    assert not hull.contains(np.array([0.0, 0.2]))


def test_capunion_roundtrip(tmp_path, halfplane):
    p = tmp_path / "F.json"
    halfplane.save(p)
    G = CapUnion.load(p)
    assert np.allclose(G.caps[0].center, E1) and G.caps[0].radius == halfplane.caps[0].radius
