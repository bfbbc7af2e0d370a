"""Torus maps built from a hyperbolic integer matrix and localized rotations.

The differential is checked against a central finite-difference oracle, and
volume preservation against LAPACK determinants of the assembled Jacobians.
"""
import numpy as np
import pytest

from pathlab.smallmat import DegenerateSpectrum, UnimodularMatrix, eigen_real
from pathlab.torusmap import (
    SupportTooLarge,
    TorusMap,
    build_localized_rotation,
)

CAT = [[2, 1], [1, 1]]
COMPANION = [[0, 0, 1], [1, 0, -6], [0, 1, 5]]
CENTER = [0.31, 0.47, 0.62]


@pytest.fixture(scope="module")
def linear_map():
    return TorusMap(UnimodularMatrix(COMPANION))


@pytest.fixture(scope="module")
def perturbed_map():
    a = UnimodularMatrix(COMPANION)
    eig = eigen_real(a)
    rot = build_localized_rotation(eig, center=CENTER, plane=(2, 1), rho=0.12, theta_max=0.5)
    return TorusMap(a, [rot])


def wrap_dist(x, y):
    d = np.asarray(x) - np.asarray(y)
    d -= np.round(d)
    return np.linalg.norm(d, axis=-1)


def support_points(rot, rng, count, radius_frac=0.8):
    """Points guaranteed inside the support ellipsoid, via the chart."""
    u = rng.normal(size=(count, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    u *= (rot.rho * radius_frac) * rng.random((count, 1)) ** (1 / 3)
    x = rot.center + u @ rot.chart.T
    return x % 1.0


# ------------------------------------------------------------- construction

def test_support_embedding_guard():
    eig = eigen_real(UnimodularMatrix(COMPANION))
    with pytest.raises(SupportTooLarge):
        build_localized_rotation(eig, center=CENTER, plane=(2, 1), rho=0.35, theta_max=0.1)


def test_lattice_point_must_stay_outside_support():
    eig = eigen_real(UnimodularMatrix(COMPANION))
    with pytest.raises(ValueError, match="lattice"):
        build_localized_rotation(eig, center=[0.0, 0.0, 0.0], plane=(2, 1), rho=0.12, theta_max=0.5)


def test_plane_indices_validated():
    eig = eigen_real(UnimodularMatrix(COMPANION))
    for plane in ((1, 1), (0, 2), (1, 4)):
        with pytest.raises(ValueError):
            build_localized_rotation(eig, center=CENTER, plane=plane, rho=0.1, theta_max=0.1)


def test_pure_linear_map_needs_no_eigen_data():
    # identity linear part: spectrum is degenerate, but a rotation-free map
    # never touches it
    m = TorusMap(UnimodularMatrix([[1, 0], [0, 1]]))
    x = np.array([0.25, 0.75])
    assert np.allclose(m.apply(x), x)
    with pytest.raises(DegenerateSpectrum):
        m.eigen


# ------------------------------------------------------------- pointwise maps

def test_linear_apply_matches_matmul(linear_map):
    rng = np.random.default_rng(0)
    x = rng.random((100, 3))
    a = np.array(COMPANION, dtype=float)
    expect = (x @ a.T) % 1.0
    assert np.allclose(linear_map.apply(x), expect, atol=1e-14)


def test_identity_outside_support(perturbed_map):
    rot = perturbed_map.rotations[0]
    rng = np.random.default_rng(1)
    found = 0
    for _ in range(40):
        x = rng.random(3)
        d = x - rot.center
        d -= np.round(d)
        if np.linalg.norm(rot.chart_inv @ d) >= rot.rho:
            found += 1
            lifted = perturbed_map.lift_apply(x)
            a = np.array(COMPANION, dtype=float)
            # same fixed-order accumulation the map uses, so equality is exact
            expected = a[:, 0] * x[0] + a[:, 1] * x[1] + a[:, 2] * x[2]
            assert np.array_equal(lifted, expected)
    assert found > 10


def test_rotation_moves_support_interior(perturbed_map):
    rot = perturbed_map.rotations[0]
    rng = np.random.default_rng(2)
    pts = support_points(rot, rng, 50)
    hx = rot.transform(pts, +1)
    assert np.all(np.linalg.norm(hx - pts, axis=1) > 0)


def test_rotation_preserves_chart_radius(perturbed_map):
    rot = perturbed_map.rotations[0]
    rng = np.random.default_rng(3)
    pts = support_points(rot, rng, 200)
    hx = rot.transform(pts, +1)
    for before, after in zip(pts, hx):
        db = before - rot.center
        db -= np.round(db)
        da = after - rot.center
        da -= np.round(da)
        rb = np.linalg.norm(rot.chart_inv @ db)
        ra = np.linalg.norm(rot.chart_inv @ da)
        assert abs(rb - ra) < 1e-12


def test_center_rotates_by_theta_max(perturbed_map):
    rot = perturbed_map.rotations[0]
    jac = rot.differential(np.array([rot.center]), +1)[0]
    i, j = rot.plane
    c, s = np.cos(rot.theta_max), np.sin(rot.theta_max)
    ru = np.eye(3)
    ru[i, i] = c
    ru[i, j] = -s
    ru[j, i] = s
    ru[j, j] = c
    expect = rot.chart @ ru @ rot.chart_inv
    assert np.allclose(jac, expect, atol=1e-12)


# ------------------------------------------------------------- differential

def fd_jacobian(fn, x, h=1e-6):
    n = len(x)
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        jac[:, j] = (fn(x + e) - fn(x - e)) / (2 * h)
    return jac


@pytest.mark.parametrize("where", ["inside", "outside", "near_edge"])
def test_differential_matches_finite_differences(perturbed_map, where):
    rot = perturbed_map.rotations[0]
    rng = np.random.default_rng(5)
    if where == "inside":
        pts = support_points(rot, rng, 60, radius_frac=0.85)
    elif where == "near_edge":
        pts = support_points(rot, rng, 60, radius_frac=0.97)
    else:
        pts = rng.random((60, 3))
    jacs = perturbed_map.differential(pts)
    for x, jac in zip(pts, jacs):
        fd = fd_jacobian(perturbed_map.lift_apply, x)
        assert np.max(np.abs(jac - fd)) < 1e-5


def test_volume_preservation(perturbed_map):
    rot = perturbed_map.rotations[0]
    rng = np.random.default_rng(6)
    pts = np.concatenate([rng.random((1000, 3)), support_points(rot, rng, 1000)])
    dets = np.linalg.det(perturbed_map.differential(pts))
    assert np.max(np.abs(np.log(np.abs(dets)))) <= 1e-9


def test_differential_of_linear_map_is_constant(linear_map):
    rng = np.random.default_rng(7)
    pts = rng.random((20, 3))
    jacs = linear_map.differential(pts)
    a = np.array(COMPANION, dtype=float)
    assert np.all(jacs == a)


# ------------------------------------------------------------- inverse

def test_inverse_round_trip(perturbed_map):
    rng = np.random.default_rng(8)
    x = rng.random((500, 3))
    back = perturbed_map.inverse_apply(perturbed_map.apply(x))
    assert np.max(wrap_dist(back, x)) < 1e-12


def test_forward_round_trip(perturbed_map):
    rng = np.random.default_rng(9)
    x = rng.random((500, 3))
    forth = perturbed_map.apply(perturbed_map.inverse_apply(x))
    assert np.max(wrap_dist(forth, x)) < 1e-12


def test_inverse_differential_is_matrix_inverse(perturbed_map):
    rng = np.random.default_rng(10)
    x = rng.random((100, 3))
    jf = perturbed_map.differential(perturbed_map.inverse_apply(x))
    jb = perturbed_map.inverse_differential(x)
    prod = np.einsum("bij,bjk->bik", jf, jb)
    assert np.max(np.abs(prod - np.eye(3))) < 1e-9


# ------------------------------------------------------------- lift

def test_lift_equivariance(perturbed_map):
    rng = np.random.default_rng(11)
    a = np.array(COMPANION, dtype=float)
    for _ in range(200):
        x = rng.random(3)
        z = rng.integers(-2, 3, size=3).astype(float)
        lhs = perturbed_map.lift_apply(x + z)
        rhs = perturbed_map.lift_apply(x) + a @ z
        assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_lift_projects_to_torus_map(perturbed_map):
    rng = np.random.default_rng(12)
    x = rng.random((300, 3)) + rng.integers(-3, 4, size=(300, 3))
    proj = perturbed_map.lift_apply(x) % 1.0
    assert np.max(wrap_dist(proj, perturbed_map.apply(x % 1.0))) < 1e-12


def test_lattice_points_map_exactly(perturbed_map):
    a = np.array(COMPANION, dtype=float)
    for z in ([0, 0, 0], [1, 0, 0], [-1, 2, 1], [2, -2, 1]):
        z = np.array(z, dtype=float)
        assert np.array_equal(perturbed_map.lift_apply(z), a @ z)


# ------------------------------------------------------------- composition

def test_composition_order_rightmost_first():
    a = UnimodularMatrix(COMPANION)
    eig = eigen_real(a)
    r1 = build_localized_rotation(eig, center=CENTER, plane=(2, 1), rho=0.10, theta_max=0.4)
    r2 = build_localized_rotation(eig, center=[0.77, 0.13, 0.52], plane=(3, 2), rho=0.10, theta_max=0.3)
    m = TorusMap(a, [r1, r2])
    rng = np.random.default_rng(13)
    x = rng.random((50, 3))
    manual = r1.transform(r2.transform(x, +1), +1) @ a.as_float().T
    assert np.allclose(m.lift_apply(x), manual, atol=1e-14)


def test_batch_matches_scalar(perturbed_map):
    rng = np.random.default_rng(14)
    pts = np.concatenate([rng.random((20, 3)),
                          support_points(perturbed_map.rotations[0], rng, 20)])
    batch = perturbed_map.apply(pts)
    for i, x in enumerate(pts):
        assert np.allclose(perturbed_map.apply(x), batch[i], atol=1e-13)


def test_apply_range(perturbed_map):
    rng = np.random.default_rng(15)
    y = perturbed_map.apply(rng.random((2000, 3)))
    assert np.all(y >= 0.0)
    assert np.all(y < 1.0)


# ------------------------------------------------------------- C1 distance

def test_c1_distance_zero_for_linear(linear_map):
    rep = linear_map.c1_distance_estimate(samples=200, seed=0)
    assert rep["estimate"] == 0.0
    assert rep["samples"] == 200


def test_c1_distance_flags_unsampled_support():
    a = UnimodularMatrix(COMPANION)
    eig = eigen_real(a)
    tiny = build_localized_rotation(eig, center=CENTER, plane=(2, 1), rho=0.004, theta_max=0.5)
    m = TorusMap(a, [tiny])
    rep = m.c1_distance_estimate(samples=50, seed=1)
    assert rep["estimate"] == 0.0
    assert not rep["support_sampled"]


def test_c1_distance_positive_when_support_hit(perturbed_map):
    rep = perturbed_map.c1_distance_estimate(samples=4000, seed=2)
    assert rep["support_sampled"]
    assert rep["estimate"] > 0.01
    assert rep["c1_op_max"] >= rep["c0_max"]


# ------------------------------------------------------------- serialization

def test_json_round_trip(perturbed_map):
    d = perturbed_map.to_dict()
    assert set(d) == {"linear", "rotations"}
    assert d["rotations"][0]["plane"] == [2, 1]
    clone = TorusMap.from_dict(d)
    assert clone.to_dict() == d
    rng = np.random.default_rng(16)
    x = rng.random((50, 3))
    assert np.array_equal(clone.apply(x), perturbed_map.apply(x))


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        TorusMap.from_dict({"linear": CAT, "rotations": [], "extra": 1})
    bad_rot = {"center": [0.3, 0.4], "plane": [1, 2], "rho": 0.1, "theta_max": 0.2, "x": 0}
    with pytest.raises(ValueError, match="unknown"):
        TorusMap.from_dict({"linear": CAT, "rotations": [bad_rot]})


def test_cat_map_rotation_round_trip():
    a = UnimodularMatrix(CAT)
    eig = eigen_real(a)
    rot = build_localized_rotation(eig, center=[0.3, 0.6], plane=(1, 2), rho=0.2, theta_max=0.3)
    m = TorusMap(a, [rot])
    rng = np.random.default_rng(17)
    x = rng.random((200, 2))
    back = m.inverse_apply(m.apply(x))
    assert np.max(wrap_dist(back, x)) < 1e-12
    dets = np.linalg.det(m.differential(x))
    assert np.max(np.abs(dets - 1.0)) < 1e-12
