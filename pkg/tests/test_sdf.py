import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluidopt.errors import SceneError
from fluidopt.sdf import Box, Capsule, Cylinder, HalfSpace, SdfPrimitive, Sphere, make_shape, rot2, sdf_eval

from oracles import box_distance_bruteforce, central_diff


def test_sphere_centre_and_surface():
    p = SdfPrimitive(Sphere(0.5), np.zeros(3))
    d, n = sdf_eval(p, [0.0, 0.0, 0.0])
    assert d == -0.5
    np.testing.assert_allclose(n, [1, 0, 0])
    d, n = sdf_eval(p, [0.5, 0.0, 0.0])
    assert d == 0.0
    np.testing.assert_allclose(n, [1, 0, 0])


def test_box_corner_distance_against_sampling():
    p = SdfPrimitive(Box((1.0, 1.0, 1.0)), np.zeros(3))
    d, _ = sdf_eval(p, [2.0, 2.0, 2.0])
    assert d == pytest.approx(np.sqrt(3), abs=1e-12)
    assert d == pytest.approx(box_distance_bruteforce([2, 2, 2], [1, 1, 1]), abs=1e-12)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.floats(0.2, 1.5), st.floats(0.2, 1.5))
def test_box_outside_distance_matches_oracle(p, hx, hy):
    p = np.asarray(p)
    if np.all(np.abs(p) <= [hx, hy]):
        return
    d, _ = sdf_eval(SdfPrimitive(Box((hx, hy)), np.zeros(2)), p)
    # the lattice oracle is an upper bound within its sample spacing
    ref = box_distance_bruteforce(p, [hx, hy], samples=2001)
    assert d <= ref + 1e-12
    assert ref - d < 2e-3


SHAPES = [Sphere(0.3), Box((0.3, 0.2)), Capsule((-0.2, 0.0), (0.2, 0.1), 0.1),
          HalfSpace((0.0, 1.0), 0.1)]


@pytest.mark.parametrize("shape", SHAPES, ids=lambda s: type(s).__name__)
@given(st.integers(0, 10_000))
def test_normal_and_hessian_match_finite_differences(shape, seed):
    rng = np.random.default_rng(seed)
    prim = SdfPrimitive(shape, rng.uniform(-0.2, 0.2, 2), rot2(rng.uniform(0, 6)))
    x = rng.uniform(-0.8, 0.8, 2)
    d, n, H = prim.evaluate(x[None], hessian=True)
    # keep away from medial axes where the distance has a kink
    g_fd = central_diff(lambda y: prim.evaluate(y[None])[0][0], x, 1e-6)
    if abs(np.linalg.norm(g_fd) - 1) > 1e-4:
        return
    np.testing.assert_allclose(n[0], g_fd, atol=1e-6)
    H_fd = np.stack([central_diff(lambda y: prim.evaluate(y[None])[1][0][i], x, 1e-6) for i in range(2)])
    if np.max(np.abs(H_fd)) < 1e3:
        np.testing.assert_allclose(H[0], H_fd, atol=1e-4)


def test_cylinder_3d_axis_and_cap():
    p = SdfPrimitive(Cylinder(0.5, 0.2), np.zeros(3))
    assert sdf_eval(p, [0.0, 0.0, 0.0])[0] == pytest.approx(-0.2)
    d, n = sdf_eval(p, [0.0, 1.0, 0.0])
    assert d == pytest.approx(0.5)
    np.testing.assert_allclose(n, [0, 1, 0], atol=1e-12)
    d, n = sdf_eval(p, [0.0, 0.0, 0.7])
    assert d == pytest.approx(0.5)


def test_invalid_shapes_raise():
    with pytest.raises(SceneError):
        Sphere(-1.0)
    with pytest.raises(SceneError):
        make_shape({"type": "torus"}, 2)
    with pytest.raises(SceneError):
        make_shape({"type": "box", "half_extents": [1, 1, 1]}, 2)
