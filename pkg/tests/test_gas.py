import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluidopt import gas
from fluidopt.config import GasConfig, ProjectionSolve
from fluidopt.errors import ResidualTooLargeError, SceneError
from fluidopt.scene import build_scene
from fluidopt.sdf import SdfPrimitive, Sphere


def _grid(n=16, boundaries=None, solids=()):
    return gas.GasGrid(np.zeros(2), 1.0 / n, (n, n), GasConfig(boundaries=boundaries or {}), solids)


def _rand_u(grid, rng):
    return [rng.standard_normal(s) for s in grid.face_shape]


def test_advection_shifts_linear_field_exactly():
    g = _grid(16)
    a, b, c = 0.7, -0.4, 0.2
    field = a * g.centers[:, 0] + b * g.centers[:, 1] + c
    vel = np.array([0.3, -0.2])
    u = [np.full(g.face_shape[k], vel[k]) for k in range(2)]
    dt = 0.05
    out = gas.semi_lagrangian_advect(field.reshape(g.shape), u, g, dt).ravel()
    ref = a * (g.centers[:, 0] - dt * vel[0]) + b * (g.centers[:, 1] - dt * vel[1]) + c
    # back-traced points that stay inside the sample range interpolate exactly
    back = g.centers - dt * vel
    inner = np.all((back > 0.5 * g.h) & (back < 1 - 0.5 * g.h), axis=1)
    np.testing.assert_allclose(out[inner], ref[inner], atol=1e-13)


@given(st.integers(0, 10_000))
def test_advection_makes_no_new_extrema(seed):
    rng = np.random.default_rng(seed)
    g = _grid(8)
    f = rng.uniform(0, 1, g.shape)
    out = gas.semi_lagrangian_advect(f, _rand_u(g, rng), g, 0.1)
    assert out.min() >= f.min() - 1e-14 and out.max() <= f.max() + 1e-14


def test_buoyancy_increment():
    g = _grid(8)
    u = [np.zeros(s) for s in g.face_shape]
    temp = np.full(g.shape, 1.5)
    out = gas.add_buoyancy(u, np.zeros(g.shape), temp, 0.01, 0.0, 2.0, 0.5)
    dT = 1.0
    np.testing.assert_allclose(out[1][:, 1:-1], 0.01 * 2.0 * dT)
    # domain boundary faces are not forced
    assert np.all(out[1][:, [0, -1]] == 0) and np.all(out[0] == 0)


def test_box_effector_rasterises_to_cell_patch():
    spec = {"config": {"dim": 2, "grid_resolution": 32, "gas_resolution": 32},
            "effectors": [{"name": "e", "shapes": [{"type": "box", "half_extents": [0.125, 0.125]}],
                           "position": [0.5, 0.5]}],
            "gas": {"boundaries": {"x-": "outflow", "x+": "outflow", "y-": "outflow", "y+": "outflow"}}}
    s = build_scene(None, spec)
    grid = s.scene.gas.grid
    owner = gas.rasterize_solid_mask(grid, s.scene.effectors, [(s.eff_pos[0], s.eff_rot[0])])
    assert np.count_nonzero(owner == 0) == 64


def test_projection_is_self_adjoint_on_free_faces():
    rng = np.random.default_rng(1)
    solid = SdfPrimitive(Sphere(0.15), np.array([0.5, 0.5]))
    g = _grid(16, {"x+": "outflow"}, [solid])
    owner = g.base_owner
    free, _ = gas.face_masks(owner, g)
    proj = gas.Projector(owner == gas.FLUID, free, g.h, ProjectionSolve("cg", 2000, 1e-13))
    v = [a * f for a, f in zip(_rand_u(g, rng), free)]
    w = [a * f for a, f in zip(_rand_u(g, rng), free)]
    Pv, Pw = proj.project(v), proj.project(w)
    lhs = sum(np.sum(a * b * f) for a, b, f in zip(Pv, w, free))
    rhs = sum(np.sum(a * b * f) for a, b, f in zip(v, Pw, free))
    assert abs(lhs - rhs) <= 1e-10


@pytest.mark.parametrize("kind", ["cg", "jacobi"])
def test_projection_vjp_is_transpose(kind):
    rng = np.random.default_rng(2)
    g = _grid(8, {"y+": "outflow"})
    owner = g.base_owner
    free, _ = gas.face_masks(owner, g)
    proj = gas.Projector(owner == gas.FLUID, free, g.h, ProjectionSolve(kind, 400 if kind == "cg" else 30, 1e-14))
    v, w = _rand_u(g, rng), _rand_u(g, rng)
    lhs = sum(np.sum(a * b) for a, b in zip(proj.project(v), w))
    rhs = sum(np.sum(a * b) for a, b in zip(v, proj.project_vjp(w)))
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_projection_removes_divergence():
    rng = np.random.default_rng(3)
    g = _grid(16, {"x-": "outflow"})
    out, res = gas.pressure_project(_rand_u(g, rng), g.base_owner, g, ProjectionSolve("cg", 1000, 1e-9))
    assert res <= 1e-9
    with pytest.raises(ResidualTooLargeError):
        gas.pressure_project(_rand_u(g, rng), g.base_owner, g, ProjectionSolve("jacobi", 2, 1e-9))


def test_unknown_boundary_rejected():
    with pytest.raises(SceneError):
        _grid(8, {"x-": "periodic"})
