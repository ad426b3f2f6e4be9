import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluidopt.autodiff import finite_difference_gradient, grad_trajectory, max_rel_error, rollout
from fluidopt.errors import NonFiniteObjectiveError
from fluidopt.objectives import LossSpec, TargetPoint
from fluidopt.optimize import ActionTrajectory, evaluate
from fluidopt.scenes import toy_problem
from fluidopt.state import AdjointState
from fluidopt.step import adjoint_substep

from scenes_util import block, build


def test_fd_of_squared_norm():
    g = finite_difference_gradient(lambda a: float(a @ a), np.array([1.0, 2.0]), 1e-5)
    np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-9)


def test_fd_uses_two_rollouts_per_parameter():
    calls = []

    def f(p):
        calls.append(1)
        return float(np.sum(p**3))

    finite_difference_gradient(f, np.ones(12))
    assert len(calls) == 24


def test_fd_rejects_non_finite():
    with pytest.raises(NonFiniteObjectiveError):
        finite_difference_gradient(lambda p: np.nan, np.zeros(2))


def test_max_rel_error():
    assert max_rel_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert max_rel_error([1.0, 2.1], [1.0, 2.0]) == pytest.approx(0.05)


def test_zero_cotangent_gives_zero_adjoint():
    state, _, init, _ = toy_problem("toy_gathering")
    g, ga = adjoint_substep(state, init.per_substep()[0], AdjointState.zeros_like(state))
    for _, a in g.items():
        assert not np.any(a)
    assert not np.any(ga)


@given(st.floats(-3, 3), st.integers(0, 100))
def test_adjoint_is_linear_in_cotangent(scale, seed):
    state, _, init, _ = toy_problem("toy_gathering")
    rng = np.random.default_rng(seed)
    g = AdjointState.zeros_like(state)
    g.x = rng.standard_normal(g.x.shape)
    g.v = rng.standard_normal(g.v.shape)
    a = init.per_substep()[0]
    _, ga1 = adjoint_substep(state, a, g)
    g.x *= scale
    g.v *= scale
    _, ga2 = adjoint_substep(state, a, g)
    np.testing.assert_allclose(ga2, scale * ga1, atol=1e-10 * (1 + np.abs(ga1).max()))


def test_loss_independent_of_actions_has_exactly_zero_gradient():
    spec = block("Liquid", pos=(0.5, 0.3), half=(0.05, 0.05), lam=50.0)
    spec["effectors"] = [{"name": "far", "shapes": [{"type": "sphere", "radius": 0.05}], "position": [0.85, 0.85],
                          "controlled": True}]
    state = build(spec)
    loss = LossSpec([TargetPoint("b", [0.5, 0.1])])
    traj = ActionTrajectory(0.1 * np.ones((2, 6)), 10, np.ones(6))
    rep = grad_trajectory(state, traj, loss)
    assert np.all(rep.gradient == 0.0)


def test_free_particle_gradient_matches_closed_form():
    state, loss, init, spec = toy_problem("free_particle", seed=1)
    rep = grad_trajectory(state, init, loss)
    # the particle ends at x0 + T dt a (exactly), and the loss is squared distance
    T, dt = init.horizon, state.scene.config.dt_substep
    x_end = state.x[0] + T * dt * init.values[0, :2]
    goal = np.array([0.55, 0.45])
    np.testing.assert_allclose(rep.gradient[0, :2], 2 * (x_end - goal) * T * dt, rtol=1e-9)
    assert np.all(rep.gradient[0, 2:] == 0)


@given(st.sampled_from([1, 3, 7, 40]))
def test_gradient_independent_of_stride(stride):
    state, loss, init, _ = toy_problem("toy_pouring", seed=0)
    loss.use_attraction = False
    short = ActionTrajectory(init.values[:2], 20, init.mask)
    ref = grad_trajectory(state, short, loss, stride=40).gradient
    got = grad_trajectory(state, short, loss, stride=stride).gradient
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12 * max(1.0, np.abs(ref).max()))


def test_rollout_loss_matches_evaluate():
    state, loss, init, _ = toy_problem("toy_gathering", seed=2)
    loss.use_attraction = False
    _, L = rollout(state, init, loss=loss)
    assert L == evaluate(state, init, loss)


def test_per_substep_gradient_against_finite_differences():
    state, loss, init, _ = toy_problem("toy_gathering", seed=4)
    loss.use_attraction = False
    T = 24
    acts = init.per_substep()[:T]
    rep = grad_trajectory(state, acts, loss)
    idx = [(0, 0), (5, 1), (17, 0), (23, 1)]

    def f(p):
        a = acts.copy()
        for (k, c), val in zip(idx, p):
            a[k, c] = val
        return rollout(state, a, loss=loss)[1]

    fd = finite_difference_gradient(f, np.array([acts[k, c] for k, c in idx]))
    got = np.array([rep.gradient[k, c] for k, c in idx])
    assert max_rel_error(got, fd) <= 1e-3
