import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluidopt.autodiff import rollout
from fluidopt.errors import NonFiniteObjectiveError
from fluidopt.objectives import LossSpec, TargetPoint
from fluidopt.optimize import (ActionTrajectory, Adam, ExpandSchedule, PeriodicTrajectory, cma_es_minimize,
                               expand_window, optimize_cma, optimize_dp, optimize_dp_hard, periodic_trajectory_for,
                               periodic_wrap)
from fluidopt.scene import build_scene
from fluidopt.scenes import toy_problem

from scenes_util import block, build


# ---------------------------------------------------------------- trajectories

@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 1000))
def test_pullback_is_transpose_of_expansion(nseg, L, seed):
    rng = np.random.default_rng(seed)
    mask = rng.integers(0, 2, 6).astype(float)
    t = ActionTrajectory(rng.standard_normal((nseg, 6)), L, mask)
    g = rng.standard_normal((nseg * L, 6))
    d = rng.standard_normal((nseg, 6)) * mask
    lhs = np.sum(ActionTrajectory(d, L, mask).per_substep() * g)
    assert lhs == pytest.approx(np.sum(d * t.pullback(g)), abs=1e-10)


def test_trajectory_round_trip_and_bounds():
    t = ActionTrajectory(np.full((2, 6), 3.0), 4, [1, 0, 1, 0, 0, 0], -1.0, 1.0)
    assert t.values.max() == 1.0 and t.values[:, 1].max() == 0.0
    u = ActionTrajectory.from_dict(t.to_dict())
    assert np.array_equal(u.per_substep(), t.per_substep())
    assert np.array_equal(t.with_params(t.params()).values, t.values)


def test_periodic_wrap_identity_and_length():
    base = np.random.default_rng(0).standard_normal((5, 6))
    assert np.array_equal(periodic_wrap(base, 1), base)
    reset = np.ones((2, 6))
    assert len(periodic_wrap(base, 3, reset)) == 3 * 7


@given(st.integers(0, 1000))
def test_periodic_pullback_is_transpose(seed):
    rng = np.random.default_rng(seed)
    p = periodic_trajectory_for(36, 3, 4, 1)
    p.base.values = rng.standard_normal(p.base.values.shape)
    g = rng.standard_normal((36, 6))
    d = rng.standard_normal(p.base.values.shape)
    q = p.copy()
    q.base.values = d
    assert np.sum(q.per_substep() * g) == pytest.approx(np.sum(d * p.pullback(g)), abs=1e-10)


def test_periodic_motion_returns_to_neutral_pose():
    spec = {"config": {"dim": 2, "grid_resolution": 16, "dt_substep": 1e-3},
            "effectors": [{"name": "e", "shapes": [{"type": "box", "half_extents": [0.05, 0.02]}],
                           "position": [0.5, 0.5], "controlled": True}]}
    s = build_scene(None, spec)
    rng = np.random.default_rng(5)
    p = periodic_trajectory_for(3 * 6 * 5, 3, 5, 2)
    p.base.values = rng.standard_normal(p.base.values.shape)
    period = p.period_segments * p.segment_length
    seen = []
    rollout(s, p, callback=lambda st_: seen.append(st_) if st_.step % period == 0 else None)
    assert len(seen) == 3
    for st_ in seen:
        assert np.max(np.abs(st_.eff_pos[0] - [0.5, 0.5])) <= 1e-9
        assert np.max(np.abs(st_.eff_rot[0] - np.eye(2))) <= 1e-9


# ---------------------------------------------------------------- window schedule

def test_window_grows_on_plateau_and_saturates():
    s = ExpandSchedule(8, initial_window=1, patience=3)
    for _ in range(4):
        expand_window(s, [1.0] * 10)
    assert s.window == 2
    for _ in range(100):
        s.expand([1.0] * 10)
    assert s.window == 8
    assert s.history == sorted(s.history)


def test_window_holds_while_improving():
    s = ExpandSchedule(8, initial_window=2, patience=3)
    losses = []
    for k in range(30):
        losses.append(0.5 ** k)
        s.expand(losses)
    assert s.window == 2


@given(st.lists(st.floats(0, 10), min_size=1, max_size=60), st.integers(1, 5), st.integers(1, 16))
def test_window_sequence_monotone_and_bounded(losses, patience, horizon):
    s = ExpandSchedule(horizon, patience=patience)
    for k in range(len(losses)):
        s.expand(losses[: k + 1])
    assert all(a <= b for a, b in zip(s.history, s.history[1:]))
    assert 1 <= s.history[0] and s.history[-1] <= horizon


def test_adam_first_step_is_step_size():
    a = Adam(0.1)
    x = a.step(np.array([1.0, -2.0]), np.array([3.0, -0.5]))
    np.testing.assert_allclose(x, [0.9, -1.9], atol=1e-8)


# ---------------------------------------------------------------- optimisers

def test_dp_with_zero_gradient_leaves_trajectory_unchanged():
    spec = block("Liquid", pos=(0.5, 0.3), half=(0.05, 0.05), lam=50.0)
    spec["effectors"] = [{"name": "far", "shapes": [{"type": "sphere", "radius": 0.05}], "position": [0.85, 0.85],
                          "controlled": True}]
    state = build(spec)
    loss = LossSpec([TargetPoint("b", [0.5, 0.1])])
    init = ActionTrajectory(0.01 * np.ones((2, 6)), 5, np.ones(6))
    res = optimize_dp(state, loss, init, steps=3, step_size=0.1)
    assert np.array_equal(res.trajectory.values, init.values)
    assert res.history[0] == res.history[-1]


def test_dp_hard_converges_on_free_particle():
    state, loss, init, _ = toy_problem("free_particle", seed=0)
    res = optimize_dp_hard(state, loss, init, steps=80, step_size=0.1)
    assert res.history[0] > 1e-3
    assert res.best_loss <= 1e-6


def test_cma_sphere_8d():
    f = lambda x: float(np.sum(x**2))
    x, fx, hist = cma_es_minimize(f, np.full(8, 2.0), 1.0, budget=4000, seed=0)
    assert fx <= 1e-6
    assert hist[-1]["evaluations"] <= 4000


def test_cma_is_rank_invariant():
    f = lambda x: float(np.sum((x - 0.3) ** 2))
    a = cma_es_minimize(f, np.zeros(4), 0.5, budget=200, seed=3)
    b = cma_es_minimize(lambda x: f(x) + 17.0, np.zeros(4), 0.5, budget=200, seed=3)
    np.testing.assert_array_equal(a[0], b[0])


def test_cma_handles_non_finite_samples():
    f = lambda x: np.nan if x[0] > 0 else float(np.sum(x**2))
    x, fx, _ = cma_es_minimize(f, np.full(3, -1.0), 0.3, budget=120, seed=1)
    assert np.isfinite(fx) and x[0] <= 0
    with pytest.raises(NonFiniteObjectiveError):
        cma_es_minimize(lambda x: np.inf, np.zeros(2), 0.3, budget=12, seed=0)


def test_optimize_cma_never_worse_than_initial():
    state, loss, init, _ = toy_problem("free_particle", seed=2)
    res = optimize_cma(state, loss, init, budget=12, sigma0=0.5, seed=0)
    assert res.best_loss <= res.history[0]
