"""Trajectory-level reverse mode with checkpointing, plus a finite-difference audit."""
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import CheckpointStore
from .errors import NonFiniteObjectiveError
from .state import AdjointState
from .step import adjoint_substep, mpm_substep


def expand_actions(actions, horizon=None):
    """Per-substep (T, 6) array from an ActionTrajectory or an array."""
    if hasattr(actions, "per_substep"):
        return actions.per_substep()
    a = np.asarray(actions, float)
    if a.ndim == 1:
        a = a.reshape(-1, 6)
    if horizon is not None and len(a) != horizon:
        raise ValueError("action array length differs from the horizon")
    return a


def rollout(state, actions, horizon=None, loss=None, callback=None, store=None):
    """Run forward; returns (final_state, loss value or None)."""
    acts = None if actions is None else expand_actions(actions)
    T = horizon if horizon is not None else len(acts)
    idx = set(loss.indices(T)) if loss is not None else set()
    total = 0.0
    s = state
    if store is not None:
        store.save(0, s)
    if 0 in idx:
        total += loss.evaluate(s, 0, T)
    for k in range(T):
        s, _ = mpm_substep(s, None if acts is None else acts[k])
        if callback is not None:
            callback(s)
        if store is not None and ((k + 1) % store.stride == 0 or k + 1 == T):
            store.save(k + 1, s, final=True)
        if k + 1 in idx:
            total += loss.evaluate(s, k + 1, T)
    return s, (total if loss is not None else None)


@dataclass
class GradReport:
    """Gradient of a trajectory loss with respect to the action parameters."""

    gradient: np.ndarray
    loss: float
    fd_gradient: np.ndarray = None
    max_rel_error: float = None
    wall_time: float = 0.0
    substep_gradient: np.ndarray = None
    snapshots: int = 0
    peak_states: int = 0
    extra: dict = field(default_factory=dict)

    def compare(self, fd):
        self.fd_gradient = np.asarray(fd, float)
        self.max_rel_error = max_rel_error(self.gradient, self.fd_gradient)
        return self.max_rel_error

    def to_dict(self):
        d = asdict(self)
        for k, v in list(d.items()):
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d

    def to_json(self, path=None):
        s = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


def max_rel_error(g, g_fd, delta=1e-12):
    g = np.asarray(g, float).ravel()
    g_fd = np.asarray(g_fd, float).ravel()
    return float(np.max(np.abs(g - g_fd), initial=0.0) / (np.max(np.abs(g_fd), initial=0.0) + delta))


def grad_trajectory(state, actions, loss, stride=None, store=None, horizon=None):
    """Loss and its gradient with respect to the actions (checkpointed backward sweep).

    ``actions`` is an ActionTrajectory (the gradient is per parameter) or a
    (T, 6) array (the gradient is per substep).
    """
    t0 = time.perf_counter()
    acts = expand_actions(actions)
    T = len(acts) if horizon is None else horizon
    if store is None:
        store = CheckpointStore(stride or T or 1)
    store.clear()
    idx = loss.indices(T)
    final, value = rollout(state, acts, T, loss, store=store)
    if not np.isfinite(value):
        raise NonFiniteObjectiveError("loss is not finite; backward pass skipped")
    scene = state.scene
    g = AdjointState.zeros_like(final)
    if T in idx:
        _, gl = loss.evaluate(final, T, T, grad=True)
        g.add(gl)
    g_sub = np.zeros((T, 6))
    peak = 0
    seg_end = T
    while seg_end > 0:
        seg_start = store.latest_at_or_before(seg_end - 1)
        s = store.restore(seg_start, scene)
        states = [s]
        for k in range(seg_start, seg_end - 1):
            s, _ = mpm_substep(s, acts[k])
            states.append(s)
        peak = max(peak, len(states) + len(store))
        for k in range(seg_end - 1, seg_start - 1, -1):
            g, ga = adjoint_substep(states[k - seg_start], acts[k], g)
            g_sub[k] = ga
            if k in idx:
                _, gl = loss.evaluate(states[k - seg_start], k, T, grad=True)
                g.add(gl)
        seg_end = seg_start
    grad = actions.pullback(g_sub) if hasattr(actions, "pullback") else g_sub
    return GradReport(grad, float(value), wall_time=time.perf_counter() - t0, substep_gradient=g_sub,
                      snapshots=len(store), peak_states=peak, extra={"initial_adjoint": g})


def finite_difference_gradient(objective, params, eps=1e-6, indices=None):
    """Central differences ``(f(a + eps e_i) - f(a - eps e_i)) / (2 eps)``."""
    a = np.asarray(params, float)
    flat = a.ravel()
    grad = np.zeros_like(flat)
    for i in (range(flat.size) if indices is None else indices):
        vals = []
        for sgn in (1.0, -1.0):
            p = flat.copy()
            p[i] += sgn * eps
            f = objective(p.reshape(a.shape))
            if not np.isfinite(f):
                raise NonFiniteObjectiveError("objective is not finite", index=i)
            vals.append(f)
        grad[i] = (vals[0] - vals[1]) / (2 * eps)
    return grad.reshape(a.shape)
