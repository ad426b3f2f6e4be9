"""Task losses, the attraction surrogate for gradient sharing, and rewards.

Each loss term is evaluated on the state at a set of substep indices and
returns its cotangent with respect to that state, which the backward sweep
injects as it passes the index.
"""
import numpy as np
from scipy.spatial import cKDTree

from .errors import SceneError
from .gas import Sampler
from .state import AdjointState

_EPS = 1e-12


# ---------------------------------------------------------------- point-set losses

def _unit(diff):
    n = np.linalg.norm(diff, axis=-1)
    return n, diff / np.where(n > _EPS, n, 1.0)[..., None] * (n > _EPS)[..., None]


def chamfer_distance(A, B, grad=False):
    """Mean nearest-neighbour distance from A to B plus from B to A.

    With ``grad=True`` also returns the cotangent with respect to A.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    if A.size == 0 or B.size == 0:
        raise ValueError("chamfer distance needs two non-empty point sets")
    dab, iab = cKDTree(B).query(A)
    dba, iba = cKDTree(A).query(B)
    val = dab.mean() + dba.mean()
    if not grad:
        return val
    gA = np.zeros_like(A)
    _, u = _unit(A - B[iab])
    gA += u / len(A)
    _, u2 = _unit(A[iba] - B)
    np.add.at(gA, iba, u2 / len(B))
    return val, gA


def trajectory_goal_loss(point_sets, goals):
    """Sum of chamfer distances between paired point sets."""
    if len(point_sets) != len(goals):
        raise ValueError("states and goals have different lengths")
    return float(sum(chamfer_distance(a, b) for a, b in zip(point_sets, goals)))


def target_point_loss(points, goal, grad=False, squared=False):
    """Sum of distances from each point to ``goal`` (a point or one per point).

    With ``squared`` the squared distances are summed instead.
    """
    points = np.atleast_2d(np.asarray(points, float))
    if len(points) == 0:
        raise ValueError("target point loss needs a non-empty body")
    diff = points - np.asarray(goal, float)
    if squared:
        val = float((diff * diff).sum())
        return (val, 2.0 * diff) if grad else val
    n, u = _unit(diff)
    return (n.sum(), u) if grad else n.sum()


def mixing_spread_loss(points, grad=False):
    """Negative sum of pairwise distances over ordered pairs."""
    points = np.atleast_2d(np.asarray(points, float))
    if len(points) < 2:
        raise ValueError("mixing spread needs at least two particles")
    diff = points[:, None, :] - points[None, :, :]
    n, u = _unit(diff)
    val = -n.sum()
    return (val, -2.0 * u.sum(axis=1)) if grad else val


def attraction_weights(points, prev_loss, tau, radius):
    """Normalised neighbour weights ``w_ij`` (dense, zero outside the radius)."""
    points = np.atleast_2d(np.asarray(points, float))
    prev_loss = np.asarray(prev_loss, float)
    d = np.linalg.norm(points[:, None] - points[None], axis=-1)
    raw = np.exp(-(prev_loss - prev_loss.min()) / tau)[None, :] * np.maximum(0.0, 1.0 - d / radius)
    np.fill_diagonal(raw, 0.0)
    s = raw.sum(axis=1, keepdims=True)
    return np.where(s > 0, raw / np.where(s > 0, s, 1.0), 0.0)


def attraction_loss(points, prev_loss, tau, radius, grad=False):
    """Sum over i of the weight-normalised mean distance to neighbours within ``radius``.

    Neighbours with a lower previous loss get exponentially larger weight, so
    the gradient pulls each particle toward its better-performing neighbours.
    """
    points = np.atleast_2d(np.asarray(points, float))
    n = len(points)
    if n < 2:
        return (0.0, np.zeros_like(points)) if grad else 0.0
    prev_loss = np.asarray(prev_loss, float)
    e = np.exp(-(prev_loss - prev_loss.min()) / tau)
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return (0.0, np.zeros_like(points)) if grad else 0.0
    # both directions: i attracted by j and j by i
    I = np.concatenate([pairs[:, 0], pairs[:, 1]])
    J = np.concatenate([pairs[:, 1], pairs[:, 0]])
    dist, u = _unit(points[I] - points[J])
    tent = np.maximum(0.0, 1.0 - dist / radius)
    w = e[J] * tent
    S = np.bincount(I, weights=w, minlength=n)
    Q = np.bincount(I, weights=w * dist, minlength=n)
    ok = S > 0
    val = float(np.sum(Q[ok] / S[ok]))
    if not grad:
        return val
    Si = np.where(ok, S, 1.0)[I]
    Qi = Q[I]
    dw = np.where(tent > 0, -e[J] / radius, 0.0)
    # d f_i / d dist_ij
    df = np.where(ok[I], (dw * dist + w) / Si - Qi * dw / Si**2, 0.0)
    g = np.zeros_like(points)
    np.add.at(g, I, df[:, None] * u)
    np.add.at(g, J, -df[:, None] * u)
    return val, g


def air_sensor_loss(temp, grid, sensors, targets, grad=False):
    """Sum of absolute deviations of interpolated sensor temperatures from targets."""
    sensors = np.atleast_2d(np.asarray(sensors, float))
    lo = grid.lo
    hi = grid.lo + np.asarray(grid.shape) * grid.h
    if np.any(sensors < lo) or np.any(sensors > hi):
        raise SceneError("sensor outside the gas domain")
    smp = Sampler(sensors, grid.lo, grid.h, grid.shape)
    dev = smp(temp) - np.asarray(targets, float)
    val = float(np.abs(dev).sum())
    if not grad:
        return val
    return val, smp.vjp_field(np.sign(dev))


def reward_from_loss(L, c1=0.0, c2=1.0):
    if not c2 > 0:
        raise ValueError("c2 must be positive")
    return c1 - c2 * L


def room_sensors(rooms, per_axis=3):
    """Evenly spaced sensor grid inside each room box; returns (positions, labels)."""
    pos, lab = [], []
    for name, (lo, hi) in rooms.items():
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        axes = [lo[a] + (np.arange(per_axis) + 0.5) * (hi[a] - lo[a]) / per_axis for a in range(len(lo))]
        p = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
        pos.append(p)
        lab += [name] * len(p)
    return np.concatenate(pos), lab


# ---------------------------------------------------------------- loss terms

class LossTerm:
    """A loss read from the simulation state at selected substep indices."""

    weight = 1.0

    def indices(self, horizon):
        return [horizon]

    def evaluate(self, state, k, grad=False):
        raise NotImplementedError

    def per_particle(self, state):
        """Per-particle loss contributions (used to weight the attraction term)."""
        return None


def _body_ids(state, body):
    ids = state.scene.body_particles(body)
    if len(ids) == 0:
        raise SceneError(f"body {body!r} has no particles")
    return ids


def _step_indices(horizon, every, final_only):
    if final_only:
        return [horizon]
    return list(range(every, horizon + 1, every)) or [horizon]


class TrajectoryChamfer(LossTerm):
    """Sum over sampled steps of the chamfer distance to a goal point set."""

    def __init__(self, body, goals, every=1, weight=1.0):
        self.body = body
        self.goals = goals
        self.every = every
        self.weight = weight

    def indices(self, horizon):
        return sorted(k for k in self.goals if k <= horizon) if isinstance(self.goals, dict) else [horizon]

    def _goal(self, k):
        return self.goals[k] if isinstance(self.goals, dict) else self.goals

    def evaluate(self, state, k, grad=False):
        ids = _body_ids(state, self.body)
        if not grad:
            return self.weight * chamfer_distance(state.x[ids], self._goal(k))
        val, g = chamfer_distance(state.x[ids], self._goal(k), grad=True)
        adj = AdjointState.zeros_like(state)
        adj.x[ids] = self.weight * g
        return self.weight * val, adj

    def per_particle(self, state):
        ids = _body_ids(state, self.body)
        goal = self._goal(max(self.goals)) if isinstance(self.goals, dict) else self.goals
        return cKDTree(goal).query(state.x[ids])[0]


class TargetPoint(LossTerm):
    """Sum of particle distances to a goal point (or per-particle goals)."""

    def __init__(self, body, goal, final_only=True, every=1, weight=1.0, squared=False):
        self.body = body
        self.goal = np.asarray(goal, float)
        self.final_only = final_only
        self.every = every
        self.weight = weight
        self.squared = squared

    def indices(self, horizon):
        return _step_indices(horizon, self.every, self.final_only)

    def evaluate(self, state, k, grad=False):
        ids = _body_ids(state, self.body)
        if not grad:
            return self.weight * target_point_loss(state.x[ids], self.goal, squared=self.squared)
        val, g = target_point_loss(state.x[ids], self.goal, grad=True, squared=self.squared)
        adj = AdjointState.zeros_like(state)
        adj.x[ids] = self.weight * g
        return self.weight * val, adj

    def per_particle(self, state):
        ids = _body_ids(state, self.body)
        return np.linalg.norm(state.x[ids] - self.goal, axis=-1)


class MixingSpread(LossTerm):
    def __init__(self, body, weight=1.0):
        self.body = body
        self.weight = weight

    def evaluate(self, state, k, grad=False):
        ids = _body_ids(state, self.body)
        if not grad:
            return self.weight * mixing_spread_loss(state.x[ids])
        val, g = mixing_spread_loss(state.x[ids], grad=True)
        adj = AdjointState.zeros_like(state)
        adj.x[ids] = self.weight * g
        return self.weight * val, adj


class AirSensors(LossTerm):
    """Room temperature targets read by sensors at the final (or every sampled) step."""

    def __init__(self, sensors, targets, final_only=True, every=1, weight=1.0):
        self.sensors = np.asarray(sensors, float)
        self.targets = np.asarray(targets, float)
        self.final_only = final_only
        self.every = every
        self.weight = weight

    def indices(self, horizon):
        return _step_indices(horizon, self.every, self.final_only)

    def evaluate(self, state, k, grad=False):
        grid = state.scene.gas.grid
        if not grad:
            return self.weight * air_sensor_loss(state.gas.temp, grid, self.sensors, self.targets)
        val, g = air_sensor_loss(state.gas.temp, grid, self.sensors, self.targets, grad=True)
        adj = AdjointState.zeros_like(state)
        adj.gas_temp = self.weight * g
        return self.weight * val, adj


class Attraction(LossTerm):
    """Attraction surrogate on one body; per-particle losses refreshed per iteration."""

    def __init__(self, body, source, tau=None, radius=None, weight=1.0):
        self.body = body
        self.source = source
        self.tau = tau
        self.radius = radius
        self.weight = weight
        self.prev = None

    def indices(self, horizon):
        return self.source.indices(horizon)

    def refresh(self, final_state):
        prev = self.source.per_particle(final_state)
        if prev is None:
            return
        self.prev = np.asarray(prev, float)
        if self.tau is None:
            med = float(np.median(self.prev))
            self._tau = 0.1 * med if med > 0 else 1.0
        else:
            self._tau = self.tau

    def evaluate(self, state, k, grad=False):
        ids = _body_ids(state, self.body)
        if self.prev is None:
            return (0.0, AdjointState.zeros_like(state)) if grad else 0.0
        r = self.radius if self.radius is not None else 3.0 * state.scene.config.dx
        if not grad:
            return self.weight * attraction_loss(state.x[ids], self.prev, self._tau, r)
        val, g = attraction_loss(state.x[ids], self.prev, self._tau, r, grad=True)
        adj = AdjointState.zeros_like(state)
        adj.x[ids] = self.weight * g
        return self.weight * val, adj


class LossSpec:
    """Weighted sum of loss terms, plus optional attraction terms."""

    def __init__(self, terms, attraction=(), c1=0.0, c2=1.0):
        self.terms = list(terms)
        self.attraction = list(attraction)
        self.use_attraction = bool(self.attraction)
        self.c1 = c1
        self.c2 = c2

    def active_terms(self):
        return self.terms + (self.attraction if self.use_attraction else [])

    def indices(self, horizon, terms=None):
        out = set()
        for t in terms or self.active_terms():
            out.update(t.indices(horizon))
        return sorted(out)

    def evaluate(self, state, k, horizon, grad=False, terms=None):
        total = 0.0
        adj = AdjointState.zeros_like(state) if grad else None
        for t in terms or self.active_terms():
            if k not in t.indices(horizon):
                continue
            if grad:
                v, g = t.evaluate(state, k, grad=True)
                adj.add(g)
            else:
                v = t.evaluate(state, k)
            total += float(v)
        return (total, adj) if grad else total

    def refresh(self, final_state):
        for a in self.attraction:
            a.refresh(final_state)

    def reward(self, L):
        return reward_from_loss(L, self.c1, self.c2)

    @classmethod
    def from_dict(cls, spec, state0):
        """Build from a scene-file ``loss`` block.

        Each entry of ``terms`` has a ``kind`` among trajectory_chamfer,
        target_point, mixing_spread, air_sensors, plus its parameters.  Entries
        with ``attraction: {tau, radius, weight}`` also get an attraction term.
        """
        terms, attr = [], []
        for t in spec.get("terms", []):
            kind = t["kind"]
            w = float(t.get("weight", 1.0))
            if kind == "target_point":
                goal = t.get("goal")
                if goal == "initial":
                    goal = state0.x[state0.scene.body_particles(t["body"])]
                term = TargetPoint(t["body"], goal, t.get("final_only", True), t.get("every", 1), w,
                                   bool(t.get("squared", False)))
            elif kind == "mixing_spread":
                term = MixingSpread(t["body"], w)
            elif kind == "trajectory_chamfer":
                goals = t["goals"]
                if isinstance(goals, dict):
                    goals = {int(k): np.asarray(v, float) for k, v in goals.items()}
                else:
                    goals = np.asarray(goals, float)
                term = TrajectoryChamfer(t["body"], goals, t.get("every", 1), w)
            elif kind == "air_sensors":
                if "rooms" in t:
                    pos, lab = room_sensors({k: v["box"] for k, v in t["rooms"].items()}, t.get("per_axis", 3))
                    targ = np.array([t["rooms"][r]["target"] for r in lab], float)
                else:
                    pos, targ = np.asarray(t["sensors"], float), np.asarray(t["targets"], float)
                term = AirSensors(pos, targ, t.get("final_only", True), t.get("every", 1), w)
            else:
                raise SceneError(f"unknown loss kind {kind!r}")
            terms.append(term)
            if t.get("attraction"):
                a = t["attraction"]
                attr.append(Attraction(t["body"], term, a.get("tau"), a.get("radius"), float(a.get("weight", 1.0))))
        return cls(terms, attr, float(spec.get("c1", 0.0)), float(spec.get("c2", 1.0)))
