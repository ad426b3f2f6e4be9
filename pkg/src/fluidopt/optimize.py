"""Trajectory optimisers: gradient-based (with soft contact, expanding window and
attraction), the plain hard-contact variant, CMA-ES, and periodic wrapping."""
import copy
import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import grad_trajectory, rollout
from .errors import FluidOptError, NonFiniteObjectiveError
from .state import SimState


# ---------------------------------------------------------------- parametrisations

class ActionTrajectory:
    """Piecewise-constant 6-vector actions, one value per control segment."""

    def __init__(self, values, segment_length, mask=None, lower=None, upper=None):
        self.values = np.array(values, float).reshape(-1, 6)
        self.segment_length = int(segment_length)
        self.mask = np.ones(6) if mask is None else np.asarray(mask, float)
        self.lower = None if lower is None else np.broadcast_to(np.asarray(lower, float), (6,)).copy()
        self.upper = None if upper is None else np.broadcast_to(np.asarray(upper, float), (6,)).copy()
        self.values *= self.mask
        self.clip()

    @classmethod
    def zeros(cls, n_segments, segment_length, **kw):
        return cls(np.zeros((n_segments, 6)), segment_length, **kw)

    @property
    def n_segments(self):
        return len(self.values)

    @property
    def horizon(self):
        return self.n_segments * self.segment_length

    def copy(self):
        return copy.deepcopy(self)

    def clip(self):
        if self.lower is not None:
            self.values = np.maximum(self.values, self.lower)
        if self.upper is not None:
            self.values = np.minimum(self.values, self.upper)
        return self

    def per_substep(self):
        return np.repeat(self.values * self.mask, self.segment_length, axis=0)

    def pullback(self, g_sub):
        g = np.asarray(g_sub).reshape(self.n_segments, self.segment_length, 6).sum(axis=1)
        return g * self.mask

    def params(self):
        return self.values[:, self.mask > 0].ravel().copy()

    def with_params(self, p):
        out = self.copy()
        out.values[:, self.mask > 0] = np.asarray(p, float).reshape(self.n_segments, -1)
        return out.clip()

    def to_dict(self):
        return {"segment_length": self.segment_length, "mask": self.mask.tolist(), "values": self.values.tolist(),
                "lower": None if self.lower is None else self.lower.tolist(),
                "upper": None if self.upper is None else self.upper.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["values"], d["segment_length"], d.get("mask"), d.get("lower"), d.get("upper"))

    def held(self, n_active):
        """Copy where segments from ``n_active`` on repeat the last active value."""
        out = self.copy()
        if 0 < n_active < self.n_segments:
            out.values[n_active:] = out.values[n_active - 1]
        return out


class PeriodicTrajectory:
    """``n_periods`` copies of (base motion, reset motion).

    The reset is a constant velocity over ``reset_segments`` segments that
    cancels the net translation and rotation of the base motion, so the
    effector returns to its neutral pose at every period boundary.  This is
    exact for translations and for 2D rotations; 3D rotations about
    different axes do not commute and are only undone approximately.
    Only the base segments are parameters.
    """

    def __init__(self, base, n_periods, reset_segments=0):
        self.base = base
        self.n_periods = int(n_periods)
        self.reset_segments = int(reset_segments)
        if self.n_periods < 1:
            raise ValueError("n_periods must be >= 1")

    @property
    def segment_length(self):
        return self.base.segment_length

    @property
    def period_segments(self):
        return self.base.n_segments + self.reset_segments

    @property
    def horizon(self):
        return self.n_periods * self.period_segments * self.segment_length

    def reset_values(self):
        if self.reset_segments == 0:
            return np.zeros((0, 6))
        v = -(self.base.values * self.base.mask).sum(axis=0) / self.reset_segments
        return np.tile(v, (self.reset_segments, 1))

    def per_substep(self):
        one = np.concatenate([self.base.values * self.base.mask, self.reset_values()])
        return np.repeat(np.tile(one, (self.n_periods, 1)), self.segment_length, axis=0)

    def pullback(self, g_sub):
        L = self.segment_length
        g = np.asarray(g_sub).reshape(self.n_periods, self.period_segments, L, 6).sum(axis=(0, 2))
        gb = g[: self.base.n_segments].copy()
        if self.reset_segments:
            gb -= g[self.base.n_segments:].sum(axis=0) / self.reset_segments
        return gb * self.base.mask

    def copy(self):
        return copy.deepcopy(self)


def periodic_wrap(base_actions, n_periods, reset_motion=None):
    """Concatenate ``n_periods`` copies of (base ‖ reset) as per-substep actions."""
    base = np.asarray(base_actions, float).reshape(-1, 6)
    reset = np.zeros((0, 6)) if reset_motion is None else np.asarray(reset_motion, float).reshape(-1, 6)
    return np.tile(np.concatenate([base, reset]), (int(n_periods), 1))


def periodic_trajectory_for(horizon, n_periods, segment_length, reset_segments, **kw):
    if horizon % n_periods:
        raise ValueError("horizon must be divisible by n_periods")
    per = horizon // n_periods
    if per % segment_length:
        raise ValueError("period length must be a multiple of segment_length")
    nseg = per // segment_length - reset_segments
    if nseg < 1:
        raise ValueError("reset motion leaves no room for the base motion")
    return PeriodicTrajectory(ActionTrajectory.zeros(nseg, segment_length, **kw), n_periods, reset_segments)


# ---------------------------------------------------------------- schedule

@dataclass
class ExpandSchedule:
    """Temporally expanding optimisation window (in control segments)."""

    horizon: int
    initial_window: int = None
    growth_factor: float = 2.0
    patience: int = 20
    improvement_threshold: float = 1e-3
    window: int = None
    since: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.initial_window is None:
            self.initial_window = max(1, self.horizon // 8)
        self.initial_window = min(self.initial_window, self.horizon)
        if self.window is None:
            self.window = self.initial_window
        self.history = [self.window]

    @classmethod
    def full(cls, horizon):
        return cls(horizon, initial_window=horizon)

    def expand(self, losses):
        """Record one iteration; grow the window when losses have plateaued."""
        self.since += 1
        if self.window >= self.horizon or self.since < self.patience + 1 or len(losses) < self.patience + 1:
            self.history.append(self.window)
            return False
        ref = losses[-self.patience - 1]
        best = min(losses[-self.patience:])
        rel = (ref - best) / max(abs(ref), 1e-12)
        fired = rel < self.improvement_threshold
        if fired:
            self.window = min(self.horizon, max(self.window + 1, int(math.ceil(self.window * self.growth_factor))))
            self.since = 0
        self.history.append(self.window)
        return fired


def expand_window(schedule, recent_losses):
    schedule.expand(list(recent_losses))
    return schedule


# ---------------------------------------------------------------- Adam

class Adam:
    def __init__(self, step_size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = step_size
        self.b1 = beta1
        self.b2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, x, g):
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        return x - self.lr * mh / (np.sqrt(vh) + self.eps)


# ---------------------------------------------------------------- helpers

def with_contact_model(state, model):
    """Clone ``state`` onto a scene that uses the given contact model."""
    scene = copy.copy(state.scene)
    scene.config = dataclasses.replace(state.scene.config, contact_model=model)
    s = state.copy()
    s.scene = scene
    return s


def evaluate(state, traj, loss, horizon=None):
    """Full-horizon task loss (attraction excluded) of a trajectory."""
    acts = traj.per_substep()
    T = len(acts) if horizon is None else horizon
    _, val = rollout(state, acts[:T], T, _TaskOnly(loss))
    return float(val)


class _TaskOnly:
    """View of a LossSpec without its attraction terms."""

    def __init__(self, loss):
        self.loss = loss

    def indices(self, horizon):
        return self.loss.indices(horizon, self.loss.terms)

    def evaluate(self, state, k, horizon, grad=False):
        return self.loss.evaluate(state, k, horizon, grad, self.loss.terms)


class _WindowLoss:
    def __init__(self, loss, use_attraction):
        self.loss = loss
        self.terms = loss.active_terms() if use_attraction else loss.terms

    def indices(self, horizon):
        return self.loss.indices(horizon, self.terms)

    def evaluate(self, state, k, horizon, grad=False):
        return self.loss.evaluate(state, k, horizon, grad, self.terms)


@dataclass
class OptResult:
    trajectory: object
    history: list
    best_loss: float
    windows: list = field(default_factory=list)
    aborted: str = None
    rows: list = field(default_factory=list)


def optimize_dp(state, loss, init, steps=200, step_size=0.05, schedule=None, use_attraction=True,
                stride=None, log=None, stop_below=None):
    """Gradient descent on the action segments with the expanding window.

    The loss during an iteration covers only the active window; actions
    after it hold the last active value.  The window grows when the window
    loss plateaus.  ``history`` records the full-horizon task loss of each
    iterate and the best iterate is returned.  The run stops early once the
    full-horizon loss falls to ``stop_below`` (if given).
    """
    traj = init.copy()
    nseg = traj.n_segments if isinstance(traj, ActionTrajectory) else traj.base.n_segments
    seg_len = traj.segment_length
    if schedule is None:
        schedule = ExpandSchedule(nseg)
    opt = Adam(step_size)
    history, rows = [], []
    best, best_traj = np.inf, traj.copy()
    initial = None
    bad = 0
    wloss = _WindowLoss(loss, use_attraction)
    windows = []
    window_losses = []
    aborted = None
    for it in range(steps):
        t0 = time.perf_counter()
        base = traj if isinstance(traj, ActionTrajectory) else traj.base
        full_traj = traj.held(schedule.window) if isinstance(traj, ActionTrajectory) else traj
        final, full = rollout(state, full_traj.per_substep(), full_traj.horizon, _TaskOnly(loss))
        full = float(full)
        if use_attraction and loss.attraction:
            loss.refresh(final)
        history.append(full)
        windows.append(schedule.window)
        if initial is None:
            initial = full
        if full < best:
            best, best_traj = full, full_traj.copy()
        bad = bad + 1 if full > 10 * abs(initial) + 1e-12 else 0
        if bad >= 10:
            aborted = "divergence guard"
            break
        if stop_below is not None and full <= stop_below:
            break
        if isinstance(traj, ActionTrajectory):
            W = schedule.window * seg_len
            acts = full_traj.per_substep()[:W]
            rep = grad_trajectory(state, acts, wloss, stride=stride or W)
            g = full_traj.pullback(np.concatenate([rep.substep_gradient, np.zeros((full_traj.horizon - W, 6))]))
            g[schedule.window:] = 0.0
        else:
            rep = grad_trajectory(state, traj.per_substep(), wloss, stride=stride or traj.horizon)
            g = traj.pullback(rep.substep_gradient)
        mask = base.mask > 0
        x = base.values[:, mask]
        gx = g[:, mask] if g.shape[0] == base.n_segments else g[:base.n_segments, mask]
        if isinstance(traj, ActionTrajectory):
            gx[schedule.window:] = 0.0
        newx = opt.step(x, gx)
        if isinstance(traj, ActionTrajectory):
            newx[schedule.window:] = x[schedule.window:]
        base.values[:, mask] = newx
        base.clip()
        grad_norm = float(np.linalg.norm(gx))
        rows.append({"iteration": it, "window": schedule.window * seg_len, "loss": full,
                     "window_loss": rep.loss, "grad_norm": grad_norm, "wall_time": time.perf_counter() - t0})
        if log is not None:
            log(rows[-1])
        window_losses.append(rep.loss)
        old = schedule.window
        schedule.expand(window_losses)
        if isinstance(traj, ActionTrajectory) and schedule.window > old:
            traj.values[old:] = traj.values[old - 1]
    return OptResult(best_traj, history, best, windows, aborted, rows)


def optimize_dp_hard(state, loss, init, steps=200, step_size=0.05, stride=None, log=None, stop_below=None):
    """Plain gradient descent: full horizon, no attraction, hard contact."""
    hard = with_contact_model(state, "hard")
    nseg = init.n_segments if isinstance(init, ActionTrajectory) else init.base.n_segments
    return optimize_dp(hard, loss, init, steps, step_size, ExpandSchedule.full(nseg), use_attraction=False,
                       stride=stride, log=log, stop_below=stop_below)


def cma_es_minimize(objective, x0, sigma0, popsize=None, budget=1000, seed=0, bounds=None, log=None):
    """Minimise ``objective`` with CMA-ES (pycma).  Returns (x_best, f_best, history).

    Non-finite objective values rank worst within their generation; a
    generation with no finite value aborts the run.
    """
    import cma

    x0 = np.asarray(x0, float)
    n = x0.size
    if popsize is None:
        popsize = 4 + int(3 * np.log(n))
    if budget < popsize:
        raise ValueError("budget must be at least the population size")
    opts = {"popsize": popsize, "seed": int(seed) + 1, "verbose": -9, "maxfevals": budget,
            "tolfun": 0, "tolfunhist": 0, "tolx": 0, "tolstagnation": int(1e9), "tolflatfitness": int(1e9)}
    if bounds is not None:
        opts["bounds"] = [list(np.broadcast_to(bounds[0], (n,))), list(np.broadcast_to(bounds[1], (n,)))]
    es = cma.CMAEvolutionStrategy(x0.tolist(), sigma0, opts)
    best_x, best_f = x0.copy(), np.inf
    history = []
    evals = 0
    while evals + popsize <= budget:
        xs = es.ask()
        fs = []
        for x in xs:
            try:
                f = float(objective(np.asarray(x)))
            except FluidOptError:
                f = np.nan
            fs.append(f)
        evals += len(xs)
        fin = [f for f in fs if np.isfinite(f)]
        if not fin:
            raise NonFiniteObjectiveError("every sample of a CMA-ES generation was non-finite")
        worst = max(fin)
        ranked = [f if np.isfinite(f) else worst + 1.0 + abs(worst) for f in fs]
        es.tell(xs, ranked)
        i = int(np.argmin(ranked))
        if ranked[i] < best_f:
            best_f, best_x = ranked[i], np.asarray(xs[i]).copy()
        history.append({"evaluations": evals, "best": best_f, "generation_best": ranked[i], "sigma": es.sigma})
        if log is not None:
            log(history[-1])
    return best_x, best_f, history


def optimize_cma(state, loss, init, budget=200, sigma0=0.5, popsize=None, seed=0, log=None):
    """CMA-ES over the free parameters of an ActionTrajectory."""
    base = init.base if isinstance(init, PeriodicTrajectory) else init

    def make(p):
        t = init.copy()
        b = t.base if isinstance(t, PeriodicTrajectory) else t
        b.values[:, b.mask > 0] = np.asarray(p).reshape(b.n_segments, -1)
        b.clip()
        return t

    def obj(p):
        return evaluate(state, make(p), loss)

    bounds = None
    if base.lower is not None and base.upper is not None:
        m = base.mask > 0
        bounds = (np.tile(base.lower[m], base.n_segments), np.tile(base.upper[m], base.n_segments))
    x, f, hist = cma_es_minimize(obj, base.params(), sigma0, popsize, budget, seed, bounds, log)
    init_loss = obj(base.params())
    hist.insert(0, {"evaluations": 0, "best": init_loss, "generation_best": init_loss, "sigma": sigma0})
    if init_loss <= f:
        return OptResult(init.copy(), [h["best"] for h in hist], init_loss, rows=hist)
    return OptResult(make(x), [h["best"] for h in hist], f, rows=hist)


def clone_state(state: SimState):
    return state.copy()
