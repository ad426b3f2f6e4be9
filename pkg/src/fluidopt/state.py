"""World representation: static scene data and the per-substep dynamic state."""
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneError
from .sdf import rot2, skew, expm_so3


@dataclass
class EffectorShape:
    """One primitive rigidly attached to an effector (offset in effector frame)."""

    shape: object
    offset: np.ndarray
    rotation: np.ndarray


@dataclass
class Effector:
    """Kinematic, velocity-driven SDF body.

    ``action_mask`` selects which of the six action components
    (vx, vy, vz, wx, wy, wz) the effector accepts.  In 2D the in-plane
    rotation is the ``wz`` component.
    """

    name: str
    shapes: list
    position: np.ndarray
    rotation: np.ndarray
    friction_mu: float = 0.0
    action_mask: tuple = (True,) * 6
    linear_velocity: np.ndarray = None
    angular_velocity: np.ndarray = None
    controlled: bool = False
    gas_solid: bool = True
    mpm_contact: bool = True

    def __post_init__(self):
        d = len(self.position)
        self.position = np.asarray(self.position, float)
        if self.friction_mu < 0:
            raise SceneError("friction_mu must be >= 0", shape_id=self.name)
        self.linear_velocity = np.zeros(d) if self.linear_velocity is None else np.asarray(self.linear_velocity, float)
        nw = 1 if d == 2 else 3
        w = np.zeros(nw) if self.angular_velocity is None else np.atleast_1d(np.asarray(self.angular_velocity, float))
        if w.shape != (nw,):
            raise SceneError("angular velocity has the wrong size", shape_id=self.name)
        self.angular_velocity = w
        self.action_mask = tuple(bool(m) for m in self.action_mask)
        if len(self.action_mask) != 6:
            raise SceneError("action_mask needs 6 entries", shape_id=self.name)

    @property
    def dim(self):
        return len(self.position)

    def local_sdf(self, q):
        """Distance, normal and Hessian in the effector frame (union of shapes)."""
        best = None
        for k, es in enumerate(self.shapes):
            ql = (q - es.offset) @ es.rotation
            dist, g, H = es.shape.local(ql)
            g = g @ es.rotation.T
            H = np.einsum("ij,mjk,lk->mil", es.rotation, H, es.rotation)
            if best is None:
                best = [dist, g, H]
            else:
                sel = dist < best[0]
                best[0] = np.where(sel, dist, best[0])
                best[1] = np.where(sel[:, None], g, best[1])
                best[2] = np.where(sel[:, None, None], H, best[2])
        return tuple(best)

    def world_sdf(self, points, pos, rot):
        q = (points - pos) @ rot
        dist, n, H = self.local_sdf(q)
        return dist, n @ rot.T

    def velocities(self, action):
        """Commanded (linear, angular) velocity for this substep."""
        d = self.dim
        if not self.controlled or action is None:
            return self.linear_velocity.copy(), self.angular_velocity.copy()
        a = np.asarray(action, float) * np.asarray(self.action_mask, float)
        lin = a[:d].copy()
        ang = a[5:6].copy() if d == 2 else a[3:6].copy()
        return lin, ang


def point_velocity(lin, ang, y):
    """Rigid velocity ``lin + ang x y`` at offsets ``y`` (M, d)."""
    if y.shape[1] == 2:
        return lin + ang[0] * np.stack([-y[:, 1], y[:, 0]], axis=1)
    return lin + np.cross(ang, y)


def rotation_increment(ang, dt):
    if ang.shape[0] == 1:
        return rot2(ang[0] * dt)
    return expm_so3(ang * dt)


def rotation_increment_vjp(ang, dt, R_prev, gR_next):
    """Cotangent of ``ang`` for ``R_next = Exp(dt ang) R_prev``."""
    if ang.shape[0] == 1:
        th = ang[0] * dt
        c, s = np.cos(th), np.sin(th)
        dE = np.array([[-s, -c], [c, -s]])
        return np.array([dt * np.sum(gR_next * (dE @ R_prev))])
    v = ang * dt
    E = expm_so3(v)
    th2 = v @ v
    g = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        if th2 < 1e-20:
            dE = skew(e)
        else:
            dE = (v[i] * skew(v) + skew(np.cross(v, (np.eye(3) - E) @ e))) @ E / th2
        g[i] = dt * np.sum(gR_next * (dE @ R_prev))
    return g


@dataclass
class Emitter:
    """Pre-allocated particles released on a schedule at a nozzle."""

    particles: np.ndarray
    offsets: np.ndarray
    exit_velocity: np.ndarray
    nozzle: np.ndarray
    effector: int = None


@dataclass
class GasSource:
    cells: np.ndarray
    velocity: np.ndarray = None
    smoke: float = None
    temperature: float = None
    effector: int = None


@dataclass
class GasState:
    u: list
    smoke: np.ndarray
    temp: np.ndarray
    solid: np.ndarray = None

    def copy(self):
        return GasState([a.copy() for a in self.u], self.smoke.copy(), self.temp.copy(),
                        None if self.solid is None else self.solid.copy())


@dataclass
class Scene:
    """Static data shared by every state of a trajectory."""

    config: object
    materials: list
    material_names: list
    body_names: list
    mass: np.ndarray
    vol0: np.ndarray
    material: np.ndarray
    body: np.ndarray
    act_step: np.ndarray
    rest: np.ndarray
    effectors: list = field(default_factory=list)
    emitters: list = field(default_factory=list)
    gas: object = None
    seed: int = 0

    def __post_init__(self):
        mats = self.materials
        self.kind = np.array([mats[m].code for m in self.material], dtype=int).reshape(-1)
        self.mu = np.array([mats[m].mu for m in self.material], float).reshape(-1)
        self.lam = np.array([mats[m].lam for m in self.material], float).reshape(-1)
        self.theta_c = np.array([mats[m].theta_c for m in self.material], float).reshape(-1)
        self.theta_s = np.array([mats[m].theta_s for m in self.material], float).reshape(-1)
        self.sigma_y = np.array([mats[m].sigma_y for m in self.material], float).reshape(-1)
        self.rigid_bodies = {}
        from .materials import KIND_CODE
        for b in np.unique(self.body[self.kind == KIND_CODE["Rigid"]]) if len(self.body) else []:
            idx = np.nonzero(self.body == b)[0]
            self.rigid_bodies[int(b)] = idx
        agents = [i for i, e in enumerate(self.effectors) if e.controlled]
        if len(agents) > 1:
            raise SceneError("at most one controlled effector is supported")
        self.agent = agents[0] if agents else None

    @property
    def n_particles(self):
        return len(self.mass)

    @property
    def dim(self):
        return self.config.dim

    def body_index(self, name):
        if isinstance(name, (int, np.integer)):
            return int(name)
        if name not in self.body_names:
            raise SceneError(f"unknown body {name!r}")
        return self.body_names.index(name)

    def body_particles(self, name):
        return np.nonzero(self.body == self.body_index(name))[0]


@dataclass
class SimState:
    """Dynamic state at the start of one substep."""

    scene: Scene
    step: int
    x: np.ndarray
    v: np.ndarray
    F: np.ndarray
    C: np.ndarray
    eff_pos: np.ndarray
    eff_rot: np.ndarray
    gas: GasState = None

    @property
    def time(self):
        return self.step * self.scene.config.dt_substep

    @property
    def particles(self):
        return self.x

    @property
    def effectors(self):
        return self.scene.effectors

    def active(self):
        return self.scene.act_step <= self.step

    def copy(self):
        return SimState(self.scene, self.step, self.x.copy(), self.v.copy(), self.F.copy(), self.C.copy(),
                        self.eff_pos.copy(), self.eff_rot.copy(), None if self.gas is None else self.gas.copy())

    def arrays(self):
        """Flat mapping of every dynamic array (used for snapshots and comparisons)."""
        out = {"step": np.array(self.step), "x": self.x, "v": self.v, "F": self.F, "C": self.C,
               "eff_pos": self.eff_pos, "eff_rot": self.eff_rot}
        if self.gas is not None:
            for a, comp in enumerate(self.gas.u):
                out[f"gas_u{a}"] = comp
            out["gas_smoke"] = self.gas.smoke
            out["gas_temp"] = self.gas.temp
        return out

    def observation(self):
        """Observable slice: particle positions and velocities (N, 2d)."""
        return np.concatenate([self.x, self.v], axis=1)

    def total_mass(self):
        return float(np.sum(self.scene.mass * self.active()))

    def momentum(self):
        return (self.scene.mass * self.active()) @ self.v

    def kinetic_energy(self):
        return 0.5 * float(np.sum(self.scene.mass * self.active() * np.sum(self.v**2, axis=1)))


@dataclass
class AdjointState:
    """Cotangents mirroring the dynamic arrays of a SimState."""

    x: np.ndarray
    v: np.ndarray
    F: np.ndarray
    C: np.ndarray
    eff_pos: np.ndarray
    eff_rot: np.ndarray
    gas_u: list = None
    gas_smoke: np.ndarray = None
    gas_temp: np.ndarray = None

    @classmethod
    def zeros_like(cls, s):
        g = s.gas
        return cls(np.zeros_like(s.x), np.zeros_like(s.v), np.zeros_like(s.F), np.zeros_like(s.C),
                   np.zeros_like(s.eff_pos), np.zeros_like(s.eff_rot),
                   None if g is None else [np.zeros_like(a) for a in g.u],
                   None if g is None else np.zeros_like(g.smoke),
                   None if g is None else np.zeros_like(g.temp))

    def items(self):
        yield "x", self.x
        yield "v", self.v
        yield "F", self.F
        yield "C", self.C
        yield "eff_pos", self.eff_pos
        yield "eff_rot", self.eff_rot
        if self.gas_u is not None:
            for a, c in enumerate(self.gas_u):
                yield f"gas_u{a}", c
            yield "gas_smoke", self.gas_smoke
            yield "gas_temp", self.gas_temp

    def add(self, other):
        for (k, a), (_, b) in zip(self.items(), other.items()):
            a += b
        return self
