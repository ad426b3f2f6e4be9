"""One simulation substep and its exact discrete adjoint.

Forward order: effector poses advance by the commanded velocities, scheduled
emitter particles are released, then P2G, grid update, G2P, rigid projection
and (if present) the gas step.  The adjoint recomputes the forward
intermediates from the pre-state and walks the same stages backwards.
"""
from dataclasses import dataclass, field

import numpy as np

from . import gas as gas_mod
from . import mpm
from .errors import FluidOptError, PoisonedAdjointError, SimulationError
from .state import AdjointState, SimState, rotation_increment, rotation_increment_vjp


@dataclass
class SubstepRecord:
    """Tape entry for one substep: enough to replay and differentiate it."""

    index: int
    action: np.ndarray
    alpha: list = field(default_factory=list)
    normals: list = field(default_factory=list)
    gas_residual: float = None
    cache: dict = None


_GRIDS = {}


def mpm_grid(cfg):
    key = (tuple(cfg.domain_lo), cfg.dx, cfg.grid_shape, cfg.boundary_cells)
    if key not in _GRIDS:
        _GRIDS[key] = mpm.Grid.from_config(cfg)
    return _GRIDS[key]


def _emit(scene, k, poses, x, v, F, C):
    """Release emitter particles scheduled for substep ``k``."""
    released = np.zeros(len(x), bool)
    for em in scene.emitters:
        sel = scene.act_step[em.particles] == k
        if not np.any(sel):
            continue
        ids = em.particles[sel]
        off = em.offsets[sel]
        if em.effector is not None:
            pos, rot = poses[em.effector]
            x[ids] = pos + (em.nozzle + off) @ rot.T
            v[ids] = em.exit_velocity @ rot.T
        else:
            x[ids] = em.nozzle + off
            v[ids] = em.exit_velocity
        d = x.shape[1]
        F[ids] = np.eye(d)
        C[ids] = 0.0
        released[ids] = True
    return released


def _emit_vjp(scene, k, poses, gx, gv, gF, gC, eff_pose_grads):
    """Zero cotangents of overwritten particles and route them to the nozzle pose."""
    for em in scene.emitters:
        sel = scene.act_step[em.particles] == k
        if not np.any(sel):
            continue
        ids = em.particles[sel]
        if em.effector is not None:
            pos, rot = poses[em.effector]
            gp, gr = eff_pose_grads[em.effector]
            gp += gx[ids].sum(axis=0)
            gr += gx[ids].T @ (em.nozzle + em.offsets[sel])
            gr += gv[ids].T @ np.broadcast_to(em.exit_velocity, (len(ids), len(pos)))
        gx[ids] = 0.0
        gv[ids] = 0.0
        gF[ids] = 0.0
        gC[ids] = 0.0


def _forward(state, action, keep):
    scene = state.scene
    cfg = scene.config
    dt = cfg.dt_substep
    k = state.step
    grid = mpm_grid(cfg)
    vels = [eff.velocities(action) for eff in scene.effectors]
    pos = state.eff_pos.copy()
    rot = state.eff_rot.copy()
    for e in range(len(scene.effectors)):
        lin, ang = vels[e]
        pos[e] = state.eff_pos[e] + dt * lin
        rot[e] = rotation_increment(ang, dt) @ state.eff_rot[e]
    poses = [(pos[e], rot[e]) for e in range(len(scene.effectors))]
    x, v, F, C = state.x.copy(), state.v.copy(), state.F.copy(), state.C.copy()
    _emit(scene, k, poses, x, v, F, C)
    active = scene.act_step <= k
    cache = {"vels": vels, "poses": poses, "x0": x, "v0": v, "F0": F, "C0": C, "active": active}
    rec = SubstepRecord(k, None if action is None else np.array(action, float))
    if scene.n_particles:
        gmass, gmom, pc = mpm.p2g(x, v, C, F, scene.mass, scene.vol0, scene.mu, scene.lam, active, grid, dt)
        vg, gu = mpm.grid_update(gmass, gmom, dt, cfg.gravity, grid, scene.effectors, poses, vels,
                                 cfg.contact_threshold, cfg.contact_model, cfg.mass_epsilon)
        (x1, v1, F1, C1), g2c = mpm.g2p(vg, x, v, C, F, active, scene, grid, dt, cfg.v_max, kw=pc[0])
        x2, v2, F2, fits = mpm.rigid_body_pass(x1, v1, F1, x, scene, dt)
        for c in gu["contacts"]:
            rec.alpha.append(None if c is None or "alpha" not in c else c["alpha"])
            rec.normals.append(None if c is None or "n" not in c else c["n"])
        if keep:
            cache.update(gmass=gmass, gmom=gmom, pc=pc, gu=gu, x1=x1, g2c=g2c, x2=x2, v2=v2)
    else:
        x2, v2, F2, C1 = x, v, F, C
    new_gas = None
    if state.gas is not None:
        parts = (x2, v2, scene.mass, active) if scene.n_particles else None
        new_gas, gcache = gas_mod.gas_step(state.gas, scene.gas, dt, scene.effectors, poses, vels, parts)
        rec.gas_residual = gcache["residual"]
        if keep:
            cache["gas"] = gcache
    new = SimState(scene, k + 1, x2, v2, F2, C1, pos, rot, new_gas)
    if keep:
        rec.cache = cache
    return new, rec


def mpm_substep(state, action=None, keep=False):
    """Advance one substep.  Returns (new_state, SubstepRecord)."""
    try:
        return _forward(state, action, keep)
    except FluidOptError as err:
        if isinstance(err, SimulationError):
            raise
        raise SimulationError(state.step, err) from err


def adjoint_substep(state, action, g_next: AdjointState):
    """Pull ``g_next`` (cotangent of the post-state) back through one substep.

    Returns (cotangent of the pre-state, cotangent of the 6-vector action).
    """
    scene = state.scene
    cfg = scene.config
    dt = cfg.dt_substep
    d = cfg.dim
    grid = mpm_grid(cfg)
    _, rec = _forward(state, action, keep=True)
    c = rec.cache
    poses, vels, active = c["poses"], c["vels"], c["active"]
    ne = len(scene.effectors)
    g_pos = [g_next.eff_pos[e].copy() for e in range(ne)]
    g_rot = [g_next.eff_rot[e].copy() for e in range(ne)]
    g_lin = [np.zeros(d) for _ in range(ne)]
    g_ang = [np.zeros_like(vels[e][1]) for e in range(ne)]

    def add_eff(e, gd):
        if gd is None:
            return
        g_pos[e] += gd["pos"]
        g_rot[e] += gd["rot"]
        g_lin[e] += gd["lin"]
        g_ang[e] += gd["ang"]

    gx, gv, gF, gC = g_next.x.copy(), g_next.v.copy(), g_next.F.copy(), g_next.C.copy()
    out = AdjointState.zeros_like(state)
    if state.gas is not None:
        gas_parts = (c["x2"], c["v2"], scene.mass, active) if scene.n_particles else None
        gu, gs, gt, g_pv, eg = gas_mod.gas_step_vjp(state.gas, scene.gas, dt, scene.effectors, poses, vels,
                                                   gas_parts, c["gas"], g_next.gas_u, g_next.gas_smoke,
                                                   g_next.gas_temp)
        out.gas_u = gu
        out.gas_smoke = gs
        out.gas_temp = gt
        if g_pv is not None:
            gv = gv + g_pv
        for e in range(ne):
            add_eff(e, eg[e])
    if scene.n_particles:
        x0, v0, F0, C0 = c["x0"], c["v0"], c["F0"], c["C0"]
        gx1, gv1, gF1, gxprev = mpm.rigid_body_pass_vjp(c["x1"], scene, dt, gx, gv, gF)
        g_vg, gx0, gv0, gF0, gC0 = mpm.g2p_vjp(x0, F0, active, scene, grid, dt, cfg.v_max, c["g2c"],
                                                 gx1, gv1, gF1, gC)
        gx0 += gxprev
        g_mass, g_mom, eg = mpm.grid_update_vjp(c["gmass"], c["gmom"], grid, scene.effectors, poses, vels,
                                                cfg.contact_model, c["gu"], g_vg)
        for e in range(ne):
            if eg[e] is not None:
                gp, gr, gl, ga = eg[e]
                add_eff(e, {"pos": gp, "rot": gr, "lin": gl, "ang": ga})
        px, pv, pC, pF = mpm.p2g_vjp(x0, v0, C0, F0, scene.mass, scene.vol0, scene.mu, scene.lam, grid, dt,
                                     c["pc"], g_mass, g_mom)
        gx0 += px
        gv0 += pv
        gC0 += pC
        gF0 += pF
        pose_g = [[g_pos[e], g_rot[e]] for e in range(ne)]
        _emit_vjp(scene, state.step, poses, gx0, gv0, gF0, gC0, pose_g)
        out.x, out.v, out.F, out.C = gx0, gv0, gF0, gC0
    # pose update: pos' = pos + dt lin, rot' = Exp(dt ang) rot
    g_action = np.zeros(6)
    for e, eff in enumerate(scene.effectors):
        lin, ang = vels[e]
        E = rotation_increment(ang, dt)
        out.eff_pos[e] = g_pos[e]
        out.eff_rot[e] = E.T @ g_rot[e]
        g_lin[e] += dt * g_pos[e]
        g_ang[e] += rotation_increment_vjp(ang, dt, state.eff_rot[e], g_rot[e])
        if eff.controlled and action is not None:
            mask = np.asarray(eff.action_mask, float)
            g_action[:d] += g_lin[e] * mask[:d]
            if d == 2:
                g_action[5] += g_ang[e][0] * mask[5]
            else:
                g_action[3:6] += g_ang[e] * mask[3:6]
    for name, arr in out.items():
        if not np.all(np.isfinite(arr)):
            raise PoisonedAdjointError(state.step, name)
    if not np.all(np.isfinite(g_action)):
        raise PoisonedAdjointError(state.step, "action")
    return out, g_action

