"""Eulerian smoke/temperature solver on a staggered (MAC) grid.

Velocity component ``a`` lives on the faces normal to axis ``a``; smoke and
temperature live at cell centres.  A step is: sources, semi-Lagrangian
advection, buoyancy, solid boundary velocities, particle impact and pressure
projection.  Every stage is linear or piecewise multilinear in the state, so
each has a compact transpose used by the adjoint.
"""
from dataclasses import dataclass, field

import numpy as np

from .config import GasConfig, ProjectionSolve
from .errors import ResidualTooLargeError, SceneError
from .state import GasState, point_velocity

FLUID = -1
STATIC = -2
# boundary cells owned by domain side s carry the label INFLOW_BASE - s
INFLOW_BASE = -10


def _scatter(idx, vals, size):
    return np.bincount(idx.ravel(), weights=vals.ravel(), minlength=size)


class Sampler:
    """Multilinear interpolation of one staggered field at fixed world points.

    Coordinates are clamped to the field's sample range, so samples never
    leave the convex hull of stored values (no new extrema).
    """

    def __init__(self, points, lo, h, shape, stagger_axis=None):
        points = np.asarray(points, float)
        d = len(shape)
        shift = np.full(d, 0.5)
        if stagger_axis is not None:
            shift[stagger_axis] = 0.0
        c = (points - lo) / h - shift
        n = np.asarray(shape)
        inside = (c > 0) & (c < n - 1)
        c = np.clip(c, 0, n - 1)
        i0 = np.clip(np.floor(c).astype(int), 0, np.maximum(n - 2, 0))
        f = c - i0
        corners = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
        strides = np.array([int(np.prod(shape[a + 1:])) for a in range(d)])
        wa = np.where(corners[None] == 1, f[:, None, :], 1.0 - f[:, None, :])   # (M, K, d)
        self.idx = (i0[:, None, :] + corners[None]) @ strides
        self.w = np.prod(wa, axis=2)
        sgn = np.where(corners == 1, 1.0, -1.0)
        dw = np.empty(wa.shape)
        for k in range(d):
            dw[:, :, k] = sgn[None, :, k] * np.prod(np.delete(wa, k, axis=2), axis=2)
        self.dw = dw * (inside[:, None, :] / h)
        self.size = int(np.prod(shape))
        self.shape = tuple(shape)

    def __call__(self, field):
        return np.sum(self.w * field.ravel()[self.idx], axis=1)

    def vjp_field(self, g):
        return _scatter(self.idx, self.w * g[:, None], self.size).reshape(self.shape)

    def vjp_points(self, field, g):
        return np.einsum("mk,mkd->md", field.ravel()[self.idx] * g[:, None], self.dw)


class GasGrid:
    """Geometry of the gas lattice: cell centres, face positions, boundary labels."""

    def __init__(self, lo, h, shape, gcfg: GasConfig, static_solids=()):
        self.lo = np.asarray(lo, float)
        self.h = float(h)
        self.shape = tuple(shape)
        self.dim = len(shape)
        self.cfg = gcfg
        d = self.dim
        axes = [self.lo[a] + (np.arange(shape[a]) + 0.5) * h for a in range(d)]
        self.centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        self.face_shape = []
        self.face_pos = []
        for a in range(d):
            fs = list(shape)
            fs[a] += 1
            ax = list(axes)
            ax[a] = self.lo[a] + np.arange(fs[a]) * h
            self.face_shape.append(tuple(fs))
            self.face_pos.append(np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, d))
        names = ("x", "y", "z")
        self.sides = {}
        base = np.full(self.shape, FLUID, dtype=int)
        for a in range(d):
            for s, sign in enumerate("-+"):
                name = names[a] + sign
                spec = gcfg.side(name)
                kind = spec.get("type", "wall")
                if kind not in ("wall", "inflow", "outflow"):
                    raise SceneError(f"unknown gas boundary type {kind!r} on side {name}")
                self.sides[name] = spec
                if kind == "outflow":
                    continue
                sl = [slice(None)] * d
                sl[a] = 0 if sign == "-" else -1
                label = STATIC if kind == "wall" else INFLOW_BASE - (2 * a + s)
                layer = base[tuple(sl)]
                # walls never overwrite an inflow layer at a corner
                layer[layer == FLUID] = label
        for prim in static_solids:
            dist, _ = prim.evaluate(self.centers)
            base.reshape(-1)[dist <= 0] = STATIC
        self.base_owner = base

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    def side_by_label(self, label):
        names = ("x", "y", "z")
        k = INFLOW_BASE - label
        return self.sides[names[k // 2] + "-+"[k % 2]]


@dataclass
class GasSetup:
    """Static part of a gas scene."""

    grid: GasGrid
    config: GasConfig
    sources: list = field(default_factory=list)
    static_solids: list = field(default_factory=list)


# ---------------------------------------------------------------- operators

def divergence(u, fluid, h):
    """Cell divergence on fluid cells (zero elsewhere)."""
    d = len(u)
    div = np.zeros(fluid.shape)
    for a in range(d):
        div += np.diff(u[a], axis=a) / h
    return np.where(fluid, div, 0.0)


def divergence_T(c, fluid, h):
    """Transpose of :func:`divergence`: face value ``(c_L - c_R) / h``."""
    c = np.where(fluid, c, 0.0)
    out = []
    for a in range(c.ndim):
        pad = [(0, 0)] * c.ndim
        pad[a] = (1, 1)
        cp = np.pad(c, pad)
        lo = [slice(None)] * c.ndim
        hi = [slice(None)] * c.ndim
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        out.append((cp[tuple(hi)] - cp[tuple(lo)]) * (-1.0 / h))
    return out


def face_masks(owner, grid):
    """Fixed faces touch a solid cell; free faces are the remaining ones.

    Faces on the domain boundary of an outflow side are free (ghost pressure 0).
    Returns (free, fixed_owner) where fixed_owner labels the solid cell that
    prescribes each fixed face, or FLUID for free faces.
    """
    d = owner.ndim
    free, fown = [], []
    for a in range(d):
        pad = [(0, 0)] * d
        pad[a] = (1, 1)
        op = np.pad(owner, pad, constant_values=FLUID)
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        L, R = op[tuple(lo)], op[tuple(hi)]
        fo = np.where(L != FLUID, L, R)
        free.append(fo == FLUID)
        fown.append(fo)
    return free, fown


def _jacobi(apply_A, diag, b, solve):
    x = np.zeros_like(b)
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    for _ in range(solve.iterations):
        x = x + solve.omega * inv * (b - apply_A(x))
    return x


def _cg(apply_A, b, tol, max_iter):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = np.sum(r * r)
    for _ in range(max_iter):
        if np.max(np.abs(r), initial=0.0) <= tol:
            break
        Ap = apply_A(p)
        pAp = np.sum(p * Ap)
        if pAp <= 0:
            break
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = np.sum(r * r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


class Projector:
    """Pressure projection for a fixed solid configuration.

    Solves ``div(free * grad q) = div u`` for cell unknowns ``q`` and removes
    ``free * grad q`` from the velocity.  The Jacobi variant runs a fixed
    number of damped sweeps, which makes the solve a fixed symmetric linear
    map, so the adjoint is the same routine applied to the cotangent.
    """

    def __init__(self, fluid, free, h, solve: ProjectionSolve):
        self.fluid = fluid
        self.free = free
        self.h = h
        self.solve = solve
        # diagonal of A: count of free faces per fluid cell / h^2
        diag = np.zeros(fluid.shape)
        for a in range(fluid.ndim):
            fa = free[a].astype(float)
            sl_lo = [slice(None)] * fluid.ndim
            sl_hi = [slice(None)] * fluid.ndim
            sl_lo[a] = slice(0, -1)
            sl_hi[a] = slice(1, None)
            diag += fa[tuple(sl_lo)] + fa[tuple(sl_hi)]
        self.diag = np.where(fluid, diag / h**2, 0.0)
        # a fully enclosed fluid region has a constant null space
        self.closed = not any(np.any(f & self._boundary_face(a)) for a, f in enumerate(free))

    def _boundary_face(self, a):
        m = np.zeros(self.free[a].shape, bool)
        sl = [slice(None)] * m.ndim
        sl[a] = 0
        m[tuple(sl)] = True
        sl[a] = -1
        m[tuple(sl)] = True
        return m

    def apply_A(self, q):
        g = divergence_T(q, self.fluid, self.h)
        return divergence([gi * fi for gi, fi in zip(g, self.free)], self.fluid, self.h)

    def solve_cells(self, b):
        if self.closed:
            n = np.count_nonzero(self.fluid)
            if n:
                b = np.where(self.fluid, b - b[self.fluid].sum() / n, 0.0)
        if self.solve.kind == "jacobi":
            return _jacobi(self.apply_A, self.diag, b, self.solve)
        return _cg(self.apply_A, b, self.solve.tolerance, self.solve.iterations)

    def project(self, u):
        q = self.solve_cells(divergence(u, self.fluid, self.h))
        g = divergence_T(q, self.fluid, self.h)
        out = [ua - fa * ga for ua, fa, ga in zip(u, self.free, g)]
        return out

    def project_vjp(self, g):
        gf = [ga * fa for ga, fa in zip(g, self.free)]
        q = self.solve_cells(divergence(gf, self.fluid, self.h))
        t = divergence_T(q, self.fluid, self.h)
        return [ga - ta for ga, ta in zip(g, t)]

    def residual(self, u):
        div = divergence(u, self.fluid, self.h)
        return float(np.max(np.abs(div[self.fluid]), initial=0.0))


def pressure_project(u, owner, grid, solve, strict=None):
    """Project ``u`` to its discretely divergence-free part.

    Returns (u', residual).  Raises ResidualTooLargeError when the post-solve
    divergence exceeds ``solve.tolerance`` and the solve is strict.
    """
    fluid = owner == FLUID
    free, _ = face_masks(owner, grid)
    proj = Projector(fluid, free, grid.h, solve)
    out = proj.project(u)
    res = proj.residual(out)
    strict = solve.strict if strict is None else strict
    if strict and res > solve.tolerance:
        raise ResidualTooLargeError(res, solve.tolerance)
    return out, res


def semi_lagrangian_advect(field_, u, grid, dt, stagger_axis=None):
    """Advect a cell field (``stagger_axis=None``) or a face component."""
    pts = grid.centers if stagger_axis is None else grid.face_pos[stagger_axis]
    vel = np.stack([Sampler(pts, grid.lo, grid.h, grid.face_shape[b], b)(u[b]) for b in range(grid.dim)], axis=1)
    back = pts - dt * vel
    fshape = grid.shape if stagger_axis is None else grid.face_shape[stagger_axis]
    return Sampler(back, grid.lo, grid.h, fshape, stagger_axis)(field_).reshape(fshape)


def add_buoyancy(u, smoke, temp, dt, kappa_smoke, beta_temp, ambient, axis=1):
    """Boussinesq forcing on interior faces normal to the vertical axis."""
    u = [a.copy() for a in u]
    f = -kappa_smoke * smoke + beta_temp * (temp - ambient)
    lo = [slice(None)] * smoke.ndim
    hi = [slice(None)] * smoke.ndim
    mid = [slice(None)] * smoke.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    mid[axis] = slice(1, -1)
    u[axis][tuple(mid)] += dt * 0.5 * (f[tuple(lo)] + f[tuple(hi)])
    return u


def _buoyancy_vjp(g_u_axis, dt, kappa_smoke, beta_temp, axis):
    gm = g_u_axis[tuple(slice(1, -1) if a == axis else slice(None) for a in range(g_u_axis.ndim))]
    n = list(gm.shape)
    n[axis] += 1
    gf = np.zeros(n)
    lo = [slice(None)] * gm.ndim
    hi = [slice(None)] * gm.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    gf[tuple(lo)] += 0.5 * dt * gm
    gf[tuple(hi)] += 0.5 * dt * gm
    return -kappa_smoke * gf, beta_temp * gf


def rasterize_solid_mask(grid, effectors=(), poses=()):
    """Cell owner labels: FLUID, STATIC, inflow sides, or the effector index."""
    owner = grid.base_owner.copy().reshape(-1)
    for e, eff in enumerate(effectors):
        if not eff.gas_solid:
            continue
        pos, rot = poses[e]
        dist, _ = eff.world_sdf(grid.centers, pos, rot)
        owner[(dist <= 0) & (owner == FLUID)] = e
    return owner.reshape(grid.shape)


def _fixed_values(grid, fown, effectors, poses, vels):
    """Prescribed normal velocities on fixed faces."""
    out = []
    for a in range(grid.dim):
        val = np.zeros(grid.face_shape[a])
        lab = fown[a]
        flat = val.reshape(-1)
        lf = lab.reshape(-1)
        for label in np.unique(lf):
            if label in (FLUID, STATIC):
                continue
            sel = lf == label
            if label >= 0:
                pos, _ = poses[label]
                lin, ang = vels[label]
                flat[sel] = point_velocity(lin, ang, grid.face_pos[a][sel] - pos)[:, a]
            else:
                v = np.asarray(grid.side_by_label(label).get("velocity", np.zeros(grid.dim)), float)
                flat[sel] = v[a]
        out.append(val)
    return out


def _fixed_values_vjp(grid, fown, poses, vels, g_fixed, n_eff):
    grads = [None] * n_eff
    for a in range(grid.dim):
        lf = fown[a].reshape(-1)
        ga = g_fixed[a].reshape(-1)
        for label in np.unique(lf):
            if label < 0:
                continue
            sel = lf == label
            pos, _ = poses[label]
            lin, ang = vels[label]
            d = grid.dim
            if grads[label] is None:
                grads[label] = _zero_eff_grad(d, ang)
            gp, gl, gw = grads[label]["pos"], grads[label]["lin"], grads[label]["ang"]
            y = grid.face_pos[a][sel] - pos
            g = np.zeros((sel.sum(), d))
            g[:, a] = ga[sel]
            gl += g.sum(axis=0)
            if d == 2:
                gw[0] += np.sum(-y[:, 1] * g[:, 0] + y[:, 0] * g[:, 1])
                gy = ang[0] * np.stack([g[:, 1], -g[:, 0]], axis=1)
            else:
                gw += np.cross(y, g).sum(axis=0)
                gy = -np.cross(ang, g)
            gp -= gy.sum(axis=0)
    return grads


def _zero_eff_grad(d, ang):
    return {"pos": np.zeros(d), "rot": np.zeros((d, d)), "lin": np.zeros(d), "ang": np.zeros_like(ang)}


def _impact_weights(x, v, mass, active, grid, free):
    """Per-face mass and mass-weighted particle velocity from adjacent cells."""
    cell = np.floor((x - grid.lo) / grid.h).astype(int)
    ok = active & np.all((cell >= 0) & (cell < np.asarray(grid.shape)), axis=1)
    strides = np.array([int(np.prod(grid.shape[a + 1:])) for a in range(grid.dim)])
    cid = cell[ok] @ strides
    m = mass[ok]
    cm = np.bincount(cid, weights=m, minlength=grid.n_cells).reshape(grid.shape)
    return ok, cid, m, cm


def particle_impact(u, x, v, mass, active, grid, free, strength, dt):
    """Relax free faces next to particle-occupied cells toward the particle velocity."""
    k = min(strength * dt, 1.0)
    if k <= 0 or x is None or len(x) == 0:
        return [a.copy() for a in u], None
    ok, cid, m, cm = _impact_weights(x, v, mass, active, grid, free)
    out = []
    info = {"ok": ok, "cid": cid, "m": m, "k": k, "faces": []}
    for a in range(grid.dim):
        cmom = np.bincount(cid, weights=m * v[ok, a], minlength=grid.n_cells).reshape(grid.shape)
        pad = [(0, 0)] * grid.dim
        pad[a] = (1, 1)
        cmp_, cpp = np.pad(cm, pad), np.pad(cmom, pad)
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        fm = cmp_[tuple(lo)] + cmp_[tuple(hi)]
        fmom = cpp[tuple(lo)] + cpp[tuple(hi)]
        sel = free[a] & (fm > 0)
        ua = u[a].copy()
        ua[sel] += k * (fmom[sel] / fm[sel] - ua[sel])
        out.append(ua)
        info["faces"].append((sel, fm))
    return out, info


def _impact_vjp(g, v, grid, info):
    """Returns (g_u, g_v) for the particle impact stage."""
    gu = []
    gv = np.zeros_like(v)
    ok, cid, m, k = info["ok"], info["cid"], info["m"], info["k"]
    for a in range(grid.dim):
        sel, fm = info["faces"][a]
        ga = g[a].copy()
        gfmom = np.where(sel, k * g[a] / np.where(sel, fm, 1.0), 0.0)
        ga[sel] *= (1.0 - k)
        gu.append(ga)
        # fmom at face = cmom_L + cmom_R  -> cell cotangent
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        gc = gfmom[tuple(lo)] + gfmom[tuple(hi)]
        gv[ok, a] += m * gc.reshape(-1)[cid]
    return gu, gv


# ---------------------------------------------------------------- full step

def _apply_sources(gas, setup, eff_rot):
    grid = setup.grid
    u = [a.copy() for a in gas.u]
    smoke = gas.smoke.copy()
    temp = gas.temp.copy()
    src_faces = [np.zeros(s, bool) for s in grid.face_shape]
    # inflow boundary layers carry their own scalar values
    for label in np.unique(grid.base_owner):
        if label > INFLOW_BASE:
            continue
        spec = grid.side_by_label(label)
        sel = grid.base_owner == label
        if spec.get("smoke") is not None:
            smoke[sel] = spec["smoke"]
        if spec.get("temperature") is not None:
            temp[sel] = spec["temperature"]
    for src in setup.sources:
        cells = tuple(np.asarray(src.cells).T)
        if src.smoke is not None:
            smoke[cells] = src.smoke
        if src.temperature is not None:
            temp[cells] = src.temperature
        if src.velocity is not None:
            vel = np.asarray(src.velocity, float)
            if src.effector is not None:
                vel = eff_rot[src.effector] @ vel
            for a in range(grid.dim):
                for shift in (0, 1):
                    fc = list(cells)
                    fc[a] = fc[a] + shift
                    u[a][tuple(fc)] = vel[a]
                    src_faces[a][tuple(fc)] = True
    return GasState(u, smoke, temp, gas.solid), src_faces


def gas_step(gas, setup, dt, effectors=(), poses=(), vels=(), particles=None, strict=None):
    """Advance the gas by one substep.  Returns (new GasState, cache)."""
    grid = setup.grid
    gc = setup.config
    eff_rot = [p[1] for p in poses]
    g0, src_faces = _apply_sources(gas, setup, eff_rot)
    u0 = g0.u
    u1 = [semi_lagrangian_advect(u0[a], u0, grid, dt, a) for a in range(grid.dim)]
    s1 = semi_lagrangian_advect(g0.smoke, u0, grid, dt)
    t1 = semi_lagrangian_advect(g0.temp, u0, grid, dt)
    u2 = add_buoyancy(u1, s1, t1, dt, gc.kappa_smoke, gc.beta_temp, gc.ambient_temperature, gc.vertical_axis)
    owner = rasterize_solid_mask(grid, effectors, poses)
    free, fown = face_masks(owner, grid)
    fixed = _fixed_values(grid, fown, effectors, poses, vels)
    u3 = [np.where(f, ua, fv) for f, ua, fv in zip(free, u2, fixed)]
    info = None
    if particles is not None and gc.coupling_strength > 0:
        x, v, mass, active = particles
        u4, info = particle_impact(u3, x, v, mass, active, grid, free, gc.coupling_strength, dt)
    else:
        u4 = u3
    fluid = owner == FLUID
    proj = Projector(fluid, free, grid.h, gc.projection)
    u5 = proj.project(u4)
    res = proj.residual(u5)
    strict = gc.projection.strict if strict is None else strict
    if strict and res > gc.projection.tolerance:
        raise ResidualTooLargeError(res, gc.projection.tolerance)
    s1 = np.maximum(s1, 0.0)
    cache = dict(g0=g0, src_faces=src_faces, free=free, fown=fown, proj=proj, info=info, residual=res)
    return GasState(u5, s1, t1, owner), cache


def gas_step_vjp(gas, setup, dt, effectors, poses, vels, particles, cache, g_u, g_smoke, g_temp):
    """Reverse of :func:`gas_step`.

    Returns (g_u_in, g_smoke_in, g_temp_in, g_particle_v, per-effector grads)
    where each effector entry is a dict of pos/rot/lin/ang cotangents or None.
    """
    grid = setup.grid
    gc = setup.config
    d = grid.dim
    n_eff = len(effectors)
    g0 = cache["g0"]
    u0 = g0.u
    free = cache["free"]
    g = cache["proj"].project_vjp(g_u)
    g_pv = None
    if cache["info"] is not None:
        g, g_pv = _impact_vjp(g, particles[1], grid, cache["info"])
    g_fixed = [np.where(f, 0.0, ga) for f, ga in zip(free, g)]
    g = [np.where(f, ga, 0.0) for f, ga in zip(free, g)]
    eff_grads = _fixed_values_vjp(grid, cache["fown"], poses, vels, g_fixed, n_eff)
    # buoyancy (smoke clamp is inactive: advection keeps smoke >= 0)
    gs_b, gt_b = _buoyancy_vjp(g[gc.vertical_axis], dt, gc.kappa_smoke, gc.beta_temp, gc.vertical_axis)
    g_s1 = g_smoke + gs_b
    g_t1 = g_temp + gt_b
    # advection
    g_u0 = [np.zeros_like(a) for a in u0]
    jobs = [(u0[a], a, g[a]) for a in range(d)] + [(g0.smoke, None, g_s1), (g0.temp, None, g_t1)]
    for fld, ax, gout in jobs:
        pts = grid.centers if ax is None else grid.face_pos[ax]
        fshape = grid.shape if ax is None else grid.face_shape[ax]
        vs = [Sampler(pts, grid.lo, grid.h, grid.face_shape[b], b) for b in range(d)]
        vel = np.stack([vs[b](u0[b]) for b in range(d)], axis=1)
        back = Sampler(pts - dt * vel, grid.lo, grid.h, fshape, ax)
        gflat = gout.reshape(-1)
        gfield = back.vjp_field(gflat)
        if ax is not None:
            g_u0[ax] += gfield
        g_back = back.vjp_points(fld, gflat)
        for b in range(d):
            g_u0[b] += vs[b].vjp_field(-dt * g_back[:, b])
        if ax is None:
            if fld is g0.smoke:
                g_s0 = gfield
            else:
                g_t0 = gfield
    # sources overwrite values
    for a in range(d):
        gsrc = np.where(cache["src_faces"][a], g_u0[a], 0.0)
        g_u0[a] = np.where(cache["src_faces"][a], 0.0, g_u0[a])
        _source_rot_vjp(setup, a, gsrc, eff_grads, d, vels)
    g_s0 = np.where(_scalar_overwritten(setup, "smoke"), 0.0, g_s0)
    g_t0 = np.where(_scalar_overwritten(setup, "temperature"), 0.0, g_t0)
    return g_u0, g_s0, g_t0, g_pv, eff_grads


def _scalar_overwritten(setup, key):
    grid = setup.grid
    m = np.zeros(grid.shape, bool)
    for label in np.unique(grid.base_owner):
        if label <= INFLOW_BASE and grid.side_by_label(label).get(key) is not None:
            m |= grid.base_owner == label
    attr = "smoke" if key == "smoke" else "temperature"
    for src in setup.sources:
        if getattr(src, attr) is not None:
            m[tuple(np.asarray(src.cells).T)] = True
    return m


def _source_rot_vjp(setup, a, gsrc, eff_grads, d, vels):
    """Cotangent of an effector rotation that steers a source's velocity."""
    for src in setup.sources:
        if src.velocity is None or src.effector is None:
            continue
        cells = tuple(np.asarray(src.cells).T)
        tot = 0.0
        for shift in (0, 1):
            fc = list(cells)
            fc[a] = fc[a] + shift
            tot += gsrc[tuple(fc)].sum()
            gsrc[tuple(fc)] = 0.0
        e = src.effector
        if eff_grads[e] is None:
            eff_grads[e] = _zero_eff_grad(d, vels[e][1])
        eff_grads[e]["rot"][a] += tot * np.asarray(src.velocity, float)


def new_gas_state(grid, ambient_temperature=0.0, smoke=0.0, velocity=None):
    d = grid.dim
    vel = np.zeros(d) if velocity is None else np.asarray(velocity, float)
    u = [np.full(grid.face_shape[a], vel[a]) for a in range(d)]
    return GasState(u, np.full(grid.shape, float(smoke)), np.full(grid.shape, float(ambient_temperature)),
                    grid.base_owner.copy())
