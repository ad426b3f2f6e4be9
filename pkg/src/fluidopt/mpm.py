"""MLS-MPM transfer operators, grid dynamics and effector contact.

Each forward operator returns whatever intermediate data its ``*_vjp``
counterpart needs; the adjoint recomputes a substep rather than storing these.
Scatter uses ``np.bincount`` which sums in a fixed order, so results are
bit-reproducible.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import EscapeError
from .materials import (KIND_CODE, box_yield_project, box_yield_project_vjp, kirchhoff_stress,
                        kirchhoff_stress_vjp, liquid_project, liquid_project_vjp, rigid_shape_match,
                        rigid_shape_match_vjp, von_mises_project, von_mises_project_vjp)
from .state import point_velocity

STICKY = np.inf


class Grid:
    """Collocated MPM node lattice: ``cells + 1`` nodes per axis."""

    def __init__(self, lo, dx, cells, bound=3):
        self.lo = np.asarray(lo, float)
        self.dx = float(dx)
        self.cells = tuple(cells)
        self.dim = len(self.cells)
        self.shape = tuple(c + 1 for c in self.cells)
        self.size = int(np.prod(self.shape))
        idx = np.stack(np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij"), axis=-1).reshape(-1, self.dim)
        self.node_index = idx
        self.node_pos = self.lo + idx * self.dx
        self.bound = bound
        self.low = [idx[:, a] < bound for a in range(self.dim)]
        self.high = [idx[:, a] > self.cells[a] - bound for a in range(self.dim)]
        self.offsets = np.array(list(itertools.product(range(3), repeat=self.dim)), dtype=int)
        self.strides = np.array([int(np.prod(self.shape[a + 1:])) for a in range(self.dim)], dtype=int)

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.domain_lo, cfg.dx, cfg.grid_shape, cfg.boundary_cells)

    @property
    def hi(self):
        return self.lo + np.asarray(self.cells) * self.dx


@dataclass
class KernelWeights:
    """Quadratic B-spline weights of particles on their 3^d node stencil."""

    base: np.ndarray
    fx: np.ndarray
    w1: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    idx: np.ndarray
    dpos: np.ndarray


def bspline(fx):
    """Per-axis weights and derivatives at offsets 0, 1, 2 from the base node."""
    w = np.stack([0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2], axis=1)
    dw = np.stack([fx - 1.5, -2.0 * (fx - 1.0), fx - 0.5], axis=1)
    return w, dw


def kernel_weights(x, grid):
    xi = (x - grid.lo) / grid.dx
    base = np.floor(xi - 0.5).astype(int)
    bad = np.any((base < 0) | (base + 2 > np.asarray(grid.cells)), axis=1) | ~np.all(np.isfinite(x), axis=1)
    if np.any(bad):
        raise EscapeError(np.nonzero(bad)[0])
    fx = xi - base
    w1, dw1 = bspline(fx)
    off = grid.offsets
    n, d = x.shape
    S = len(off)
    ax = np.arange(d)
    wsel = w1[:, off, ax]          # (N, S, d)
    dsel = dw1[:, off, ax]
    w = np.prod(wsel, axis=2)
    dw = np.empty((n, S, d))
    for c in range(d):
        others = np.prod(np.delete(wsel, c, axis=2), axis=2)
        dw[:, :, c] = dsel[:, :, c] * others / grid.dx
    idx = (base[:, None, :] + off[None]) @ grid.strides
    dpos = (off[None] - fx[:, None, :]) * grid.dx
    return KernelWeights(base, fx, w1, w, dw, idx, dpos)


def _scatter(idx, vals, size):
    return np.bincount(idx.ravel(), weights=vals.ravel(), minlength=size)


# ---------------------------------------------------------------- P2G

def p2g(x, v, C, F, mass, vol0, mu, lam, active, grid, dt, kw=None):
    """Particle-to-grid transfer of mass and momentum (with MLS stress)."""
    kw = kernel_weights(x, grid) if kw is None else kw
    act = active.astype(float)
    m = mass * act
    tau = kirchhoff_stress(F, mu, lam)
    A = m[:, None, None] * C - (dt * vol0 * act * 4.0 / grid.dx**2)[:, None, None] * tau
    Q = m[:, None] * v
    contrib = kw.w[..., None] * (Q[:, None, :] + np.einsum("nab,nsb->nsa", A, kw.dpos))
    gmass = _scatter(kw.idx, kw.w * m[:, None], grid.size)
    gmom = np.stack([_scatter(kw.idx, contrib[..., a], grid.size) for a in range(grid.dim)], axis=1)
    return gmass, gmom, (kw, A, Q, m, act)


def p2g_vjp(x, v, C, F, mass, vol0, mu, lam, grid, dt, cache, g_mass, g_mom):
    kw, A, Q, m, act = cache
    gm_s = g_mass[kw.idx]
    gP_s = g_mom[kw.idx]
    gQ = np.einsum("ns,nsa->na", kw.w, gP_s)
    gA = np.einsum("ns,nsa,nsb->nab", kw.w, gP_s, kw.dpos)
    gv = m[:, None] * gQ
    gC = m[:, None, None] * gA
    gtau = -(dt * vol0 * act * 4.0 / grid.dx**2)[:, None, None] * gA
    gF = kirchhoff_stress_vjp(F, mu, lam, gtau)
    # position: through dpos = (off - fx) dx and through the weights
    gx = -np.einsum("ns,nba,nsb->na", kw.w, A, gP_s)
    val = Q[:, None, :] + np.einsum("nab,nsb->nsa", A, kw.dpos)
    gW = gm_s * m[:, None] + np.sum(gP_s * val, axis=2)
    gx += np.einsum("ns,nsc->nc", gW, kw.dw)
    return gx, gv, gC, gF


# ---------------------------------------------------------------- contact

def coulomb_project(v_rel, normal, friction_mu):
    """Coulomb friction projection of relative velocities (batched (M, d))."""
    v_rel = np.atleast_2d(v_rel).astype(float)
    n = np.atleast_2d(normal).astype(float)
    vn = np.sum(v_rel * n, axis=1)
    approach = vn < 0
    if np.isinf(friction_mu):
        return np.zeros_like(v_rel)
    vt = v_rel - vn[:, None] * n
    tn = np.linalg.norm(vt, axis=1)
    shrink = friction_mu * np.abs(vn)
    stick = tn <= shrink
    scale = np.where(stick, 0.0, 1.0 - shrink / np.where(tn > 0, tn, 1.0))
    out = scale[:, None] * vt
    return np.where(approach[:, None], out, v_rel)


def coulomb_project_vjp(v_rel, normal, friction_mu, g):
    """Cotangents of (v_rel, normal)."""
    v = np.atleast_2d(v_rel)
    n = np.atleast_2d(normal)
    gv = np.zeros_like(v)
    gn = np.zeros_like(n)
    if np.isinf(friction_mu):
        return gv, gn
    vn = np.sum(v * n, axis=1)
    approach = vn < 0
    gv[~approach] = g[~approach]
    if not np.any(approach):
        return gv, gn
    v, n, g, vn = v[approach], n[approach], g[approach], vn[approach]
    vt = v - vn[:, None] * n
    tn = np.linalg.norm(vt, axis=1)
    stick = tn <= friction_mu * np.abs(vn)
    that = vt / np.where(tn > 0, tn, 1.0)[:, None]
    # out = vt + mu vn that  (slipping branch)
    g_vt = g + (friction_mu * vn / np.where(tn > 0, tn, 1.0))[:, None] * (g - that * np.sum(that * g, axis=1)[:, None])
    g_vn = friction_mu * np.sum(that * g, axis=1)
    g_vt[stick] = 0.0
    g_vn[stick] = 0.0
    gvt_n = np.sum(g_vt * n, axis=1)
    gva = g_vt - gvt_n[:, None] * n + g_vn[:, None] * n
    gna = -vn[:, None] * g_vt - v * gvt_n[:, None] + g_vn[:, None] * v
    gv[approach] = gva
    gn[approach] = gna
    return gv, gn


def contact_alpha(d, model="soft"):
    d = np.asarray(d, float)
    if model == "hard":
        return np.where(d <= 0, 1.0, 0.0)
    return np.minimum(np.exp(-d), 1.0)


def soft_contact_blend(v_original, v_c, d):
    """``alpha v_c + (1 - alpha) v_original`` with ``alpha = min(exp(-d), 1)``."""
    alpha = contact_alpha(d)
    alpha = np.asarray(alpha)[..., None] if np.ndim(v_c) > np.ndim(alpha) else alpha
    return alpha * np.asarray(v_c) + (1.0 - alpha) * np.asarray(v_original)


def effector_contact(v, X, eff, pos, rot, lin, ang, dx, threshold, model):
    """Blend node velocities ``v`` (M, d) at positions ``X`` with one effector."""
    y = X - pos
    q = y @ rot
    dist, n_loc, H = eff.local_sdf(q)
    d = dist / dx
    sel = (d <= 0) if model == "hard" else (d < threshold)
    out = v.copy()
    cache = {"sel": sel}
    if not np.any(sel):
        return out, cache
    ys, qs, ds, nl, Hs, vs = y[sel], q[sel], d[sel], n_loc[sel], H[sel], v[sel]
    n = nl @ rot.T
    ve = point_velocity(lin, ang, ys)
    vrel = vs - ve
    vrel_p = coulomb_project(vrel, n, eff.friction_mu)
    vc = vrel_p + ve
    alpha = contact_alpha(ds, model)
    out[sel] = alpha[:, None] * vc + (1.0 - alpha[:, None]) * vs
    cache.update(y=ys, q=qs, d=ds, n_loc=nl, H=Hs, v=vs, n=n, ve=ve, vrel=vrel, vc=vc, alpha=alpha)
    return out, cache


def effector_contact_vjp(eff, rot, ang, dx, model, cache, g_out):
    """Returns (g_v, g_pos, g_rot, g_lin, g_ang)."""
    d_ = rot.shape[0]
    g_v = g_out.copy()
    g_pos = np.zeros(d_)
    g_rot = np.zeros((d_, d_))
    g_lin = np.zeros(d_)
    g_ang = np.zeros_like(ang)
    sel = cache["sel"]
    if not np.any(sel):
        return g_v, g_pos, g_rot, g_lin, g_ang
    c = cache
    g = g_out[sel]
    alpha = c["alpha"][:, None]
    g_vc = alpha * g
    gv_sel = (1.0 - alpha) * g
    g_alpha = np.sum(g * (c["vc"] - c["v"]), axis=1)
    g_ve = g_vc.copy()
    g_vrel, g_n = coulomb_project_vjp(c["vrel"], c["n"], eff.friction_mu, g_vc)
    gv_sel += g_vrel
    g_ve -= g_vrel
    if model == "soft":
        g_d = np.where(c["d"] > 0, -c["alpha"] * g_alpha, 0.0)
    else:
        g_d = np.zeros_like(g_alpha)
    g_dist = g_d / dx
    # n = R n_loc(q)
    g_nl = g_n @ rot
    g_rot += g_n.T @ c["n_loc"]
    g_q = g_dist[:, None] * c["n_loc"] + np.einsum("mij,mj->mi", c["H"], g_nl)
    # q = R^T y
    g_y = g_q @ rot.T
    g_rot += c["y"].T @ g_q
    # ve = lin + ang x y
    y = c["y"]
    g_lin += g_ve.sum(axis=0)
    if d_ == 2:
        g_ang[0] += np.sum(-y[:, 1] * g_ve[:, 0] + y[:, 0] * g_ve[:, 1])
        g_y += ang[0] * np.stack([g_ve[:, 1], -g_ve[:, 0]], axis=1)
    else:
        g_ang += np.cross(y, g_ve).sum(axis=0)
        g_y -= np.cross(ang, g_ve)
    g_pos -= g_y.sum(axis=0)
    g_v[sel] = gv_sel
    return g_v, g_pos, g_rot, g_lin, g_ang


# ---------------------------------------------------------------- grid update

def grid_update(gmass, gmom, dt, gravity, grid, effectors, poses, velocities, threshold, model,
                mass_epsilon=1e-12):
    """Normalise momentum, add gravity, apply walls and effector contact."""
    massive = gmass > mass_epsilon
    v0 = np.zeros_like(gmom)
    v0[massive] = gmom[massive] / gmass[massive, None]
    v1 = v0.copy()
    v1[massive] += dt * gravity
    v2 = v1.copy()
    wall = []
    for a in range(grid.dim):
        m = (grid.low[a] & (v2[:, a] < 0)) | (grid.high[a] & (v2[:, a] > 0))
        v2[m, a] = 0.0
        wall.append(m)
    v = v2
    contacts = []
    X = grid.node_pos[massive]
    for e, eff in enumerate(effectors):
        if not eff.mpm_contact:
            contacts.append(None)
            continue
        pos, rot = poses[e]
        lin, ang = velocities[e]
        vm, cache = effector_contact(v[massive], X, eff, pos, rot, lin, ang, grid.dx, threshold, model)
        v = v.copy()
        v[massive] = vm
        contacts.append(cache)
    return v, {"massive": massive, "v0": v0, "wall": wall, "contacts": contacts}


def grid_update_vjp(gmass, gmom, grid, effectors, poses, velocities, model, cache, g_v):
    """Returns (g_mass, g_mom, per-effector (g_pos, g_rot, g_lin, g_ang))."""
    massive = cache["massive"]
    g = g_v.copy()
    eff_grads = [None] * len(effectors)
    for e in reversed(range(len(effectors))):
        c = cache["contacts"][e]
        if c is None:
            continue
        pos, rot = poses[e]
        lin, ang = velocities[e]
        gm, gp, gr, gl, ga = effector_contact_vjp(effectors[e], rot, ang, grid.dx, model, c, g[massive])
        g[massive] = gm
        eff_grads[e] = (gp, gr, gl, ga)
    for a in range(grid.dim):
        g[cache["wall"][a], a] = 0.0
    g[~massive] = 0.0
    g_mom = np.zeros_like(gmom)
    g_mass = np.zeros_like(gmass)
    g_mom[massive] = g[massive] / gmass[massive, None]
    g_mass[massive] = -np.sum(g[massive] * cache["v0"][massive], axis=1) / gmass[massive]
    return g_mass, g_mom, eff_grads


# ---------------------------------------------------------------- G2P

def _project(kind, Ft, theta_c, theta_s, sigma_y, mu):
    Fn = Ft.copy()
    for code, fn in ((KIND_CODE["Plastic"], lambda s: box_yield_project(Ft[s], theta_c[s], theta_s[s])),
                     (KIND_CODE["NonNewtonian"], lambda s: von_mises_project(Ft[s], sigma_y[s], mu[s])),
                     (KIND_CODE["Liquid"], lambda s: liquid_project(Ft[s]))):
        s = kind == code
        if np.any(s):
            Fn[s] = fn(s)
    return Fn


def _project_vjp(kind, Ft, theta_c, theta_s, sigma_y, mu, g):
    gt = g.copy()
    s = kind == KIND_CODE["Plastic"]
    if np.any(s):
        gt[s] = box_yield_project_vjp(Ft[s], theta_c[s], theta_s[s], g[s])
    s = kind == KIND_CODE["NonNewtonian"]
    if np.any(s):
        gt[s] = von_mises_project_vjp(Ft[s], sigma_y[s], mu[s], g[s])
    s = kind == KIND_CODE["Liquid"]
    if np.any(s):
        gt[s] = liquid_project_vjp(Ft[s], g[s])
    return gt


def g2p(vgrid, x, v, C, F, active, scene, grid, dt, v_max, kw=None):
    """Grid-to-particle gather, advection, F update and material projection."""
    kw = kernel_weights(x, grid) if kw is None else kw
    vs = vgrid[kw.idx]
    v_raw = np.einsum("ns,nsa->na", kw.w, vs)
    C_new = (4.0 / grid.dx**2) * np.einsum("ns,nsa,nsb->nab", kw.w, vs, kw.dpos)
    speed = np.linalg.norm(v_raw, axis=1)
    clamped = speed > v_max
    v_new = v_raw.copy()
    if np.any(clamped):
        v_new[clamped] *= (v_max / speed[clamped])[:, None]
    x_tmp = x + dt * v_new
    lo = grid.lo + grid.dx
    hi = grid.hi - grid.dx
    x_new = np.clip(x_tmp, lo, hi)
    viscous = scene.kind == KIND_CODE["ViscousLiquid"]
    F_base = F.copy()
    if np.any(viscous):
        F_base[viscous] = liquid_project(F[viscous])
    d = x.shape[1]
    Ft = (np.eye(d)[None] + dt * C_new) @ F_base
    F_new = _project(scene.kind, Ft, scene.theta_c, scene.theta_s, scene.sigma_y, scene.mu)
    a = active
    out = (np.where(a[:, None], x_new, x), np.where(a[:, None], v_new, v),
           np.where(a[:, None, None], F_new, F), np.where(a[:, None, None], C_new, C))
    cache = dict(kw=kw, vs=vs, v_raw=v_raw, speed=speed, clamped=clamped, x_tmp=x_tmp, lo=lo, hi=hi,
                 F_base=F_base, Ft=Ft, C_new=C_new, viscous=viscous)
    return out, cache


def g2p_vjp(x, F, active, scene, grid, dt, v_max, cache, gx, gv, gF, gC):
    """Returns (g_vgrid, gx_old, gv_old, gF_old, gC_old)."""
    c = cache
    kw = c["kw"]
    a = active
    ax = a[:, None]
    # inactive particles are identity maps
    gx_old = np.where(ax, 0.0, gx)
    gv_old = np.where(ax, 0.0, gv)
    gF_old = np.where(a[:, None, None], 0.0, gF)
    gC_old = np.where(a[:, None, None], 0.0, gC)
    gx = np.where(ax, gx, 0.0)
    gv = np.where(ax, gv, 0.0)
    gF = np.where(a[:, None, None], gF, 0.0)
    gC = np.where(a[:, None, None], gC, 0.0)

    inside = (c["x_tmp"] >= c["lo"]) & (c["x_tmp"] <= c["hi"])
    g_xtmp = gx * inside
    gx_old += g_xtmp
    g_vnew = gv + dt * g_xtmp
    gFt = _project_vjp(scene.kind, c["Ft"], scene.theta_c, scene.theta_s, scene.sigma_y, scene.mu, gF)
    d = x.shape[1]
    gCn = gC + dt * gFt @ np.swapaxes(c["F_base"], -1, -2)
    gFb = np.swapaxes(np.eye(d)[None] + dt * c["C_new"], -1, -2) @ gFt
    vis = c["viscous"]
    if np.any(vis):
        gFb[vis] = liquid_project_vjp(F[vis], gFb[vis])
    gF_old += gFb
    g_vraw = g_vnew.copy()
    cl = c["clamped"]
    if np.any(cl):
        vh = c["v_raw"][cl] / c["speed"][cl, None]
        gg = g_vnew[cl]
        g_vraw[cl] = (v_max / c["speed"][cl])[:, None] * (gg - vh * np.sum(vh * gg, axis=1)[:, None])
    k = 4.0 / grid.dx**2
    gvs = kw.w[..., None] * (g_vraw[:, None, :] + k * np.einsum("nab,nsb->nsa", gCn, kw.dpos))
    g_vgrid = np.stack([_scatter(kw.idx, gvs[..., j], grid.size) for j in range(d)], axis=1)
    vs = c["vs"]
    gW = np.sum(vs * g_vraw[:, None, :], axis=2) + k * np.einsum("nab,nsa,nsb->ns", gCn, vs, kw.dpos)
    gx_old += np.einsum("ns,nsc->nc", gW, kw.dw)
    gx_old -= k * np.einsum("ns,nab,nsa->nb", kw.w, gCn, vs)
    return g_vgrid, gx_old, gv_old, gF_old, gC_old


# ---------------------------------------------------------------- rigid bodies

def rigid_body_pass(x, v, F, x_prev, scene, dt):
    """Project each rigid body onto the best-fitting rigid motion of its rest shape."""
    x, v, F = x.copy(), v.copy(), F.copy()
    fits = {}
    for b, idx in scene.rigid_bodies.items():
        m = scene.mass[idx]
        rest = scene.rest[idx]
        R, c = rigid_shape_match(x[idx], rest, m, body_id=b)
        r = rest - m @ rest / m.sum()
        xr = r @ R.T + c
        v[idx] = (xr - x_prev[idx]) / dt
        x[idx] = xr
        F[idx] = R
        fits[b] = (R, c, r)
    return x, v, F, fits


def rigid_body_pass_vjp(x_g2p, scene, dt, gx, gv, gF):
    """Returns (gx_g2p, gv_g2p, gF_g2p, gx_prev)."""
    gx_in, gv_in, gF_in = gx.copy(), gv.copy(), gF.copy()
    gx_prev = np.zeros_like(gx)
    for b, idx in scene.rigid_bodies.items():
        m = scene.mass[idx]
        rest = scene.rest[idx]
        r = rest - m @ rest / m.sum()
        g_xr = gx[idx] + gv[idx] / dt
        gx_prev[idx] = -gv[idx] / dt
        gR = g_xr.T @ r + gF[idx].sum(axis=0)
        gc = g_xr.sum(axis=0)
        gx_in[idx] = rigid_shape_match_vjp(x_g2p[idx], rest, m, gR, gc)
        gv_in[idx] = 0.0
        gF_in[idx] = 0.0
    return gx_in, gv_in, gF_in, gx_prev
