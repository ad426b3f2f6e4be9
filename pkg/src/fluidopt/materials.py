"""Constitutive models, plastic return mappings and rigid shape matching.

Everything here is a pure function of batched matrices ``(N, d, d)``; each
forward map has a ``*_vjp`` companion used by the adjoint solver.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDeformationError, RigidityError, SceneError
from .svd import GAP_TOL, polar_rotation, polar_rotation_vjp, signed_svd, spectral_vjp

KINDS = ("Elastic", "Plastic", "Liquid", "ViscousLiquid", "NonNewtonian", "Rigid")
KIND_CODE = {k: i for i, k in enumerate(KINDS)}

DEFAULT_THETA_C = 0.025
DEFAULT_THETA_S = 0.025
DEFAULT_SIGMA_Y = 50.0


@dataclass
class MaterialParams:
    kind: str
    mu: float
    lam: float
    rho: float
    theta_c: float = DEFAULT_THETA_C
    theta_s: float = DEFAULT_THETA_S
    sigma_y: float = DEFAULT_SIGMA_Y

    def __post_init__(self):
        if self.kind not in KIND_CODE:
            raise SceneError(f"unknown material kind {self.kind!r}")
        if self.mu < 0 or self.lam < 0 or not self.rho > 0:
            raise SceneError("material needs mu >= 0, lambda >= 0, rho > 0")
        if self.kind == "Liquid" and self.mu != 0:
            raise SceneError("Liquid must have mu = 0 (use ViscousLiquid)")
        if not (0 < self.theta_c < 1 and self.theta_s > 0 and self.sigma_y > 0):
            raise SceneError("invalid yield parameters")
        if self.kind == "NonNewtonian" and not self.mu > 0:
            raise SceneError("NonNewtonian material needs mu > 0")

    @property
    def code(self):
        return KIND_CODE[self.kind]


# Values from the material table used by the manipulation tasks.
TABLE = {
    "water": MaterialParams("Liquid", 0.0, 277.78, 1.0),
    "milk": MaterialParams("Liquid", 0.0, 277.78, 1.0),
    "frothed_milk": MaterialParams("ViscousLiquid", 208.33, 277.78, 1.0),
    "coffee": MaterialParams("Liquid", 0.0, 277.78, 1.0),
    "ice_cream": MaterialParams("NonNewtonian", 416.67, 277.78, 0.5),
    "floating_object": MaterialParams("Elastic", 416.67, 277.78, 0.5),
    "sugar_cube": MaterialParams("ViscousLiquid", 208.33, 277.78, 1.0),
    "light_liquid": MaterialParams("Liquid", 0.0, 277.78, 0.8),
    "heavy_liquid": MaterialParams("Liquid", 0.0, 277.78, 1.5),
    "transport_object": MaterialParams("Rigid", 416.67, 277.78, 5.0),
}


def _check_det(F, ids=None):
    J = np.linalg.det(F)
    bad = ~(J > 0)
    if np.any(bad):
        where = np.nonzero(np.atleast_1d(bad))[0]
        if ids is not None:
            where = np.asarray(ids)[where]
        raise DegenerateDeformationError(where)
    return J


def _as_batch(F):
    F = np.asarray(F, dtype=np.float64)
    single = F.ndim == 2
    return (F[None] if single else F), single


# ---------------------------------------------------------------- corotated

def corotated_energy(F, mu, lam):
    F, single = _as_batch(F)
    _, s, _ = signed_svd(F)
    J = np.prod(s, axis=-1)
    psi = mu * np.sum((s - 1.0) ** 2, axis=-1) + 0.5 * lam * (J - 1.0) ** 2
    return psi[0] if single else psi


def _corotated_spectrum(s, mu, lam):
    """dPsi/ds and its Jacobian for the fixed-corotated energy."""
    mu = np.asarray(mu, float)[..., None]
    lam = np.asarray(lam, float)[..., None]
    d = s.shape[-1]
    J = np.prod(s, axis=-1, keepdims=True)
    # J/s_i computed as a product of the others to stay exact at s_i -> 0
    cof = np.stack([np.prod(np.delete(s, i, axis=-1), axis=-1) for i in range(d)], axis=-1)
    f = 2 * mu * (s - 1.0) + lam * (J - 1.0) * cof
    Jf = lam[..., None] * cof[..., :, None] * cof[..., None, :]
    # d cof_i / d s_k = J/(s_i s_k) for i != k
    dcof = np.zeros(s.shape + (d,))
    for i in range(d):
        for k in range(d):
            if i != k:
                dcof[..., i, k] = np.prod(np.delete(s, [i, k], axis=-1), axis=-1)
    Jf = Jf + (lam * (J - 1.0))[..., None] * dcof
    Jf = Jf + 2 * mu[..., None] * np.eye(d)
    return f, Jf


def corotated_stress(F, mu, lam, ids=None):
    """First Piola-Kirchhoff stress ``2 mu (F - R) + lam (J - 1) J F^-T``."""
    F, single = _as_batch(F)
    _check_det(F, ids)
    U, s, V = signed_svd(F)
    f, _ = _corotated_spectrum(s, mu, lam)
    P = U @ (f[..., :, None] * np.swapaxes(V, -1, -2))
    return P[0] if single else P


def corotated_stress_vjp(F, mu, lam, gP):
    """Cotangent of F given the cotangent of P (Hessian-vector product)."""
    U, s, V = signed_svd(F)
    f, Jf = _corotated_spectrum(s, mu, lam)
    return spectral_vjp(U, s, V, f, Jf, gP)


def kirchhoff_stress(F, mu, lam, kinds=None):
    """``P F^T`` with the cheap isotropic form where ``mu == 0``."""
    mu = np.asarray(mu, float)
    lam = np.asarray(lam, float)
    n, d, _ = F.shape
    J = np.linalg.det(F)
    tau = (lam * (J - 1.0) * J)[:, None, None] * np.eye(d)[None]
    solid = mu > 0
    if np.any(solid):
        Fs = F[solid]
        R, _ = polar_rotation(Fs)
        tau[solid] += 2 * mu[solid, None, None] * (Fs - R) @ np.swapaxes(Fs, -1, -2)
    return tau


def kirchhoff_stress_vjp(F, mu, lam, gtau):
    mu = np.asarray(mu, float)
    lam = np.asarray(lam, float)
    n, d, _ = F.shape
    J = np.linalg.det(F)
    Finv_T = np.swapaxes(np.linalg.inv(F), -1, -2)
    gF = np.zeros_like(F)
    # volumetric part: lam (J-1) J I  -> d/dJ = lam (2J - 1); dJ/dF = J F^-T
    tr = np.trace(gtau, axis1=-2, axis2=-1)
    gF += (tr * lam * (2 * J - 1.0) * J)[:, None, None] * Finv_T
    solid = mu > 0
    if np.any(solid):
        Fs = F[solid]
        g = gtau[solid]
        m = mu[solid, None, None]
        R, svd = polar_rotation(Fs)
        # tau_dev = 2 mu (F - R) F^T
        gFdev = 2 * m * (g @ Fs + np.swapaxes(g, -1, -2) @ (Fs - R))
        gR = -2 * m * g @ Fs
        gFdev += polar_rotation_vjp(svd, gR)
        gF[solid] += gFdev
    return gF


# ---------------------------------------------------------------- plasticity

def box_yield_project(F, theta_c, theta_s):
    """Clamp singular values of F into ``[1 - theta_c, 1 + theta_s]``."""
    F, single = _as_batch(F)
    _check_det(F)
    U, s, V = signed_svd(F)
    lo = (1.0 - np.asarray(theta_c, float))[..., None]
    hi = (1.0 + np.asarray(theta_s, float))[..., None]
    sp = np.clip(s, lo, hi)
    out = U @ (sp[..., :, None] * np.swapaxes(V, -1, -2))
    return out[0] if single else out


def box_yield_project_vjp(F, theta_c, theta_s, g):
    U, s, V = signed_svd(F)
    lo = (1.0 - np.asarray(theta_c, float))[..., None]
    hi = (1.0 + np.asarray(theta_s, float))[..., None]
    sp = np.clip(s, lo, hi)
    inside = ((s > lo) & (s < hi)).astype(float)
    Jf = inside[..., :, None] * np.eye(s.shape[-1])
    return spectral_vjp(U, s, V, sp, Jf, g)


def _von_mises_spectrum(s, sigma_y, mu):
    d = s.shape[-1]
    eps = np.log(s)
    mean = eps.mean(axis=-1, keepdims=True)
    dev = eps - mean
    norm = np.linalg.norm(dev, axis=-1, keepdims=True)
    radius = (np.asarray(sigma_y, float) / (2 * np.asarray(mu, float)))[..., None]
    yielding = (norm > radius)[..., 0]
    safe = np.where(norm > 0, norm, 1.0)
    eps_new = np.where(yielding[..., None], mean + radius * dev / safe, eps)
    sp = np.exp(eps_new)
    # Jacobian d eps'/d eps
    eye = np.broadcast_to(np.eye(d), s.shape + (d,))
    center = np.full((d, d), 1.0 / d)
    ehat = dev / safe
    proj = (eye - ehat[..., :, None] * ehat[..., None, :]) @ (np.eye(d) - center)
    Je = np.where(yielding[..., None, None], center + (radius / safe)[..., None] * proj, eye)
    Jf = sp[..., :, None] * Je / s[..., None, :]
    return sp, Jf, yielding


def von_mises_project(F, sigma_y, mu):
    """Radial return of the deviatoric Hencky strain onto ``2 mu |dev| = sigma_y``."""
    F, single = _as_batch(F)
    U, s, V = signed_svd(F)
    if np.any(~(s > 0)):
        raise DegenerateDeformationError(np.nonzero(~np.all(s > 0, axis=-1))[0])
    sp, _, _ = _von_mises_spectrum(s, sigma_y, mu)
    out = U @ (sp[..., :, None] * np.swapaxes(V, -1, -2))
    return out[0] if single else out


def von_mises_project_vjp(F, sigma_y, mu, g):
    U, s, V = signed_svd(F)
    sp, Jf, _ = _von_mises_spectrum(s, sigma_y, mu)
    return spectral_vjp(U, s, V, sp, Jf, g)


def liquid_project(F):
    """Reset F to the isotropic ``J^(1/d) I`` keeping the volume ratio."""
    F, single = _as_batch(F)
    d = F.shape[-1]
    J = _check_det(F)
    out = (J ** (1.0 / d))[:, None, None] * np.eye(d)[None]
    return out[0] if single else out


def liquid_project_vjp(F, g):
    d = F.shape[-1]
    J = np.linalg.det(F)
    tr = np.trace(g, axis1=-2, axis2=-1)
    Finv_T = np.swapaxes(np.linalg.inv(F), -1, -2)
    return (tr * J ** (1.0 / d) / d)[:, None, None] * Finv_T


# ---------------------------------------------------------------- rigid

def rigid_shape_match(current, rest, masses, body_id=None):
    """Mass-weighted Kabsch fit.

    Returns ``(R, t)`` such that ``R (rest_i - c0) + t`` best matches
    ``current_i``; here ``t`` is the current centre of mass.  Reflections are
    excluded by flipping the smallest singular direction.
    """
    x = np.asarray(current, float)
    r = np.asarray(rest, float)
    m = np.asarray(masses, float)
    n, d = x.shape
    if n < d:
        raise RigidityError(body_id, "too few particles for a rigid fit")
    M = m.sum()
    c = m @ x / M
    c0 = m @ r / M
    H = np.einsum("n,ni,nj->ij", m, x - c, r - c0)
    R, (U, s, V) = polar_rotation(H)
    srt = np.sort(np.abs(s))[::-1]
    if srt[0] <= 0 or (d >= 2 and srt[d - 2] <= GAP_TOL * max(srt[0], 1.0)):
        raise RigidityError(body_id)
    return R, c


def rigid_shape_match_vjp(current, rest, masses, gR, gt):
    """Cotangent of ``current`` from cotangents of the fitted ``(R, t)``."""
    x = np.asarray(current, float)
    r = np.asarray(rest, float)
    m = np.asarray(masses, float)
    M = m.sum()
    c = m @ x / M
    c0 = m @ r / M
    H = np.einsum("n,ni,nj->ij", m, x - c, r - c0)
    _, svd = polar_rotation(H)
    gH = polar_rotation_vjp(svd, gR)
    # H = sum m x (r - c0)^T since sum m (r - c0) = 0
    gx = m[:, None] * ((r - c0) @ gH.T)
    gx += m[:, None] / M * gt[None, :]
    return gx
