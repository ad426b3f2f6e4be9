"""Batched SVD with a rotation-friendly sign convention and its derivatives.

All routines operate on stacks of square matrices with shape ``(..., d, d)``.
"""
import numpy as np

GAP_TOL = 1e-8


def signed_svd(A):
    """SVD ``A = U diag(s) V^T`` with ``det U = det V = +1``.

    When ``det A < 0`` the smallest singular value carries the sign, which is
    the convention needed for rotation extraction.
    """
    A = np.asarray(A, dtype=np.float64)
    U, s, Vt = np.linalg.svd(A)
    V = np.swapaxes(Vt, -1, -2).copy()
    U = U.copy()
    s = s.copy()
    du = np.linalg.det(U) < 0
    dv = np.linalg.det(V) < 0
    if np.any(du):
        U[du, ..., -1] *= -1.0
        s[du, ..., -1] *= -1.0
    if np.any(dv):
        V[dv, ..., -1] *= -1.0
        s[dv, ..., -1] *= -1.0
    return U, s, V


def _safe(den, gap):
    small = np.abs(den) < gap
    return np.where(small, np.where(den < 0, -gap, gap), den)


def svd_vjp(U, s, V, gU=None, gs=None, gV=None, gap=GAP_TOL):
    """Cotangent of ``A`` given cotangents of its SVD factors.

    Uses the K-matrix ``1/(s_j^2 - s_i^2)``; near-degenerate pairs get a
    denominator clamped to ``gap`` in magnitude so the output stays finite
    (biased, but never NaN).
    """
    d = s.shape[-1]
    Ut = np.swapaxes(U, -1, -2)
    Vt = np.swapaxes(V, -1, -2)
    out = np.zeros(U.shape)
    if gs is not None:
        out = out + np.einsum("...i,...ij->...ij", gs, np.broadcast_to(np.eye(d), U.shape))
    den = s[..., None, :] ** 2 - s[..., :, None] ** 2
    K = 1.0 / _safe(den, gap)
    K[..., np.arange(d), np.arange(d)] = 0.0
    if gU is not None:
        J = Ut @ gU
        out = out + (K * (J - np.swapaxes(J, -1, -2))) * s[..., None, :]
    if gV is not None:
        Kv = Vt @ gV
        out = out + s[..., :, None] * (K * (Kv - np.swapaxes(Kv, -1, -2)))
    return U @ out @ Vt


def svd_jvp(U, s, V, dA, gap=GAP_TOL):
    """Forward differential ``(dU, ds, dV)`` for ``dA``."""
    d = s.shape[-1]
    M = np.swapaxes(U, -1, -2) @ dA @ V
    ds = np.diagonal(M, axis1=-2, axis2=-1).copy()
    den = s[..., None, :] ** 2 - s[..., :, None] ** 2
    K = 1.0 / _safe(den, gap)
    K[..., np.arange(d), np.arange(d)] = 0.0
    Mt = np.swapaxes(M, -1, -2)
    omega_u = K * (M * s[..., None, :] + s[..., :, None] * Mt)
    omega_v = K * (s[..., :, None] * M + Mt * s[..., None, :])
    return U @ omega_u, ds, V @ omega_v


def spectral_vjp(U, s, V, f, Jf, g_out, gap=GAP_TOL):
    """VJP of ``X -> U diag(f(s)) V^T`` for an isotropic singular-value map.

    ``f`` holds the mapped singular values and ``Jf[..., i, k] = df_i/ds_k``.
    Off-diagonal terms combine a divided difference with a sum quotient, so
    repeated singular values (e.g. ``X = I``) are handled without blow-up.
    """
    d = s.shape[-1]
    Ut = np.swapaxes(U, -1, -2)
    gD = Ut @ g_out @ V
    gdiag = np.diagonal(gD, axis1=-2, axis2=-1)
    gM = np.zeros(gD.shape)
    idx = np.arange(d)
    gM[..., idx, idx] = np.einsum("...ik,...i->...k", Jf, gdiag)
    for i in range(d):
        for j in range(i + 1, d):
            si, sj = s[..., i], s[..., j]
            fi, fj = f[..., i], f[..., j]
            ds_ = si - sj
            close = np.abs(ds_) < gap
            dd_fallback = 0.5 * (Jf[..., i, i] - Jf[..., i, j] + Jf[..., j, j] - Jf[..., j, i])
            dd = np.where(close, dd_fallback, (fi - fj) / np.where(close, 1.0, ds_))
            ss = (fi + fj) / _safe(si + sj, gap)
            A = 0.5 * (dd + ss)
            B = 0.5 * (dd - ss)
            gij, gji = gD[..., i, j], gD[..., j, i]
            gM[..., i, j] = A * gij + B * gji
            gM[..., j, i] = A * gji + B * gij
    return U @ gM @ np.swapaxes(V, -1, -2)


def polar_rotation(A):
    """Rotation factor of ``A`` (det +1), together with its signed SVD."""
    U, s, V = signed_svd(A)
    return U @ np.swapaxes(V, -1, -2), (U, s, V)


def polar_rotation_vjp(svd, gR, gap=GAP_TOL):
    U, s, V = svd
    ones = np.ones(s.shape)
    Jf = np.zeros(s.shape + (s.shape[-1],))
    return spectral_vjp(U, s, V, ones, Jf, gR, gap=gap)
