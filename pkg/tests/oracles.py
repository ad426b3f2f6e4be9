"""Independent reference computations used by the tests.

These are deliberately written differently from the package code: loops,
brute force sampling and closed forms rather than vectorised kernels.
"""
import itertools
import math

import numpy as np


def bspline_1d(r):
    """Quadratic B-spline N(r) for a signed offset r in cell units."""
    r = abs(r)
    if r < 0.5:
        return 0.75 - r * r
    if r < 1.5:
        return 0.5 * (1.5 - r) ** 2
    return 0.0


def stencil_weights(x, lo, dx, shape):
    """Dict node-index -> weight by evaluating N on every node of the grid."""
    out = {}
    for idx in itertools.product(*[range(s) for s in shape]):
        w = 1.0
        for a, i in enumerate(idx):
            w *= bspline_1d((x[a] - lo[a]) / dx - i)
            if w == 0.0:
                break
        if w:
            out[idx] = w
    return out


def box_distance_bruteforce(p, half, samples=41):
    """Distance from an outside point to an axis-aligned box: minimum over a
    dense lattice of surface samples (corners and edges included)."""
    p = np.asarray(p, float)
    half = np.asarray(half, float)
    g = np.linspace(-1, 1, samples)
    best = np.inf
    for face in range(len(half)):
        for sign in (-1, 1):
            for coords in itertools.product(g, repeat=len(half) - 1):
                s = list(coords)
                s.insert(face, sign)
                best = min(best, np.linalg.norm(p - np.asarray(s) * half))
    return best


def coulomb_closed_form(v, n, mu):
    v = np.asarray(v, float)
    n = np.asarray(n, float)
    if math.isinf(mu):
        # sticky contact moves with the effector whatever the direction
        return np.zeros_like(v)
    vn = v @ n
    if vn >= 0:
        return v
    vt = v - vn * n
    t = np.linalg.norm(vt)
    if t <= -mu * vn:
        return np.zeros_like(v)
    return vt * (1 + mu * vn / t)


def chamfer_bruteforce(A, B):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    ab = np.mean([min(np.linalg.norm(a - b) for b in B) for a in A])
    ba = np.mean([min(np.linalg.norm(a - b) for a in A) for b in B])
    return ab + ba


def corotated_energy_loop(F, mu, lam):
    """Energy from the polar decomposition computed via the matrix square root."""
    F = np.asarray(F, float)
    C = F.T @ F
    w, Q = np.linalg.eigh(C)
    S = Q @ np.diag(np.sqrt(w)) @ Q.T
    R = F @ np.linalg.inv(S)
    J = np.linalg.det(F)
    return mu * np.sum((F - R) ** 2) + 0.5 * lam * (J - 1) ** 2


def central_diff(f, x, eps=1e-6):
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def random_F(rng, d, spread=0.3):
    """A well-conditioned deformation gradient with positive determinant."""
    while True:
        F = np.eye(d) + spread * rng.standard_normal((d, d))
        if np.linalg.det(F) > 0.2:
            return F
