"""Analytic signed distance primitives.

Every shape evaluates, for a batch of points in its local frame, the signed
distance, its gradient (the outward normal) and its Hessian.  The Hessian is
what the contact adjoint needs to differentiate through the normal.
"""
from dataclasses import dataclass

import numpy as np

from .errors import SceneError

FALLBACK_AXIS = 0
_TINY = 1e-14


def _fallback_normal(m, d):
    n = np.zeros((m, d))
    n[:, FALLBACK_AXIS] = 1.0
    return n


def _box_core(q, h):
    """Box SDF in local coordinates; returns (dist, grad, hess)."""
    m, d = q.shape
    sgn = np.where(q < 0, -1.0, 1.0)
    r = np.abs(q) - h
    outside = np.maximum(r, 0.0)
    no = np.linalg.norm(outside, axis=1)
    rmax = r.max(axis=1)
    dist = no + np.minimum(rmax, 0.0)

    grad = np.zeros((m, d))
    hess = np.zeros((m, d, d))
    out = no > 0
    if np.any(out):
        u = outside[out] / no[out, None]
        active = (r[out] > 0).astype(float)
        s = sgn[out]
        grad[out] = s * u
        eye = np.eye(d)[None] * active[:, None, :]
        hess[out] = s[:, :, None] * s[:, None, :] * (eye - u[:, :, None] * u[:, None, :]) / no[out, None, None]
    ins = ~out
    if np.any(ins):
        k = np.argmax(r[ins], axis=1)
        g = np.zeros((ins.sum(), d))
        g[np.arange(len(k)), k] = sgn[ins][np.arange(len(k)), k]
        grad[ins] = g
    return dist, grad, hess


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise SceneError("sphere radius must be positive")

    def local(self, q):
        m, d = q.shape
        rho = np.linalg.norm(q, axis=1)
        dist = rho - self.radius
        ok = rho > _TINY
        grad = _fallback_normal(m, d)
        hess = np.zeros((m, d, d))
        n = q[ok] / rho[ok, None]
        grad[ok] = n
        hess[ok] = (np.eye(d)[None] - n[:, :, None] * n[:, None, :]) / rho[ok, None, None]
        return dist, grad, hess


@dataclass(frozen=True)
class Box:
    half_extents: tuple

    def __post_init__(self):
        if not all(h > 0 for h in self.half_extents):
            raise SceneError("box half extents must be positive")

    def local(self, q):
        return _box_core(q, np.asarray(self.half_extents, dtype=float))


@dataclass(frozen=True)
class Capsule:
    a: tuple
    b: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise SceneError("capsule radius must be positive")
        if np.allclose(self.a, self.b):
            raise SceneError("capsule endpoints coincide")

    def local(self, q):
        m, d = q.shape
        a = np.asarray(self.a, float)
        ab = np.asarray(self.b, float) - a
        L2 = ab @ ab
        t_raw = (q - a) @ ab / L2
        t = np.clip(t_raw, 0.0, 1.0)
        y = q - (a + t[:, None] * ab)
        rho = np.linalg.norm(y, axis=1)
        dist = rho - self.radius
        grad = _fallback_normal(m, d)
        hess = np.zeros((m, d, d))
        ok = rho > _TINY
        n = y[ok] / rho[ok, None]
        grad[ok] = n
        u = ab / np.sqrt(L2)
        interior = ((t_raw > 0) & (t_raw < 1))[ok].astype(float)
        proj = np.eye(d)[None] - interior[:, None, None] * np.outer(u, u)[None]
        hess[ok] = (np.eye(d)[None] - n[:, :, None] * n[:, None, :]) @ proj / rho[ok, None, None]
        return dist, grad, hess


@dataclass(frozen=True)
class Cylinder:
    """Cylinder aligned with the local y axis; in 2D it degenerates to a box."""

    half_height: float
    radius: float

    def __post_init__(self):
        if not (self.half_height > 0 and self.radius > 0):
            raise SceneError("cylinder dimensions must be positive")

    def local(self, q):
        m, d = q.shape
        if d == 2:
            return _box_core(q, np.array([self.radius, self.half_height]))
        qr = q[:, [0, 2]]
        rho = np.linalg.norm(qr, axis=1)
        ok = rho > _TINY
        rhat = np.zeros((m, 2))
        rhat[:, 0] = 1.0
        rhat[ok] = qr[ok] / rho[ok, None]
        sy = np.where(q[:, 1] < 0, -1.0, 1.0)
        # box core on (rho, |y|), both already non-negative
        w = np.stack([rho, np.abs(q[:, 1])], axis=1)
        dist, g2, h2 = _box_core(w, np.array([self.radius, self.half_height]))
        # Jacobian of w wrt q
        Jw = np.zeros((m, 2, 3))
        Jw[:, 0, 0] = rhat[:, 0]
        Jw[:, 0, 2] = rhat[:, 1]
        Jw[:, 1, 1] = sy
        grad = np.einsum("mi,mij->mj", g2, Jw)
        hess = np.einsum("mki,mkl,mlj->mij", Jw, h2, Jw)
        # curvature of rho in the xz plane
        Hr = np.zeros((m, 3, 3))
        P = np.eye(2)[None] - rhat[:, :, None] * rhat[:, None, :]
        inv = np.where(ok, 1.0 / np.maximum(rho, _TINY), 0.0)
        Hr[:, 0, 0] = P[:, 0, 0] * inv
        Hr[:, 0, 2] = P[:, 0, 1] * inv
        Hr[:, 2, 0] = P[:, 1, 0] * inv
        Hr[:, 2, 2] = P[:, 1, 1] * inv
        hess += g2[:, 0, None, None] * Hr
        return dist, grad, hess


@dataclass(frozen=True)
class HalfSpace:
    """Solid region ``n . q <= offset``."""

    normal: tuple
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        if not np.linalg.norm(n) > 0:
            raise SceneError("half-space normal must be non-zero")

    def local(self, q):
        m, d = q.shape
        n = np.asarray(self.normal, float)
        n = n / np.linalg.norm(n)
        return q @ n - self.offset, np.broadcast_to(n, (m, d)).copy(), np.zeros((m, d, d))


SHAPES = {"sphere": Sphere, "box": Box, "capsule": Capsule, "cylinder": Cylinder, "halfspace": HalfSpace}


def rotation_from(spec, dim):
    """Rotation matrix from a 2D angle or a 3D rotation vector (or a matrix)."""
    if spec is None:
        return np.eye(dim)
    a = np.asarray(spec, dtype=float)
    if a.shape == (dim, dim):
        return a.copy()
    if dim == 2:
        return rot2(float(a.reshape(-1)[0]))
    return expm_so3(a.reshape(3))


def rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def expm_so3(w):
    th = np.linalg.norm(w)
    K = skew(w)
    if th < 1e-12:
        return np.eye(3) + K
    return np.eye(3) + np.sin(th) / th * K + (1 - np.cos(th)) / th**2 * K @ K


@dataclass
class SdfPrimitive:
    """A shape placed by a rigid pose (translation + rotation)."""

    shape: object
    translation: np.ndarray = None
    rotation: np.ndarray = None

    def __post_init__(self):
        if self.translation is None:
            raise SceneError("primitive needs a translation")
        self.translation = np.asarray(self.translation, dtype=float)
        d = self.translation.shape[0]
        self.rotation = rotation_from(self.rotation, d)
        R = self.rotation
        if not (np.allclose(R.T @ R, np.eye(d), atol=1e-9) and np.linalg.det(R) > 0):
            raise SceneError("primitive rotation must be a proper rotation")

    @property
    def dim(self):
        return self.translation.shape[0]

    def evaluate(self, points, hessian=False):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        R = self.rotation
        q = (pts - self.translation) @ R
        dist, g, H = self.shape.local(q)
        n = g @ R.T
        if hessian:
            return dist, n, np.einsum("ij,mjk,lk->mil", R, H, R)
        return dist, n


def sdf_eval(prim, point):
    """Signed distance and unit normal of ``prim`` at a single ``point``.

    The gradient singularity (e.g. a sphere's centre) falls back to the +x axis.
    """
    dist, n = prim.evaluate(np.asarray(point, float)[None])
    return float(dist[0]), n[0]


def make_shape(spec, dim):
    """Build a shape from a config mapping such as ``{type: box, half_extents: [..]}``."""
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind not in SHAPES:
        raise SceneError(f"unknown shape type {kind!r}")
    for k in ("center", "position", "offset", "rotation", "angle", "ppc", "particles_per_cell"):
        spec.pop(k, None)
    if kind == "box":
        spec["half_extents"] = tuple(float(x) for x in spec["half_extents"])
        if len(spec["half_extents"]) != dim:
            raise SceneError("box half_extents dimension mismatch")
    if kind == "capsule":
        spec["a"] = tuple(map(float, spec["a"]))
        spec["b"] = tuple(map(float, spec["b"]))
    if kind == "halfspace":
        spec["normal"] = tuple(map(float, spec["normal"]))
    return SHAPES[kind](**spec)
