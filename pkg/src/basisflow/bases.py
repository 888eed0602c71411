"""The eight orthonormal homography-flow bases.

Fields live in normalised coordinates ``u = x / ((W-1)/2)``, ``v = y / ((H-1)/2)``
so that the grid spans ``[-1, 1]^2``; flow values are in the same units.
A flattened field is ``[all du (row-major); all dv (row-major)]``.

The pre-QR columns are the derivatives of the homography flow with respect to
the matrix entries (1,1), (1,2), (1,3), (2,1), (2,2), (2,3), (3,1), (3,2) at the
identity, each divided by its largest per-pixel magnitude.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, RankDeficient
from .geometry import Homography, homography_to_flow, pixel_grid

NUM_BASES = 8
CONVENTION = "centered-halfextent"
# row-major matrix entries perturbed by each basis, 0-based
ENTRIES = ((0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1))


def half_extents(width, height):
    return (width - 1) / 2.0, (height - 1) / 2.0


def _tangents_uv(u, v):
    one = np.ones_like(u)
    zero = np.zeros_like(u)
    du = np.stack([u, v, one, zero, zero, zero, -u * u, -u * v])
    dv = np.stack([zero, zero, zero, u, v, one, -u * v, -v * v])
    return du, dv


def normalized_grid(width, height):
    x, y = pixel_grid(width, height)
    sx, sy = half_extents(width, height)
    return x / sx, y / sy


def tangent_fields(width, height):
    """The 8 tangent fields as an array of shape ``(8, H, W, 2)``."""
    if width < 2 or height < 2:
        raise ValueError("width and height must be >= 2")
    du, dv = _tangents_uv(*normalized_grid(width, height))
    return np.stack([du, dv], axis=-1)


def finite_difference_fields(width, height, eps):
    """Flows of the identity with one entry perturbed by ``eps``, divided by ``eps``.

    The perturbed matrix acts on normalised coordinates; it is conjugated into
    pixel coordinates and converted with :func:`geometry.homography_to_flow`.
    """
    if not (0.0 < eps <= 0.1):
        raise ValueError("eps must lie in (0, 0.1]")
    if width < 2 or height < 2:
        raise ValueError("width and height must be >= 2")
    sx, sy = half_extents(width, height)
    scale = np.diag([sx, sy, 1.0])
    unscale = np.diag([1.0 / sx, 1.0 / sy, 1.0])
    out = np.empty((NUM_BASES, height, width, 2))
    for k, (r, c) in enumerate(ENTRIES):
        m = np.eye(3)
        m[r, c] += eps
        flow = homography_to_flow(Homography(scale @ m @ unscale), width, height)
        out[k, ..., 0] = flow[..., 0] / sx / eps
        out[k, ..., 1] = flow[..., 1] / sy / eps
    return out


def householder_qr(a):
    """Thin QR of a tall matrix by Householder reflections, with ``diag(R) > 0``."""
    a = np.array(a, dtype=np.float64, copy=True)
    m, n = a.shape
    if m < n:
        raise ValueError("matrix must be tall")
    vs = []
    for k in range(n):
        x = a[k:, k]
        normx = np.linalg.norm(x)
        alpha = -normx if x[0] >= 0 else normx
        v = x.copy()
        v[0] -= alpha
        nv = np.linalg.norm(v)
        if nv > 0:
            v /= nv
            a[k:, k:] -= 2.0 * np.outer(v, v @ a[k:, k:])
        vs.append(v)
    r = np.triu(a[:n, :n])
    q = np.zeros((m, n))
    q[:n, :n] = np.eye(n)
    for k in range(n - 1, -1, -1):
        v = vs[k]
        q[k:, :] -= 2.0 * np.outer(v, v @ q[k:, :])
    sign = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * sign, r * sign[:, None]


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Orthonormal flow bases for one grid size.

    ``q`` is ``(2HW, 8)`` with orthonormal columns, ``r`` the upper-triangular
    factor with ``m = q @ r``, ``norms`` the per-field max magnitudes used to
    scale the tangent fields before the factorisation.
    """

    width: int
    height: int
    q: np.ndarray
    r: np.ndarray
    norms: np.ndarray
    convention: str = CONVENTION

    @property
    def scale(self):
        """Pixels per normalised unit along x and y."""
        return half_extents(self.width, self.height)

    @property
    def num_pixels(self):
        return self.width * self.height

    def columns(self):
        """``q`` reshaped to ``(8, H, W, 2)`` in normalised units."""
        n = self.num_pixels
        du = self.q[:n].T.reshape(NUM_BASES, self.height, self.width)
        dv = self.q[n:].T.reshape(NUM_BASES, self.height, self.width)
        return np.stack([du, dv], axis=-1)

    def pixel_design(self):
        """Basis columns in pixel units: ``(bx, by)``, each ``(HW, 8)``."""
        sx, sy = self.scale
        n = self.num_pixels
        return self.q[:n] * sx, self.q[n:] * sy


def build_uncached(width, height):
    if width < 3 or height < 3:
        raise ValueError("width and height must be >= 3")
    fields = tangent_fields(width, height)
    mags = np.sqrt(fields[..., 0] ** 2 + fields[..., 1] ** 2)
    norms = mags.reshape(NUM_BASES, -1).max(axis=1)
    m = np.concatenate(
        [fields[..., 0].reshape(NUM_BASES, -1), fields[..., 1].reshape(NUM_BASES, -1)],
        axis=1,
    ).T / norms
    q, r = householder_qr(m)
    if np.any(np.abs(np.diag(r)) < 1e-9):
        raise RankDeficient("tangent fields are linearly dependent on this grid")
    for arr in (q, r, norms):
        arr.setflags(write=False)
    return BasisSet(width, height, q, r, norms)


@lru_cache(maxsize=32)
def build(width, height):
    """Build (and memoise) the basis set for a ``width x height`` grid."""
    return build_uncached(int(width), int(height))


def flow_to_vector(b, flow):
    """Pixel-unit flow ``(H, W, 2)`` -> normalised flattened vector ``(2HW,)``."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != (b.height, b.width, 2):
        raise DimensionMismatch(
            f"flow shape {flow.shape} does not match basis grid {(b.height, b.width, 2)}")
    sx, sy = b.scale
    return np.concatenate([flow[..., 0].ravel() / sx, flow[..., 1].ravel() / sy])


def vector_to_flow(b, vec):
    """Inverse of :func:`flow_to_vector`."""
    sx, sy = b.scale
    n = b.num_pixels
    out = np.empty((b.height, b.width, 2))
    out[..., 0] = vec[:n].reshape(b.height, b.width) * sx
    out[..., 1] = vec[n:].reshape(b.height, b.width) * sy
    return out


def synthesize(b, alpha):
    """Pixel-unit flow ``sum_i alpha_i h_i``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (NUM_BASES,):
        raise DimensionMismatch("alpha must have 8 entries")
    return vector_to_flow(b, b.q @ alpha)


def analyze(b, flow):
    """Orthogonal projection of a flow onto the bases.

    Returns ``(alpha, residual)`` where the residual is the relative L2 norm of
    the out-of-span part, measured in normalised units.
    """
    vec = flow_to_vector(b, flow)
    alpha = b.q.T @ vec
    resid = np.linalg.norm(vec - b.q @ alpha) / max(np.linalg.norm(vec), 1e-12)
    return alpha, float(resid)


def projection_error(b, flow):
    """Absolute RMS (pixels, per component) of the part of ``flow`` outside the span."""
    alpha, _ = analyze(b, flow)
    diff = np.asarray(flow, dtype=np.float64) - synthesize(b, alpha)
    return float(np.sqrt(np.mean(diff * diff)))


def evaluate_at(b, points):
    """Basis values at arbitrary centred pixel positions.

    ``points`` is ``(N, 2)``; the result is ``(N, 8, 2)`` in normalised flow
    units and agrees with the stored columns on grid pixels.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    sx, sy = b.scale
    du, dv = _tangents_uv(pts[:, 0] / sx, pts[:, 1] / sy)
    rinv = solve_triangular(b.r, np.eye(NUM_BASES))
    qu = (du.T / b.norms) @ rinv
    qv = (dv.T / b.norms) @ rinv
    return np.stack([qu, qv], axis=-1)


def basis_homography(b, alpha):
    """Homography (pixel coordinates) whose tangent at identity is ``alpha``'s flow.

    The bases are first-order, so this is the exact homography only for the
    affine part; it is the map whose flow the weights approximate.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    coeff = solve_triangular(b.r, alpha) / b.norms
    m = np.eye(3)
    for k, (r, c) in enumerate(ENTRIES):
        m[r, c] += coeff[k]
    sx, sy = b.scale
    return Homography(np.diag([sx, sy, 1.0]) @ m @ np.diag([1.0 / sx, 1.0 / sy, 1.0]))
