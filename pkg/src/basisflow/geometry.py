"""Homography algebra, DLT, homography <-> flow conversion and backward warping.

Conventions used throughout the package:

* Points are ``(x, y)`` pixel coordinates measured from the image centre:
  ``x = j - (W-1)/2`` and ``y = i - (H-1)/2`` for column ``j`` and row ``i``.
* A flow field is a float array of shape ``(H, W, 2)`` holding ``(dx, dy)`` in
  pixels, stored on the *output* grid. Warping is backward:
  ``out(p) = src(p + flow(p))``. To bring a source image onto a target under a
  source->target homography ``H``, warp with the flow of ``invert(H)``.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateConfiguration, DegenerateProjection, DimensionMismatch

HORIZON_EPS = 1e-9
DET_EPS = 1e-12
DLT_GAP = 1e-9


@dataclass(frozen=True, eq=False)
class Homography:
    """A 3x3 projective map, normalised so that ``m[2, 2] == 1``."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64, copy=True)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise DegenerateProjection("homography must be a finite 3x3 matrix")
        if abs(m[2, 2]) < 1e-300:
            raise DegenerateProjection("m[2,2] is zero; cannot normalise")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < DET_EPS:
            raise DegenerateProjection("homography is singular (|det| < 1e-12)")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx, ty):
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    def __eq__(self, other):
        return isinstance(other, Homography) and np.array_equal(self.m, other.m)

    def __hash__(self):
        return hash(self.m.tobytes())

    def __repr__(self):
        return f"Homography({self.m.tolist()!r})"

    def to_list(self):
        return self.m.tolist()


def pixel_grid(width, height):
    """Centred pixel-centre coordinates ``(x, y)``, each of shape ``(H, W)``."""
    x = np.arange(width, dtype=np.float64) - (width - 1) / 2.0
    y = np.arange(height, dtype=np.float64) - (height - 1) / 2.0
    return np.meshgrid(x, y)


def apply(h, p):
    """Apply ``h`` to a point ``(x, y)`` or to an ``(N, 2)`` array of points."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("points must be finite")
    x = p[..., 0]
    y = p[..., 1]
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if np.any(np.abs(w) <= HORIZON_EPS):
        raise DegenerateProjection("point projects onto the line at infinity")
    u = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
    v = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
    return np.stack([u, v], axis=-1)


def invert(h):
    return Homography(np.linalg.inv(h.m))


def compose(h1, h2):
    """The map that applies ``h1`` first and then ``h2``."""
    return Homography(h2.m @ h1.m)


def _hartley(pts):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < 1e-300:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / d
    t = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return t, (pts - c) * s


def dlt(src, dst):
    """Estimate the homography mapping ``src`` onto ``dst`` (each ``(N, 2)``, N >= 4).

    Points are isotropically normalised (centroid at the origin, mean distance
    sqrt(2)) before the SVD solve. The configuration is rejected when the two
    smallest singular values of the 2N x 9 design matrix are closer than
    ``1e-9`` relative to the largest one.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise DimensionMismatch("src and dst must have the same shape")
    n = src.shape[0]
    if n < 4:
        raise DegenerateConfiguration(f"need at least 4 correspondences, got {n}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("correspondences must be finite")

    ts, s = _hartley(src)
    td, d = _hartley(dst)
    x, y = s[:, 0], s[:, 1]
    u, v = d[:, 0], d[:, 1]
    zero = np.zeros(n)
    one = np.ones(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=1)
    a[1::2] = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=1)

    _, sv, vt = np.linalg.svd(a)
    full = np.zeros(9)
    full[: sv.size] = sv
    if full[7] - full[8] <= DLT_GAP * full[0]:
        raise DegenerateConfiguration("correspondences do not fix a unique homography")
    hn = vt[-1].reshape(3, 3)
    return Homography(np.linalg.solve(td, hn @ ts))


def homography_to_flow(h, width, height):
    """Dense flow ``apply(h, p) - p`` on the centred pixel grid, shape ``(H, W, 2)``."""
    x, y = pixel_grid(width, height)
    p = np.stack([x, y], axis=-1)
    return apply(h, p) - p


def _subgrid(n, k=9):
    return np.unique(np.round(np.linspace(0, n - 1, k)).astype(np.int64))


def flow_to_homography(flow):
    """Fit a homography to a flow field through a 9x9 sub-grid of its samples."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise DimensionMismatch("flow must have shape (H, W, 2)")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow must be finite")
    height, width = flow.shape[:2]
    ii, jj = np.meshgrid(_subgrid(height), _subgrid(width), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    src = np.stack([jj - (width - 1) / 2.0, ii - (height - 1) / 2.0], axis=1)
    return dlt(src, src + flow[ii, jj])


def flow_residual(h, flow):
    """RMS (pixels, per component) of ``flow`` minus the flow of ``h``."""
    flow = np.asarray(flow, dtype=np.float64)
    height, width = flow.shape[:2]
    diff = flow - homography_to_flow(h, width, height)
    return float(np.sqrt(np.mean(diff * diff)))


def sample_positions(flow):
    """Array-index sampling coordinates ``(j + dx, i + dy)`` for backward warping."""
    height, width = flow.shape[:2]
    jj = np.arange(width, dtype=np.float64)[None, :]
    ii = np.arange(height, dtype=np.float64)[:, None]
    return jj + flow[..., 0], ii + flow[..., 1]


def warp(src, flow):
    """Backward-warp a ``(H, W)`` or ``(H, W, C)`` array; returns ``(out, mask)``.

    Pixels whose sample position falls outside the source are zero and
    ``False`` in the mask.
    """
    src = np.asarray(src, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2 or flow.shape[:2] != src.shape[:2]:
        raise DimensionMismatch(
            f"flow shape {flow.shape} does not match image shape {src.shape}")
    sx, sy = sample_positions(flow)
    if src.ndim == 2:
        return _kernels.bilinear_sample(src, sx, sy)
    out = np.empty_like(src)
    mask = None
    for c in range(src.shape[2]):
        out[..., c], mask = _kernels.bilinear_sample(src[..., c], sx, sy)
    return out, mask


def warp_image(src, flow):
    """Backward bilinear warp of a grayscale image; returns ``(image, validity mask)``."""
    src = np.asarray(src, dtype=np.float64)
    if src.ndim != 2:
        raise DimensionMismatch("grayscale image must be 2-D")
    return warp(src, flow)
