"""Low-rank projection of feature maps onto the span of K basis columns.

A feature map is an ``(H, W, C)`` array; each channel flattened row-major is a
vector of length ``HW``. A projection basis ``V`` is ``(HW, K)``.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DimensionMismatch, SingularBasis

DEFAULT_K = 16
MAX_COND = 1e12


def as_matrix(fmap):
    """``(H, W, C)`` -> ``(HW, C)`` with channels as columns."""
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim == 2:
        fmap = fmap[..., None]
    if fmap.ndim != 3:
        raise DimensionMismatch("feature map must have shape (H, W, C)")
    return fmap.reshape(-1, fmap.shape[2])


def basis_matrix(v, width=None, height=None):
    """Accept a ``(HW, K)`` matrix or an ``(H, W, K)`` map and return ``(HW, K)``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 3:
        if width is not None and v.shape[:2] != (height, width):
            raise DimensionMismatch("basis map spatial size does not match")
        v = v.reshape(-1, v.shape[2])
    if v.ndim != 2:
        raise DimensionMismatch("basis must be (HW, K) or (H, W, K)")
    if v.shape[1] > v.shape[0]:
        raise ValueError("K must not exceed HW")
    if not np.all(np.isfinite(v)):
        raise ValueError("basis must be finite")
    if np.any(np.all(v == 0.0, axis=0)):
        raise ValueError("basis columns must not be identically zero")
    return v


def default_reg(v):
    gram = v.T @ v
    return 1e-8 * np.trace(gram) / v.shape[1]


def lrr_project(m_in, v, reg=None):
    """Project every channel of ``m_in`` onto ``span(V)``.

    Computes ``V (V^T V + reg I)^{-1} V^T m_c`` per channel. ``reg=None`` picks
    ``1e-8 * trace(V^T V) / K``; ``reg=0`` is the exact projection and raises
    :class:`SingularBasis` when ``cond(V^T V) > 1e12``.
    """
    m_in = np.asarray(m_in, dtype=np.float64)
    squeeze = m_in.ndim == 2
    if squeeze:
        m_in = m_in[..., None]
    h, w, c = m_in.shape
    v = basis_matrix(v, w, h)
    if v.shape[0] != h * w:
        raise DimensionMismatch(f"basis has {v.shape[0]} rows, feature map has {h * w} pixels")
    if reg is None:
        reg = default_reg(v)
    if reg < 0:
        raise ValueError("reg must be >= 0")

    gram = v.T @ v
    if reg == 0 and np.linalg.cond(gram) > MAX_COND:
        raise SingularBasis("V^T V is singular or too ill-conditioned; pass reg > 0")
    gram = gram + reg * np.eye(gram.shape[0])
    try:
        factor = cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularBasis(str(exc)) from exc
    coeff = cho_solve(factor, v.T @ m_in.reshape(-1, c))
    out = (v @ coeff).reshape(h, w, c)
    return out[..., 0] if squeeze else out


def pca_energy(fmap):
    """Cumulative energy ``sum_{i<=k} s_i^2 / sum s_i^2`` of the uncentred ``HW x C`` matrix.

    Returns an empty array for an all-zero input.
    """
    s = np.linalg.svd(as_matrix(fmap), compute_uv=False)
    e = s * s
    total = e.sum()
    if total == 0:
        return np.zeros(0)
    prof = np.cumsum(e) / total
    prof[-1] = 1.0
    return np.minimum(prof, 1.0)


def npc(profile, threshold):
    """Fractional number of components at which the profile first reaches ``threshold``.

    The profile is linearly interpolated with ``E(0) = 0``.
    """
    if not (0.0 < threshold <= 1.0):
        raise ValueError("threshold must lie in (0, 1]")
    prof = np.concatenate([[0.0], np.asarray(profile, dtype=np.float64)])
    if prof.size < 2:
        raise ValueError("profile is empty")
    k = int(np.argmax(prof >= threshold))
    if prof[k] < threshold:
        raise ValueError("profile never reaches the threshold")
    lo, hi = prof[k - 1], prof[k]
    return (k - 1) + (threshold - lo) / (hi - lo)


def random_orthonormal(hw, k, rng):
    q, r = np.linalg.qr(rng.standard_normal((hw, k)))
    return q * np.sign(np.diag(r))


def canonical(hw, indices):
    v = np.zeros((hw, len(indices)))
    v[np.asarray(indices), np.arange(len(indices))] = 1.0
    return v


def from_flows(flows):
    """Stack the x and y components of flows as projection columns, ``(HW, 2N)``."""
    flows = np.asarray(flows, dtype=np.float64)
    cols = [f[..., c].ravel() for f in flows for c in range(2)]
    return np.stack(cols, axis=1)
