"""Unsupervised alignment objective: triplet loss, feature identity loss,
inverse consistency and their weighted total.

Flows follow the package convention (backward sampling on the output grid):
``flow_ab`` brings ``a`` onto ``b``'s grid, ``flow_ba`` brings ``b`` onto ``a``'s.
Every L1 term is a mean over valid pixels and channels.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DimensionMismatch, EmptyMask
from .geometry import warp

LAMBDA = 1.0
MU = 0.001


def _as_hwc(x):
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


def identity_features(img):
    return _as_hwc(img)


def gradient_magnitude(img):
    """Central-difference gradient magnitude with replicated borders."""
    img = np.asarray(img, dtype=np.float64)
    p = np.pad(img, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return np.sqrt(gx * gx + gy * gy)[..., None]


def box_mean3(img):
    return uniform_filter(np.asarray(img, dtype=np.float64), size=3, mode="nearest")[..., None]


def stack_features(img):
    return np.concatenate([identity_features(img), gradient_magnitude(img), box_mean3(img)],
                          axis=2)


TRANSFORMS = {
    "identity": identity_features,
    "gradmag": gradient_magnitude,
    "boxmean3": box_mean3,
    "stack": stack_features,
}


def get_transform(name):
    try:
        return TRANSFORMS[name]
    except KeyError:
        raise ValueError(f"unknown feature transform {name!r}; "
                         f"expected one of {sorted(TRANSFORMS)}") from None


def _masked_l1(x, y, mask):
    n = np.count_nonzero(mask)
    if n == 0:
        raise EmptyMask("no valid pixels after warping")
    d = np.abs(x[mask] - y[mask])
    return float(d.sum() / d.size)


def triplet_loss(f_a, f_b, flow, return_valid=False):
    """``mean|warp(f_a) - f_b| - mean|f_a - f_b|`` over the warp's valid pixels."""
    f_a = _as_hwc(f_a)
    f_b = _as_hwc(f_b)
    if f_a.shape != f_b.shape:
        raise DimensionMismatch("feature maps must have equal shapes")
    warped, mask = warp(f_a, flow)
    value = _masked_l1(warped, f_b, mask) - _masked_l1(f_a, f_b, mask)
    if return_valid:
        return value, float(np.mean(mask))
    return value


def fil_loss(img, transform, flow):
    """Feature identity loss ``mean|warp(f(I)) - f(warp(I))|`` over valid pixels."""
    if isinstance(transform, str):
        transform = get_transform(transform)
    img = np.asarray(img, dtype=np.float64)
    feat_then_warp, mask = warp(transform(img), flow)
    warped_img, _ = warp(img, flow)
    return _masked_l1(feat_then_warp, transform(warped_img), mask)


def inverse_consistency(flow_ab, flow_ba):
    """Mean over pixels of ``|flow_ab + flow_ba|^2`` (pixels squared)."""
    flow_ab = np.asarray(flow_ab, dtype=np.float64)
    flow_ba = np.asarray(flow_ba, dtype=np.float64)
    if flow_ab.shape != flow_ba.shape:
        raise DimensionMismatch("flows must have equal shapes")
    s = flow_ab + flow_ba
    return float(np.mean(np.sum(s * s, axis=-1)))


@dataclass(frozen=True)
class LossReport:
    triplet_ab: float
    triplet_ba: float
    fil_ab: float
    fil_ba: float
    inverse_consistency: float
    lam: float
    mu: float
    total: float
    valid_fraction: float

    @property
    def triplet(self):
        return self.triplet_ab + self.triplet_ba

    @staticmethod
    def combine(t_ab, t_ba, f_ab, f_ba, ic, lam, mu):
        return (t_ab + t_ba) + lam * (f_ab + f_ba) + mu * ic

    def recompose(self):
        return self.combine(self.triplet_ab, self.triplet_ba, self.fil_ab, self.fil_ba,
                            self.inverse_consistency, self.lam, self.mu)

    def to_dict(self):
        return {
            "triplet": self.triplet,
            "triplet_ab": self.triplet_ab,
            "triplet_ba": self.triplet_ba,
            "fil_ab": self.fil_ab,
            "fil_ba": self.fil_ba,
            "inverse_consistency": self.inverse_consistency,
            "lambda": self.lam,
            "mu": self.mu,
            "total": self.total,
            "valid_fraction": self.valid_fraction,
        }


def total_objective(i_a, i_b, transform, flow_ab, flow_ba, lam=LAMBDA, mu=MU):
    """Symmetric triplet + feature identity + inverse consistency energy."""
    if isinstance(transform, str):
        transform = get_transform(transform)
    f_a = transform(np.asarray(i_a, dtype=np.float64))
    f_b = transform(np.asarray(i_b, dtype=np.float64))
    t_ab, v_ab = triplet_loss(f_a, f_b, flow_ab, return_valid=True)
    t_ba, v_ba = triplet_loss(f_b, f_a, flow_ba, return_valid=True)
    fil_ab = fil_loss(i_a, transform, flow_ab)
    fil_ba = fil_loss(i_b, transform, flow_ba)
    ic = inverse_consistency(flow_ab, flow_ba)
    total = LossReport.combine(t_ab, t_ba, fil_ab, fil_ba, ic, lam, mu)
    return LossReport(t_ab, t_ba, fil_ab, fil_ba, ic, lam, mu, total, min(v_ab, v_ba))
