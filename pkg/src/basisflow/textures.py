"""Procedural base images, so the benchmark needs no dataset."""

import numpy as np

from .rng import TEXTURE, Stream

KINDS = ("value", "lowfreq", "checker", "ramp")


def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


def _lattice_layer(width, height, cell, stream):
    gw = width // cell + 2
    gh = height // cell + 2
    lat = stream.uniform(gw * gh).reshape(gh, gw)
    x = np.arange(width) / cell
    y = np.arange(height) / cell
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    sx = _smoothstep(x - x0)[None, :]
    sy = _smoothstep(y - y0)[:, None]
    a = lat[np.ix_(y0, x0)]
    b = lat[np.ix_(y0, x0 + 1)]
    c = lat[np.ix_(y0 + 1, x0)]
    d = lat[np.ix_(y0 + 1, x0 + 1)]
    top = a + sx * (b - a)
    bot = c + sx * (d - c)
    return top + sy * (bot - top)


def value_noise(width, height, stream, octaves=((48, 1.0), (24, 0.6), (12, 0.35), (6, 0.2)),
                lo=0.08, hi=0.92):
    """Multi-octave value noise rescaled to ``[lo, hi]``."""
    img = np.zeros((height, width))
    for cell, amp in octaves:
        img += amp * _lattice_layer(width, height, cell, stream)
    img -= img.min()
    peak = img.max()
    if peak > 0:
        img /= peak
    return lo + (hi - lo) * img


def checkerboard(width, height, square=24, lo=0.2, hi=0.8):
    i, j = np.indices((height, width))
    return np.where(((i // square) + (j // square)) % 2 == 0, lo, hi).astype(np.float64)


def ramp(width, height, lo=0.1, hi=0.9):
    i, j = np.indices((height, width), dtype=np.float64)
    t = (j / max(width - 1, 1) + i / max(height - 1, 1)) / 2.0
    return lo + (hi - lo) * t


def make_texture(kind, width, height, seed, index=0):
    stream = Stream(seed, index, TEXTURE)
    if kind == "value":
        return value_noise(width, height, stream)
    if kind == "lowfreq":
        return value_noise(width, height, stream, octaves=((96, 1.0), (48, 0.4)), lo=0.35, hi=0.65)
    if kind == "checker":
        return checkerboard(width, height)
    if kind == "ramp":
        # a pure ramp cannot be aligned in every direction; add faint noise
        return np.clip(ramp(width, height) + 0.05 * (value_noise(width, height, stream) - 0.5),
                       0.0, 1.0)
    raise ValueError(f"unknown texture kind {kind!r}; expected one of {KINDS}")
