"""Per-pixel inner loops, with a numba path and a pure-numpy path.

The numba kernels are used when numba imports cleanly, unless the environment
variable ``BASISFLOW_NO_NUMBA`` is set to a non-empty value other than ``0``.
Both paths evaluate every per-pixel expression in the same order, so sampling
results are bit-identical between them; only the reductions in
``normal_equations`` may differ in the last bits.

Sampling convention: ``sx``/``sy`` are array-index coordinates (column, row).
A sample is valid iff ``0 <= sx <= W-1`` and ``0 <= sy <= H-1``; a tap whose
interpolation weight is exactly zero is never read, so samples on the last
row/column stay valid. Invalid samples produce 0.
"""

import os

import numpy as np

_flag = os.environ.get("BASISFLOW_NO_NUMBA", "")
USE_NUMBA = not (_flag and _flag != "0")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path


def _taps_np(w, h, sx, sy):
    valid = (sx >= 0.0) & (sx <= w - 1) & (sy >= 0.0) & (sy <= h - 1)
    sxv = np.where(valid, sx, 0.0)
    syv = np.where(valid, sy, 0.0)
    x0 = np.floor(sxv).astype(np.int64)
    y0 = np.floor(syv).astype(np.int64)
    fx = sxv - x0
    fy = syv - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return valid, x0, y0, x1, y1, fx, fy


def bilinear_sample_np(img, sx, sy):
    h, w = img.shape
    valid, x0, y0, x1, y1, fx, fy = _taps_np(w, h, sx, sy)
    a = img[y0, x0]
    b = img[y0, x1]
    c = img[y1, x0]
    d = img[y1, x1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    out = top + fy * (bot - top)
    out = np.where(valid, out, 0.0)
    return out, valid


def bilinear_sample_grad_np(img, sx, sy):
    """Sample plus the exact partial derivatives of the bilinear interpolant."""
    h, w = img.shape
    valid, x0, y0, x1, y1, fx, fy = _taps_np(w, h, sx, sy)
    a = img[y0, x0]
    b = img[y0, x1]
    c = img[y1, x0]
    d = img[y1, x1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    out = np.where(valid, top + fy * (bot - top), 0.0)

    # derivative taps fall back to the last full cell on the far border
    xa = np.minimum(x0, w - 2)
    ya = np.minimum(y0, h - 2)
    gfx = sx - xa
    gfy = sy - ya
    a = img[ya, xa]
    b = img[ya, xa + 1]
    c = img[ya + 1, xa]
    d = img[ya + 1, xa + 1]
    gx = (b - a) + gfy * ((d - c) - (b - a))
    gy = (c - a) + gfx * ((d - b) - (c - a))
    gx = np.where(valid, gx, 0.0)
    gy = np.where(valid, gy, 0.0)
    return out, gx, gy, valid


def normal_equations_np(gx, gy, bx, by, r, mask):
    """Gauss-Newton normal equations for J = gx*bx + gy*by over masked rows."""
    sel = np.flatnonzero(mask)
    jac = gx[sel, None] * bx[sel] + gy[sel, None] * by[sel]
    rs = r[sel]
    return jac.T @ jac, jac.T @ rs, float(rs @ rs), sel.size


def downsample2_np(img):
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    v = img[: 2 * h2, : 2 * w2]
    return 0.25 * (((v[0::2, 0::2] + v[0::2, 1::2]) + v[1::2, 0::2]) + v[1::2, 1::2])


# ---------------------------------------------------------------- numba path

if USE_NUMBA:

    @njit(cache=True)
    def _bilinear_sample_nb(img, sx, sy, out, valid):
        h, w = img.shape
        n = sx.shape[0]
        for k in range(n):
            x = sx[k]
            y = sy[k]
            if not (x >= 0.0 and x <= w - 1 and y >= 0.0 and y <= h - 1):
                out[k] = 0.0
                valid[k] = False
                continue
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            fx = x - x0
            fy = y - y0
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            a = img[y0, x0]
            b = img[y0, x1]
            c = img[y1, x0]
            d = img[y1, x1]
            top = a + fx * (b - a)
            bot = c + fx * (d - c)
            out[k] = top + fy * (bot - top)
            valid[k] = True

    @njit(cache=True)
    def _bilinear_sample_grad_nb(img, sx, sy, out, gx, gy, valid):
        h, w = img.shape
        n = sx.shape[0]
        for k in range(n):
            x = sx[k]
            y = sy[k]
            if not (x >= 0.0 and x <= w - 1 and y >= 0.0 and y <= h - 1):
                out[k] = 0.0
                gx[k] = 0.0
                gy[k] = 0.0
                valid[k] = False
                continue
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            fx = x - x0
            fy = y - y0
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            a = img[y0, x0]
            b = img[y0, x1]
            c = img[y1, x0]
            d = img[y1, x1]
            top = a + fx * (b - a)
            bot = c + fx * (d - c)
            out[k] = top + fy * (bot - top)
            xa = min(x0, w - 2)
            ya = min(y0, h - 2)
            gfx = x - xa
            gfy = y - ya
            a = img[ya, xa]
            b = img[ya, xa + 1]
            c = img[ya + 1, xa]
            d = img[ya + 1, xa + 1]
            gx[k] = (b - a) + gfy * ((d - c) - (b - a))
            gy[k] = (c - a) + gfx * ((d - b) - (c - a))
            valid[k] = True

    @njit(cache=True)
    def _normal_equations_nb(gx, gy, bx, by, r, mask):
        n, m = bx.shape
        jtj = np.zeros((m, m))
        jtr = np.zeros(m)
        row = np.empty(m)
        rr = 0.0
        count = 0
        for k in range(n):
            if not mask[k]:
                continue
            for i in range(m):
                row[i] = gx[k] * bx[k, i] + gy[k] * by[k, i]
            rk = r[k]
            for i in range(m):
                jtr[i] += row[i] * rk
                for j in range(i, m):
                    jtj[i, j] += row[i] * row[j]
            rr += rk * rk
            count += 1
        for i in range(m):
            for j in range(i):
                jtj[i, j] = jtj[j, i]
        return jtj, jtr, rr, count

    @njit(cache=True)
    def _downsample2_nb(img):
        h, w = img.shape
        h2 = h // 2
        w2 = w // 2
        out = np.empty((h2, w2))
        for i in range(h2):
            for j in range(w2):
                out[i, j] = 0.25 * (
                    ((img[2 * i, 2 * j] + img[2 * i, 2 * j + 1]) + img[2 * i + 1, 2 * j])
                    + img[2 * i + 1, 2 * j + 1]
                )
        return out

    def bilinear_sample_nb(img, sx, sy):
        img = np.ascontiguousarray(img, dtype=np.float64)
        shape = np.shape(sx)
        sx = np.ascontiguousarray(sx, dtype=np.float64).ravel()
        sy = np.ascontiguousarray(sy, dtype=np.float64).ravel()
        out = np.empty(sx.size)
        valid = np.empty(sx.size, dtype=np.bool_)
        _bilinear_sample_nb(img, sx, sy, out, valid)
        return out.reshape(shape), valid.reshape(shape)

    def bilinear_sample_grad_nb(img, sx, sy):
        img = np.ascontiguousarray(img, dtype=np.float64)
        shape = np.shape(sx)
        sx = np.ascontiguousarray(sx, dtype=np.float64).ravel()
        sy = np.ascontiguousarray(sy, dtype=np.float64).ravel()
        out = np.empty(sx.size)
        gx = np.empty(sx.size)
        gy = np.empty(sx.size)
        valid = np.empty(sx.size, dtype=np.bool_)
        _bilinear_sample_grad_nb(img, sx, sy, out, gx, gy, valid)
        return (out.reshape(shape), gx.reshape(shape), gy.reshape(shape),
                valid.reshape(shape))

    def normal_equations_nb(gx, gy, bx, by, r, mask):
        jtj, jtr, rr, count = _normal_equations_nb(
            np.ascontiguousarray(gx, dtype=np.float64),
            np.ascontiguousarray(gy, dtype=np.float64),
            np.ascontiguousarray(bx, dtype=np.float64),
            np.ascontiguousarray(by, dtype=np.float64),
            np.ascontiguousarray(r, dtype=np.float64),
            np.ascontiguousarray(mask, dtype=np.bool_),
        )
        return jtj, jtr, float(rr), int(count)

    def downsample2_nb(img):
        return _downsample2_nb(np.ascontiguousarray(img, dtype=np.float64))

    bilinear_sample = bilinear_sample_nb
    bilinear_sample_grad = bilinear_sample_grad_nb
    normal_equations = normal_equations_nb
    downsample2 = downsample2_nb
else:
    bilinear_sample = bilinear_sample_np
    bilinear_sample_grad = bilinear_sample_grad_np
    normal_equations = normal_equations_np
    downsample2 = downsample2_np
