"""File formats: Middlebury ``.flo``, PGM (P5), PPM (P6), raw feature maps and
JSON documents.

Every reader accepts a path or a binary stream. Headers are validated before
any payload is read, and payload reads never exceed the declared size.
"""

import io as _io
import json
import os
import struct

import numpy as np

from .errors import BadHeader, BadMagic, DimensionOverflow, TruncatedFile, UnsupportedFormat

FLO_MAGIC = b"PIEH"  # float32 202021.25, little-endian
FMAP_MAGIC = b"FMAP"
MAX_FLO_PIXELS = 2 ** 31 // 8


def _open(target, mode):
    if isinstance(target, (str, bytes, os.PathLike)):
        return open(target, mode), True
    return target, False


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFile(f"expected {n} bytes, got {len(data)}")
    return data


# ----------------------------------------------------------------------- .flo


def write_flo(target, flow):
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow must have shape (H, W, 2)")
    h, w = flow.shape[:2]
    payload = FLO_MAGIC + struct.pack("<ii", w, h) + flow.astype("<f4").tobytes(order="C")
    fh, own = _open(target, "wb")
    try:
        fh.write(payload)
    finally:
        if own:
            fh.close()


def read_flo(source):
    """Read a ``.flo`` file into a float64 ``(H, W, 2)`` array."""
    fh, own = _open(source, "rb")
    try:
        magic = _read_exact(fh, 4)
        if magic != FLO_MAGIC:
            raise BadMagic(f"bad .flo magic {magic!r}")
        w, h = struct.unpack("<ii", _read_exact(fh, 8))
        if w <= 0 or h <= 0:
            raise BadHeader(f"invalid .flo dimensions {w}x{h}")
        if w * h > MAX_FLO_PIXELS:
            raise DimensionOverflow(f".flo dimensions {w}x{h} are too large")
        data = _read_exact(fh, 8 * w * h)
    finally:
        if own:
            fh.close()
    return np.frombuffer(data, dtype="<f4").reshape(h, w, 2).astype(np.float64)


# ------------------------------------------------------------------ PGM / PPM


def _next_token(fh):
    tok = b""
    while True:
        c = fh.read(1)
        if not c:
            if tok:
                return tok
            raise BadHeader("unexpected end of header")
        if c == b"#" and not tok:
            while c not in (b"\n", b"\r", b""):
                c = fh.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c
        if len(tok) > 16:
            raise BadHeader("header token too long")


def _read_pnm_header(fh):
    magic = _read_exact(fh, 2)
    try:
        w, h, maxval = (int(_next_token(fh)) for _ in range(3))
    except ValueError as exc:
        raise BadHeader(str(exc)) from exc
    if w <= 0 or h <= 0 or not (0 < maxval < 65536):
        raise BadHeader(f"invalid header values {w}x{h} maxval {maxval}")
    return magic, w, h, maxval


def read_pgm(source):
    """Read a binary P5 image as float64 in ``[0, 1]`` (``raw / maxval``)."""
    fh, own = _open(source, "rb")
    try:
        magic = fh.read(2)
        if magic != b"P5":
            if magic in (b"P1", b"P2", b"P3", b"P4", b"P6"):
                raise UnsupportedFormat(f"only binary P5 is supported, got {magic!r}")
            raise BadHeader(f"not a PGM file (magic {magic!r})")
        try:
            w, h, maxval = (int(_next_token(fh)) for _ in range(3))
        except ValueError as exc:
            raise BadHeader(str(exc)) from exc
        if w <= 0 or h <= 0 or maxval not in (255, 65535):
            raise BadHeader(f"unsupported header {w}x{h} maxval {maxval}")
        dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
        data = _read_exact(fh, w * h * np.dtype(dtype).itemsize)
    finally:
        if own:
            fh.close()
    return np.frombuffer(data, dtype=dtype).reshape(h, w).astype(np.float64) / maxval


def to_uint8(img):
    """Quantise ``[0, 1]`` values to 0..255, rounding halves away from zero."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def write_pgm(target, img):
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    h, w = img.shape
    raw = img if img.dtype == np.uint8 else to_uint8(img)
    fh, own = _open(target, "wb")
    try:
        fh.write(b"P5\n%d %d\n255\n" % (w, h) + raw.tobytes())
    finally:
        if own:
            fh.close()


def write_ppm(target, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM image must have shape (H, W, 3)")
    h, w = rgb.shape[:2]
    fh, own = _open(target, "wb")
    try:
        fh.write(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())
    finally:
        if own:
            fh.close()


def read_ppm(source):
    fh, own = _open(source, "rb")
    try:
        magic, w, h, maxval = _read_pnm_header(fh)
        if magic != b"P6" or maxval != 255:
            raise UnsupportedFormat("only 8-bit binary P6 is supported")
        data = _read_exact(fh, 3 * w * h)
    finally:
        if own:
            fh.close()
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


# ------------------------------------------------------------ flow colouring


def make_color_wheel():
    """Middlebury colour wheel: 55 RGB entries in [0, 255], starting at red."""
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((ry + yg + gc + cb + bm + mr, 3))
    col = 0
    wheel[col:col + ry, 0] = 255
    wheel[col:col + ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col:col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col:col + yg, 1] = 255
    col += yg
    wheel[col:col + gc, 1] = 255
    wheel[col:col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col:col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col:col + cb, 2] = 255
    col += cb
    wheel[col:col + bm, 2] = 255
    wheel[col:col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col:col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col:col + mr, 0] = 255
    return wheel


def colorize_flow(flow, max_mag=None):
    """Colour-code a flow: hue from the angle (0 rad = +x = red), saturation
    from ``magnitude / max_mag``. Zero flow is white. Returns uint8 ``(H, W, 3)``."""
    flow = np.asarray(flow, dtype=np.float64)
    dx, dy = flow[..., 0], flow[..., 1]
    mag = np.sqrt(dx * dx + dy * dy)
    if max_mag is None:
        max_mag = float(mag.max())
    elif not max_mag > 0:
        raise ValueError("max_mag must be > 0")
    rad = mag / max_mag if max_mag > 0 else np.zeros_like(mag)

    wheel = make_color_wheel() / 255.0
    ncols = wheel.shape[0]
    ang = np.mod(np.arctan2(dy, dx), 2 * np.pi) / (2 * np.pi)
    fk = ang * ncols
    k0 = np.floor(fk).astype(np.int64) % ncols
    k1 = (k0 + 1) % ncols
    f = fk - np.floor(fk)
    out = np.empty(flow.shape[:2] + (3,))
    for ch in range(3):
        col = (1 - f) * wheel[k0, ch] + f * wheel[k1, ch]
        inside = rad <= 1
        col = np.where(inside, 1 - np.minimum(rad, 1) * (1 - col), col * 0.75)
        out[..., ch] = col
    return np.floor(255.0 * out + 0.5).astype(np.uint8)


# -------------------------------------------------------------- feature maps


def write_fmap(target, fmap):
    """``FMAP`` + u32 W, H, C (little-endian) + f32 row-major, channel innermost."""
    fmap = np.asarray(fmap)
    if fmap.ndim == 2:
        fmap = fmap[..., None]
    h, w, c = fmap.shape
    payload = FMAP_MAGIC + struct.pack("<III", w, h, c) + fmap.astype("<f4").tobytes(order="C")
    fh, own = _open(target, "wb")
    try:
        fh.write(payload)
    finally:
        if own:
            fh.close()


def read_fmap(source):
    fh, own = _open(source, "rb")
    try:
        magic = _read_exact(fh, 4)
        if magic != FMAP_MAGIC:
            raise BadMagic(f"bad feature-map magic {magic!r}")
        w, h, c = struct.unpack("<III", _read_exact(fh, 12))
        if w == 0 or h == 0 or c == 0:
            raise BadHeader("feature map dimensions must be positive")
        if w * h * c > 2 ** 31 // 4:
            raise DimensionOverflow("feature map is too large")
        data = _read_exact(fh, 4 * w * h * c)
    finally:
        if own:
            fh.close()
    return np.frombuffer(data, dtype="<f4").reshape(h, w, c).astype(np.float64)


# ---------------------------------------------------------------- documents


def dumps_json(doc):
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, doc):
    with open(path, "w") as fh:
        fh.write(dumps_json(doc))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def weights_doc(width, height, alpha, residual, convention, **extra):
    doc = {
        "width": int(width),
        "height": int(height),
        "convention": convention,
        "alpha": [float(a) for a in alpha],
        "residual": float(residual),
    }
    doc.update(extra)
    return doc


def parse_weights_doc(doc):
    """Validate a weights document; returns ``(width, height, convention, alpha, residual)``."""
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    try:
        alpha = np.array(doc["alpha"], dtype=np.float64)
        out = (int(doc["width"]), int(doc["height"]), str(doc["convention"]), alpha,
               float(doc["residual"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise BadHeader(f"malformed weights document: {exc}") from exc
    if alpha.shape != (8,):
        raise BadHeader("weights document must hold 8 alpha values")
    return out


def homography_doc(h):
    return {"matrix": h.to_list()}


def flo_bytes(flow):
    buf = _io.BytesIO()
    write_flo(buf, flow)
    return buf.getvalue()
