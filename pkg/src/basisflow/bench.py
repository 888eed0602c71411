"""Seeded synthetic homography benchmark and point-matching metrics.

A sample is produced from a base texture larger than the patch: ``i_a`` is the
centre crop, ``i_b`` resamples the base through the inverse ground-truth
homography, so neither image has empty borders. Category presets emulate the
five scene types: RE (default texture), LT (low-frequency texture), LL (gain
0.3 plus noise), SF / LF (an independently moving block covering 5% / 30% of
the area).
"""

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .bases import build, synthesize
from .errors import BasisFlowError, SpecInfeasible
from .fitting import AlignConfig, RobustConfig, align_direct, fit_robust
from .geometry import (
    Homography, apply, dlt, flow_to_homography, homography_to_flow, invert, warp,
)
from .rng import GEOMETRY, NOISE, OUTLIER, POINTS, Stream
from .textures import make_texture

NUM_POINTS = 6
DEFAULT_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 31))
METHODS = ("identity", "robust", "align")
CSV_HEADER = ("spec_id", "sample_idx", "method", "mean_error_px", "valid_fraction", "status")

# point cells in normalised coordinates: (u range, v range), three columns by two rows
_POINT_CELLS = [
    ((-0.92, -0.80), (-0.92, -0.80)),
    ((-0.15, 0.15), (-0.92, -0.80)),
    ((0.80, 0.92), (-0.92, -0.80)),
    ((-0.92, -0.80), (0.80, 0.92)),
    ((-0.15, 0.15), (0.80, 0.92)),
    ((0.80, 0.92), (0.80, 0.92)),
]
_FALLBACK_CELL = ((-0.92, 0.92), (-0.92, 0.92))


@dataclass(frozen=True)
class OutlierSpec:
    block_w: int
    block_h: int
    motion: tuple = (10.0, 0.0)
    count: int = 1

    @classmethod
    def for_area(cls, width, height, fraction, motion=(10.0, 0.0), count=1):
        s = math.sqrt(fraction)
        return cls(int(round(width * s)), int(round(height * s)), tuple(motion), count)


@dataclass(frozen=True)
class BenchSpec:
    seed: int = 0
    width: int = 576
    height: int = 320
    rho: float = 8.0
    noise_sigma: float = 0.0
    gain: tuple = (1.0, 1.0)
    bias: tuple = (0.0, 0.0)
    outlier: OutlierSpec = None
    texture: str = "value"
    n_samples: int = 1
    spec_id: str = "RE"

    def __post_init__(self):
        if self.rho < 0 or self.noise_sigma < 0:
            raise SpecInfeasible("rho and noise_sigma must be >= 0")
        if self.width < 16 or self.height < 16:
            raise SpecInfeasible("patch must be at least 16x16")
        if self.outlier is not None:
            o = self.outlier
            if not (0 < o.block_w <= self.width and 0 < o.block_h <= self.height):
                raise SpecInfeasible("outlier block does not fit inside the image")

    @property
    def margin(self):
        mot = 0.0 if self.outlier is None else max(abs(v) for v in self.outlier.motion)
        return int(math.ceil(self.rho) + math.ceil(mot) + 2)

    def to_dict(self):
        d = asdict(self)
        d["gain"] = list(self.gain)
        d["bias"] = list(self.bias)
        if self.outlier is not None:
            d["outlier"]["motion"] = list(self.outlier.motion)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise SpecInfeasible(f"unknown spec fields: {sorted(unknown)}")
        if d.get("outlier") is not None:
            o = dict(d["outlier"])
            o["motion"] = tuple(o.get("motion", (10.0, 0.0)))
            d["outlier"] = OutlierSpec(**o)
        for key in ("gain", "bias"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


def category_spec(name, seed=0, n_samples=1, width=576, height=320, rho=8.0):
    """Preset spec for one of the RE / LT / LL / SF / LF categories."""
    common = dict(seed=seed, width=width, height=height, rho=rho, n_samples=n_samples,
                  spec_id=name, noise_sigma=2.0 / 255.0)
    if name == "RE":
        return BenchSpec(**common)
    if name == "LT":
        return BenchSpec(texture="lowfreq", **common)
    if name == "LL":
        common["noise_sigma"] = 4.0 / 255.0
        return BenchSpec(gain=(0.3, 0.3), **common)
    if name == "SF":
        return BenchSpec(outlier=OutlierSpec.for_area(width, height, 0.05), **common)
    if name == "LF":
        return BenchSpec(outlier=OutlierSpec.for_area(width, height, 0.30), **common)
    raise ValueError(f"unknown category {name!r}")


@dataclass
class BenchSample:
    i_a: np.ndarray
    i_b: np.ndarray
    gt: Homography
    src_points: np.ndarray
    dst_points: np.ndarray
    outlier_mask: np.ndarray = None
    blocks: list = field(default_factory=list)  # (x0, y0, w, h, tx, ty), array indices

    def observed_flow(self):
        """Backward-sampling flow on ``i_b``'s grid, with outlier blocks overwritten
        by their own motion."""
        h, w = self.i_a.shape
        flow = homography_to_flow(invert(self.gt), w, h)
        for x0, y0, bw, bh, tx, ty in self.blocks:
            flow[y0:y0 + bh, x0:x0 + bw] = (-tx, -ty)
        return flow


def make_base(spec, index=0):
    m = spec.margin
    return make_texture(spec.texture, spec.width + 2 * m, spec.height + 2 * m, spec.seed, index)


def _corners(width, height):
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    return np.array([[-cx, -cy], [cx, -cy], [cx, cy], [-cx, cy]])


def _in_blocks(p, blocks, width, height, pad=2.0):
    j = p[0] + (width - 1) / 2.0
    i = p[1] + (height - 1) / 2.0
    for x0, y0, bw, bh, _, _ in blocks:
        if x0 - pad <= j <= x0 + bw - 1 + pad and y0 - pad <= i <= y0 + bh - 1 + pad:
            return True
    return False


def _inside(p, width, height, pad=2.0):
    return abs(p[0]) <= (width - 1) / 2.0 - pad and abs(p[1]) <= (height - 1) / 2.0 - pad


def gen_pair(base, spec, index=0):
    """Deterministically generate sample ``index`` of ``spec`` from ``base``."""
    base = np.asarray(base, dtype=np.float64)
    w, h, m = spec.width, spec.height, spec.margin
    hb, wb = base.shape
    if hb < h + 2 * m or wb < w + 2 * m:
        raise SpecInfeasible(f"base {wb}x{hb} too small for {w}x{h} with margin {m}")
    ox, oy = (wb - w) // 2, (hb - h) // 2

    g = Stream(spec.seed, index, GEOMETRY)
    if spec.rho > 0:
        corners = _corners(w, h)
        gt = dlt(corners, corners + g.uniform(8, -spec.rho, spec.rho).reshape(4, 2))
    else:
        gt = Homography.identity()
    gains = g.uniform(2, spec.gain[0], spec.gain[1])
    biases = g.uniform(2, spec.bias[0], spec.bias[1])

    i_a = base[oy:oy + h, ox:ox + w].copy()
    jj = np.arange(w, dtype=np.float64)[None, :] + ox
    ii = np.arange(h, dtype=np.float64)[:, None] + oy
    flow = homography_to_flow(invert(gt), w, h)
    i_b, _ = _kernels.bilinear_sample(base, jj + flow[..., 0], ii + flow[..., 1])

    blocks = []
    outlier_mask = None
    if spec.outlier is not None:
        o = spec.outlier
        os_ = Stream(spec.seed, index, OUTLIER)
        outlier_mask = np.zeros((h, w), dtype=bool)
        tx, ty = float(o.motion[0]), float(o.motion[1])
        grid_j = np.broadcast_to(jj, (h, w))
        grid_i = np.broadcast_to(ii, (h, w))
        for _ in range(o.count):
            x0 = os_.integers(0, w - o.block_w + 1)
            y0 = os_.integers(0, h - o.block_h + 1)
            sl = np.s_[y0:y0 + o.block_h, x0:x0 + o.block_w]
            moved, _ = _kernels.bilinear_sample(base, grid_j[sl] - tx, grid_i[sl] - ty)
            i_b[sl] = moved
            outlier_mask[sl] = True
            blocks.append((x0, y0, o.block_w, o.block_h, tx, ty))

    i_a = gains[0] * i_a + biases[0]
    i_b = gains[1] * i_b + biases[1]
    if spec.noise_sigma > 0:
        n = Stream(spec.seed, index, NOISE)
        i_a = i_a + spec.noise_sigma * n.normal(h * w).reshape(h, w)
        i_b = i_b + spec.noise_sigma * n.normal(h * w).reshape(h, w)
    i_a = np.clip(i_a, 0.0, 1.0)
    i_b = np.clip(i_b, 0.0, 1.0)

    ps = Stream(spec.seed, index, POINTS)
    sx, sy = (w - 1) / 2.0, (h - 1) / 2.0
    src = []
    for cell in _POINT_CELLS:
        # a cell swallowed by an outlier block falls back to the whole inner region
        for attempt in range(400):
            (ulo, uhi), (vlo, vhi) = cell if attempt < 200 else _FALLBACK_CELL
            p = np.array([ps.uniform(low=ulo, high=uhi) * sx, ps.uniform(low=vlo, high=vhi) * sy])
            q = apply(gt, p)
            if (_inside(q, w, h) and not _in_blocks(p, blocks, w, h)
                    and not _in_blocks(q, blocks, w, h)):
                src.append(p)
                break
        else:
            raise SpecInfeasible("could not place a ground-truth point outside the outlier blocks")
    src = np.array(src)
    return BenchSample(i_a, i_b, gt, src, apply(gt, src), outlier_mask, blocks)


def point_errors(h_est, src, dst):
    return np.linalg.norm(apply(h_est, src) - np.asarray(dst, dtype=np.float64), axis=1)


def point_matching_error(h_est, src, dst):
    """Mean L2 distance between ``h_est``-mapped source points and their targets."""
    src = np.asarray(src, dtype=np.float64)
    if src.shape != (NUM_POINTS, 2):
        raise ValueError(f"expected {NUM_POINTS} point pairs")
    return float(np.mean(point_errors(h_est, src, dst)))


def robustness_curve(errors, thresholds=DEFAULT_THRESHOLDS):
    """``[(t, fraction of errors < t)]`` for each threshold."""
    errors = np.asarray(errors, dtype=np.float64)
    if np.any(errors < 0):
        raise ValueError("errors must be >= 0")
    if errors.size == 0:
        return [(float(t), 0.0) for t in thresholds]
    return [(float(t), float(np.mean(errors < t))) for t in thresholds]


def estimate(sample, method, align_cfg=AlignConfig(), robust_cfg=RobustConfig()):
    """Run one estimator on a sample; returns ``(homography, valid_fraction, status)``."""
    h, w = sample.i_a.shape
    if method == "identity":
        return Homography.identity(), 1.0, "ok"
    if method == "robust":
        b = build(w, h)
        fit = fit_robust(b, sample.observed_flow(), robust_cfg)
        hom = invert(flow_to_homography(synthesize(b, fit.alpha)))
        valid = float(np.mean(warp(sample.i_a, homography_to_flow(invert(hom), w, h))[1]))
        return hom, valid, "ok" if fit.converged else "nonconverged"
    if method == "align":
        res = align_direct(sample.i_a, sample.i_b, build(w, h), align_cfg)
        return res.homography, res.valid_fraction, "ok" if res.converged else "nonconverged"
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


@dataclass
class SuiteResult:
    rows: list
    point_errors: dict  # method -> flat list of per-point errors

    def curve(self, method, thresholds=DEFAULT_THRESHOLDS):
        return robustness_curve(self.point_errors.get(method, []), thresholds)

    def mean_errors(self, method):
        return [r["mean_error_px"] for r in self.rows
                if r["method"] == method and r["status"] in ("ok", "nonconverged")]


def evaluate_sample(sample, method, spec_id, idx, align_cfg=AlignConfig(),
                    robust_cfg=RobustConfig()):
    """Evaluate one method plus the identity baseline on a sample.

    Returns ``(rows, per_point_errors)`` keyed like :class:`SuiteResult`.
    """
    methods = [method] if method == "identity" else ["identity", method]
    rows, errs = [], {}
    for meth in methods:
        try:
            hom, valid, status = estimate(sample, meth, align_cfg, robust_cfg)
            e = point_errors(hom, sample.src_points, sample.dst_points)
            rows.append(dict(spec_id=spec_id, sample_idx=idx, method=meth,
                             mean_error_px=float(e.mean()), valid_fraction=valid,
                             status=status))
            errs[meth] = e.tolist()
        except BasisFlowError as exc:
            rows.append(dict(spec_id=spec_id, sample_idx=idx, method=meth,
                             mean_error_px=float("nan"), valid_fraction=0.0,
                             status=f"error:{type(exc).__name__}"))
            errs[meth] = []
    return rows, errs


def run_suite(specs, method, align_cfg=AlignConfig(), robust_cfg=RobustConfig(), bases=None):
    """Generate and evaluate every sample of every spec.

    ``bases`` optionally maps ``(spec_id, index)`` to a base image; otherwise the
    procedural texture of the spec is used. Rows are ordered by spec then index.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    rows = []
    point_errs = {}
    for spec in specs:
        for idx in range(spec.n_samples):
            base = (bases or {}).get((spec.spec_id, idx))
            if base is None:
                base = make_base(spec, idx)
            sample = gen_pair(base, spec, idx)
            r, e = evaluate_sample(sample, method, spec.spec_id, idx, align_cfg, robust_cfg)
            rows.extend(r)
            for k, v in e.items():
                point_errs.setdefault(k, []).extend(v)
    return SuiteResult(rows, point_errs)


def summary_rows(rows):
    """Per-(spec, method) means over successfully evaluated samples."""
    keys = []
    for r in rows:
        k = (r["spec_id"], r["method"])
        if k not in keys:
            keys.append(k)
    out = []
    for spec_id, meth in keys:
        sel = [r for r in rows if r["spec_id"] == spec_id and r["method"] == meth
               and not r["status"].startswith("error")]
        mean = float(np.mean([r["mean_error_px"] for r in sel])) if sel else float("nan")
        valid = float(np.mean([r["valid_fraction"] for r in sel])) if sel else 0.0
        out.append(dict(spec_id=spec_id, sample_idx="mean", method=meth,
                        mean_error_px=mean, valid_fraction=valid, status="summary"))
    return out


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_results_csv(path, rows):
    """Per-sample rows followed by per-spec summary rows."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for r in list(rows) + summary_rows(rows):
            wr.writerow([_fmt(r[k]) for k in CSV_HEADER])


def write_curve_csv(path, curve):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("threshold", "fraction"))
        for t, f in curve:
            wr.writerow((_fmt(t), _fmt(f)))
