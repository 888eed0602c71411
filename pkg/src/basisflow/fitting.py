"""Estimating the 8 basis weights from correspondences, dense flows or image pairs."""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .bases import NUM_BASES, build, evaluate_at, flow_to_vector, synthesize
from .errors import DimensionMismatch, NoTexture, UnderdeterminedSystem
from .geometry import flow_to_homography, invert

log = logging.getLogger(__name__)

MAX_COND = 1e12
TEXTURE_EPS = 1e-6


@dataclass(frozen=True)
class RobustConfig:
    loss: str = "huber"
    delta: float = 1.0
    max_iters: int = 50
    tol: float = 1e-6

    def __post_init__(self):
        if self.loss not in ("huber", "welsch"):
            raise ValueError(f"unknown robust loss {self.loss!r}")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass(frozen=True)
class AlignConfig:
    """Settings for :func:`align_direct`.

    ``tol`` is the RMS pixel displacement of a Gauss-Newton step below which a
    level is considered converged. ``normalize`` standardises both images to
    zero mean and unit variance first, which makes the result invariant to a
    global gain.
    """

    levels: int = 4
    iters: int = 30
    tol: float = 1e-3
    alpha0: tuple = None
    normalize: bool = False
    max_halvings: int = 8

    def __post_init__(self):
        if self.levels < 1 or self.iters < 1:
            raise ValueError("levels and iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass
class RobustFit:
    alpha: np.ndarray
    weights: np.ndarray
    converged: bool
    iterations: int


@dataclass
class AlignResult:
    alpha: np.ndarray
    homography: object
    error: float
    converged: bool
    iterations: int = 0
    valid_fraction: float = 1.0
    level_errors: list = field(default_factory=list)


def _solve_normal(ata, atb):
    if np.linalg.cond(ata) > MAX_COND:
        raise UnderdeterminedSystem("normal matrix is singular or too ill-conditioned")
    return cho_solve(cho_factor(ata), atb)


def _sparse_design(b, src):
    vals = evaluate_at(b, src)
    sx, sy = b.scale
    a = np.empty((2 * vals.shape[0], NUM_BASES))
    a[0::2] = vals[:, :, 0] * sx
    a[1::2] = vals[:, :, 1] * sy
    return a


def _wls(a, y, w_rows):
    sw = np.sqrt(w_rows)
    sol, _, rank, sv = np.linalg.lstsq(a * sw[:, None], y * sw, rcond=None)
    if rank < NUM_BASES or (sv[0] / sv[-1]) ** 2 > MAX_COND:
        raise UnderdeterminedSystem("correspondences do not determine the 8 weights")
    return sol


def _check_corrs(src, dst, weights):
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise DimensionMismatch("src and dst must have the same shape")
    w = np.ones(src.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (src.shape[0],) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite, >= 0, one per correspondence")
    if np.count_nonzero(w) < 4:
        raise UnderdeterminedSystem("need at least 4 correspondences with positive weight")
    return src, dst, w


def fit_sparse(b, src, dst, weights=None):
    """Weighted least-squares weights from point correspondences.

    Minimises ``sum_i w_i |B(src_i) alpha - (dst_i - src_i)|^2`` with ``B`` in
    pixel units. Returns ``(alpha, rms)`` where ``rms`` is the weighted
    per-component RMS residual in pixels over points with positive weight.
    """
    src, dst, w = _check_corrs(src, dst, weights)
    a = _sparse_design(b, src)
    y = (dst - src).ravel()
    alpha = _wls(a, y, np.repeat(w, 2))
    r = (a @ alpha - y).reshape(-1, 2)
    rms = np.sqrt(np.sum(w * np.sum(r * r, axis=1)) / (2.0 * w.sum()))
    return alpha, float(rms)


def robust_weights(r, cfg):
    """IRLS weights for residual norms ``r`` (pixels)."""
    r = np.asarray(r, dtype=np.float64)
    if cfg.loss == "huber":
        return np.where(r <= cfg.delta, 1.0, cfg.delta / np.maximum(r, cfg.delta))
    return np.exp(-((r / cfg.delta) ** 2))


def fit_robust(b, observations, cfg=RobustConfig()):
    """Iteratively reweighted least squares.

    ``observations`` is either a dense ``(H, W, 2)`` pixel flow on the basis
    grid or a ``(src, dst)`` pair of ``(N, 2)`` arrays. Dense flows are solved
    in normalised units (so unit weights reproduce :func:`bases.analyze`);
    correspondences in pixel units (so unit weights reproduce
    :func:`fit_sparse`). Residual norms fed to the loss are always in pixels.

    Returns a :class:`RobustFit`; ``converged`` is False when the weight change
    never fell below ``cfg.tol`` within ``cfg.max_iters`` iterations, in which
    case the last iterate is returned.
    """
    if isinstance(observations, tuple):
        src, dst, _ = _check_corrs(observations[0], observations[1], None)
        a = _sparse_design(b, src)
        y = (dst - src).ravel()

        def solve(w):
            return _wls(a, y, np.repeat(w, 2))

        def resid(alpha):
            r = (a @ alpha - y).reshape(-1, 2)
            return np.sqrt(np.sum(r * r, axis=1))

        w = np.ones(src.shape[0])
    else:
        vec = flow_to_vector(b, observations)
        q = b.q
        n = b.num_pixels
        sx, sy = b.scale
        qu, qv = q[:n], q[n:]
        yu, yv = vec[:n], vec[n:]

        def solve(w):
            ata = (qu * w[:, None]).T @ qu + (qv * w[:, None]).T @ qv
            atb = qu.T @ (w * yu) + qv.T @ (w * yv)
            return _solve_normal(ata, atb)

        def resid(alpha):
            ru = (qu @ alpha - yu) * sx
            rv = (qv @ alpha - yv) * sy
            return np.sqrt(ru * ru + rv * rv)

        w = np.ones(n)

    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        alpha = solve(w)
        w_new = robust_weights(resid(alpha), cfg)
        change = float(np.max(np.abs(w_new - w)))
        w = w_new
        if change < cfg.tol:
            converged = True
            break
    if not isinstance(observations, tuple):
        w = w.reshape(b.height, b.width)
    return RobustFit(alpha, w, converged, it)


# ----------------------------------------------------------- direct alignment


def gradient_energy(img):
    img = np.asarray(img, dtype=np.float64)
    gx = 0.5 * (img[:, 2:] - img[:, :-2])
    gy = 0.5 * (img[2:, :] - img[:-2, :])
    return float(np.mean(gx * gx) + np.mean(gy * gy))


def _standardize(img):
    return (img - img.mean()) / img.std()


def pyramid(img, levels):
    out = [np.asarray(img, dtype=np.float64)]
    for _ in range(levels - 1):
        out.append(_kernels.downsample2(out[-1]))
    return out


def max_levels(width, height):
    return max(1, int(np.floor(np.log2(min(width, height)))) - 2)


def _level_offset(fine, coarse):
    """``(ox, oy)`` with ``p_fine = 2 * p_coarse + offset`` in centred coordinates."""
    (hf, wf), (hc, wc) = fine, coarse
    return np.array([wc - wf / 2.0, hc - hf / 2.0])


def transfer_weights(alpha, b_from, b_to, factor, offset):
    """Re-express basis weights on another grid.

    Target positions relate to source positions by ``p_to = factor * p_from + offset``
    and flows scale by ``factor``. The transferred flow stays inside the span,
    so a least-squares fit on a 9x9 sample of points is exact.
    """
    w, h = b_to.width, b_to.height
    xs = np.linspace(-(w - 1) / 2.0, (w - 1) / 2.0, 9)
    ys = np.linspace(-(h - 1) / 2.0, (h - 1) / 2.0, 9)
    p_to = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    p_from = (p_to - offset) / factor
    vals = np.einsum("nkc,k->nc", evaluate_at(b_from, p_from), np.asarray(alpha, dtype=np.float64))
    sx, sy = b_from.scale
    flow = factor * vals * np.array([sx, sy])
    return fit_sparse(b_to, p_to, p_to + flow)[0]


class _Level:
    """Photometric objective for one pyramid level."""

    def __init__(self, ia, ib):
        self.ia = np.ascontiguousarray(ia)
        self.ibf = np.ascontiguousarray(ib).ravel()
        h, w = ia.shape
        self.basis = build(w, h)
        self.bx, self.by = self.basis.pixel_design()
        self.jj = np.tile(np.arange(w, dtype=np.float64), h)
        self.ii = np.repeat(np.arange(h, dtype=np.float64), w)
        self.step_gram = (self.bx.T @ self.bx + self.by.T @ self.by) / (h * w)

    def evaluate(self, alpha, mask=None):
        """``(E, r, gx, gy, mask)`` with ``E`` the masked mean squared residual."""
        sx = self.jj + self.bx @ alpha
        sy = self.ii + self.by @ alpha
        out, gx, gy, valid = _kernels.bilinear_sample_grad(self.ia, sx, sy)
        r = out - self.ibf
        if mask is None:
            mask = valid
        n = np.count_nonzero(mask)
        rm = r[mask]
        e = float(rm @ rm) / n if n else np.inf
        return e, r, gx, gy, mask

    def step_px(self, delta):
        return float(np.sqrt(max(delta @ self.step_gram @ delta, 0.0)))


def _gauss_newton(level, alpha, cfg):
    e, r, gx, gy, mask = level.evaluate(alpha)
    converged = False
    it = 0
    for it in range(1, cfg.iters + 1):
        jtj, jtr, _, n = _kernels.normal_equations(gx, gy, level.bx, level.by, r, mask)
        if n < NUM_BASES:
            break
        damp = 1e-9 * max(np.trace(jtj), 1e-300) / NUM_BASES
        delta = -np.linalg.solve(jtj + damp * np.eye(NUM_BASES), jtr)
        t = 1.0
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            cand = alpha + t * delta
            ec, rc, gxc, gyc, maskc = level.evaluate(cand)
            if ec < e:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no descent along the Gauss-Newton direction: stationary point
            converged = True
            break
        alpha, e, r, gx, gy, mask = cand, ec, rc, gxc, gyc, maskc
        if level.step_px(t * delta) < cfg.tol:
            converged = True
            break
    return alpha, e, converged, it, np.count_nonzero(mask) / mask.size


def align_direct(i_a, i_b, b=None, cfg=AlignConfig()):
    """Estimate the basis weights aligning ``i_a`` onto ``i_b``.

    Coarse-to-fine forward-additive Gauss-Newton on the masked mean squared
    difference ``i_a(p + flow(p)) - i_b(p)``. The weights therefore describe
    the backward-sampling flow on ``i_b``'s grid; ``homography`` in the result
    maps ``i_a`` coordinates to ``i_b`` coordinates (the inverse of the flow's
    homography).
    """
    i_a = np.asarray(i_a, dtype=np.float64)
    i_b = np.asarray(i_b, dtype=np.float64)
    if i_a.shape != i_b.shape or i_a.ndim != 2:
        raise DimensionMismatch("images must be 2-D and of equal size")
    height, width = i_a.shape
    if b is None:
        b = build(width, height)
    if (b.height, b.width) != i_a.shape:
        raise DimensionMismatch("basis grid does not match the images")
    if cfg.levels > max_levels(width, height):
        raise ValueError(f"at most {max_levels(width, height)} pyramid levels for this size")
    for img in (i_a, i_b):
        if gradient_energy(img) < TEXTURE_EPS:
            raise NoTexture("image gradient energy is below 1e-6")
    if cfg.normalize:
        i_a, i_b = _standardize(i_a), _standardize(i_b)

    pa = pyramid(i_a, cfg.levels)
    pb = pyramid(i_b, cfg.levels)
    alpha0 = np.zeros(NUM_BASES) if cfg.alpha0 is None else np.asarray(cfg.alpha0, float)

    # carry the initial weights down to the coarsest grid
    alpha = alpha0
    cur = b
    for lvl in range(1, cfg.levels):
        nxt = build(pa[lvl].shape[1], pa[lvl].shape[0])
        off = _level_offset(pa[lvl - 1].shape, pa[lvl].shape)
        alpha = transfer_weights(alpha, cur, nxt, 0.5, -off / 2.0)
        cur = nxt

    level_errors = []
    total_iters = 0
    converged = False
    valid = 1.0
    for lvl in range(cfg.levels - 1, -1, -1):
        level = _Level(pa[lvl], pb[lvl])
        alpha, e, converged, its, valid = _gauss_newton(level, alpha, cfg)
        level_errors.append(e)
        total_iters += its
        log.debug("level %d: %d iters, error %.3g", lvl, its, e)
        if lvl > 0:
            coarse = level.basis
            fine = build(pa[lvl - 1].shape[1], pa[lvl - 1].shape[0])
            off = _level_offset(pa[lvl - 1].shape, pa[lvl].shape)
            alpha = transfer_weights(alpha, coarse, fine, 2.0, off)

    finest = _Level(pa[0], pb[0])
    e_final = finest.evaluate(alpha)[0]
    e_start = finest.evaluate(alpha0)[0]
    if not e_final <= e_start:
        alpha, e_final = alpha0, e_start
        valid = float(np.mean(finest.evaluate(alpha0)[4]))

    flow = synthesize(b, alpha)
    homography = invert(flow_to_homography(flow))
    return AlignResult(alpha, homography, e_final, converged, total_iters, valid, level_errors)


def gn_gradient_check(i_a, i_b, b, alpha, h=1e-4):
    """Max relative difference between the analytic gradient ``2 J^T r / n`` and
    central finite differences of the photometric objective.

    The valid-pixel set is frozen to pixels valid at every evaluated point so
    both gradients differentiate the same sum.
    """
    level = _Level(np.asarray(i_a, dtype=np.float64), np.asarray(i_b, dtype=np.float64))
    if (b.width, b.height) != (level.basis.width, level.basis.height):
        raise DimensionMismatch("basis grid does not match the images")
    alpha = np.asarray(alpha, dtype=np.float64)
    _, r, gx, gy, mask = level.evaluate(alpha)
    common = mask.copy()
    steps = []
    for k in range(NUM_BASES):
        e = np.zeros(NUM_BASES)
        e[k] = h
        steps.append(e)
        common &= level.evaluate(alpha + e)[4]
        common &= level.evaluate(alpha - e)[4]
    n = np.count_nonzero(common)
    _, jtr, _, _ = _kernels.normal_equations(gx, gy, level.bx, level.by, r, common)
    analytic = 2.0 * jtr / n
    numeric = np.array([
        (level.evaluate(alpha + e, common)[0] - level.evaluate(alpha - e, common)[0]) / (2 * h)
        for e in steps
    ])
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)
