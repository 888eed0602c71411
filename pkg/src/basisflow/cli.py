"""``basisflow`` command line: bases, fit, align, synth, eval, project, loss.

Exit codes: 0 success, 1 usage error, 2 runtime or data error, 3 non-convergence
(including texture-free inputs to ``align``).
"""

import argparse
import concurrent.futures
import csv
import json
import os
import sys

import numpy as np

from . import bases as bases_mod
from . import bench, io, losses, subspace
from .errors import BasisFlowError, NoTexture
from .fitting import AlignConfig, RobustConfig, align_direct, fit_robust, max_levels
from .geometry import Homography, homography_to_flow, warp

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONV = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    return w, h


def _reg(text):
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError("reg must be >= 0")
    return v


def _mkdir(path):
    os.makedirs(path, exist_ok=True)
    return path


# ------------------------------------------------------------------ commands


def cmd_bases(args):
    if args.width < 3 or args.height < 3:
        raise UsageError("width and height must be >= 3")
    b = bases_mod.build(args.width, args.height)
    out = _mkdir(args.out)
    for k in range(bases_mod.NUM_BASES):
        flow = bases_mod.synthesize(b, np.eye(bases_mod.NUM_BASES)[k])
        io.write_flo(os.path.join(out, f"basis_{k + 1}.flo"), flow)
        io.write_ppm(os.path.join(out, f"basis_{k + 1}.ppm"), io.colorize_flow(flow))
    ortho = float(np.max(np.abs(b.q.T @ b.q - np.eye(bases_mod.NUM_BASES))))
    io.write_json(os.path.join(out, "meta.json"), {
        "width": b.width,
        "height": b.height,
        "convention": b.convention,
        "r": b.r.tolist(),
        "norms": b.norms.tolist(),
        "units": "pixels",
    })
    print(f"orthonormality max|Q^T Q - I| = {ortho:.3e} ({'ok' if ortho < 1e-10 else 'FAIL'})")
    return EXIT_OK


def cmd_fit(args):
    flow = io.read_flo(args.flow)
    w, h = args.bases_size
    if flow.shape[:2] != (h, w):
        print(f"error: flow is {flow.shape[1]}x{flow.shape[0]}, bases are {w}x{h}",
              file=sys.stderr)
        return EXIT_DATA
    b = bases_mod.build(w, h)
    status = EXIT_OK
    if args.robust:
        fit = fit_robust(b, flow, RobustConfig(loss=args.loss, delta=args.delta,
                                               max_iters=args.max_iters))
        alpha = fit.alpha
        _, residual = _relative_residual(b, flow, alpha)
        out_dir = os.path.dirname(os.path.abspath(args.out))
        io.write_pgm(os.path.join(out_dir, "weightmap.pgm"), fit.weights)
        extra = dict(robust=True, loss=args.loss, delta=args.delta,
                     converged=fit.converged, iterations=fit.iterations)
        if not fit.converged:
            status = EXIT_NONCONV
    else:
        alpha, residual = bases_mod.analyze(b, flow)
        extra = dict(robust=False)
    io.write_json(args.out, io.weights_doc(w, h, alpha, residual, b.convention, **extra))
    if status == EXIT_NONCONV:
        print("error: IRLS did not converge", file=sys.stderr)
    return status


def _relative_residual(b, flow, alpha):
    vec = bases_mod.flow_to_vector(b, flow)
    return alpha, float(np.linalg.norm(vec - b.q @ alpha) / max(np.linalg.norm(vec), 1e-12))


def cmd_align(args):
    i_a = io.read_pgm(args.a)
    i_b = io.read_pgm(args.b)
    if i_a.shape != i_b.shape:
        print("error: images differ in size", file=sys.stderr)
        return EXIT_DATA
    h, w = i_a.shape
    levels = args.levels if args.levels is not None else max(1, min(4, max_levels(w, h)))
    cfg = AlignConfig(levels=levels, iters=args.iters, normalize=args.normalized)
    try:
        res = align_direct(i_a, i_b, cfg=cfg)
    except NoTexture as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV

    b = bases_mod.build(w, h)
    flow = bases_mod.synthesize(b, res.alpha)
    out = _mkdir(args.out)
    io.write_json(os.path.join(out, "homography.json"),
                  dict(io.homography_doc(res.homography), maps="a_to_b"))
    _, residual = _relative_residual(b, flow, res.alpha)
    io.write_json(os.path.join(out, "weights.json"),
                  io.weights_doc(w, h, res.alpha, res.error, b.convention,
                                 residual_kind="photometric_mse"))
    io.write_flo(os.path.join(out, "flow.flo"), flow)
    warped, mask = warp(i_a, flow)
    warped = np.where(mask, warped, 0.0)
    io.write_pgm(os.path.join(out, "warped.pgm"), warped)
    io.write_pgm(os.path.join(out, "diff.pgm"), np.where(mask, np.abs(warped - i_b), 0.0))

    flow_ba = homography_to_flow(res.homography, w, h)
    report = {
        "converged": bool(res.converged),
        "iterations": int(res.iterations),
        "levels": levels,
        "photometric_mse": float(res.error),
        "valid_fraction": float(res.valid_fraction),
        "level_errors": [float(e) for e in res.level_errors],
    }
    try:
        report["losses"] = losses.total_objective(i_a, i_b, "identity", flow, flow_ba).to_dict()
    except BasisFlowError as exc:
        report["losses"] = {"error": type(exc).__name__}
    io.write_json(os.path.join(out, "report.json"), report)
    if not res.converged:
        print("error: alignment did not converge (outputs written)", file=sys.stderr)
        return EXIT_NONCONV
    return EXIT_OK


def _load_specs(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"spec is not valid JSON: {exc}") from exc
    if isinstance(doc, dict) and "specs" in doc:
        doc = doc["specs"]
    if isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list) or not doc:
        raise ValueError("spec must be an object, a list of objects or {\"specs\": [...]}")
    specs = []
    for d in doc:
        if not isinstance(d, dict):
            raise ValueError("each spec must be an object")
        try:
            specs.append(bench.BenchSpec.from_dict(d))
        except TypeError as exc:
            raise ValueError(f"malformed spec: {exc}") from exc
    return specs


def _sample_dir(root, spec_id, idx):
    return os.path.join(root, f"{spec_id}_{idx:04d}")


def cmd_synth(args):
    specs = _load_specs(args.spec)
    out = _mkdir(args.out)
    for spec in specs:
        for idx in range(spec.n_samples):
            s = bench.gen_pair(bench.make_base(spec, idx), spec, idx)
            d = _mkdir(_sample_dir(out, spec.spec_id, idx))
            io.write_pgm(os.path.join(d, "a.pgm"), s.i_a)
            io.write_pgm(os.path.join(d, "b.pgm"), s.i_b)
            io.write_json(os.path.join(d, "gt.json"), {
                "matrix": s.gt.to_list(),
                "maps": "a_to_b",
                "spec_id": spec.spec_id,
                "sample_idx": idx,
                "blocks": [[int(x0), int(y0), int(bw), int(bh), float(tx), float(ty)]
                           for x0, y0, bw, bh, tx, ty in s.blocks],
                "spec": spec.to_dict(),
            })
            io.write_json(os.path.join(d, "points.json"), {
                "src": s.src_points.tolist(),
                "dst": s.dst_points.tolist(),
            })
    return EXIT_OK


def _load_sample(d):
    i_a = io.read_pgm(os.path.join(d, "a.pgm"))
    i_b = io.read_pgm(os.path.join(d, "b.pgm"))
    gt = io.read_json(os.path.join(d, "gt.json"))
    pts = io.read_json(os.path.join(d, "points.json"))
    blocks = [tuple(bl) for bl in gt.get("blocks", [])]
    mask = None
    if blocks:
        mask = np.zeros(i_a.shape, dtype=bool)
        for x0, y0, bw, bh, _, _ in blocks:
            mask[y0:y0 + bh, x0:x0 + bw] = True
    sample = bench.BenchSample(i_a, i_b, Homography(np.array(gt["matrix"])),
                               np.array(pts["src"], dtype=np.float64),
                               np.array(pts["dst"], dtype=np.float64), mask, blocks)
    return sample, gt.get("spec_id", "?"), int(gt.get("sample_idx", 0))


def _eval_one(d, method):
    sample, spec_id, idx = _load_sample(d)
    return bench.evaluate_sample(sample, method, spec_id, idx)


def cmd_eval(args):
    dirs = sorted(os.path.join(args.dir, n) for n in os.listdir(args.dir)
                  if os.path.isfile(os.path.join(args.dir, n, "gt.json")))
    if not dirs:
        print(f"error: no samples found in {args.dir}", file=sys.stderr)
        return EXIT_DATA
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_eval_one, dirs, [args.method] * len(dirs)))
    else:
        results = [_eval_one(d, args.method) for d in dirs]
    rows, point_errs = [], []
    for r, e in results:
        rows.extend(r)
        point_errs.extend(e.get(args.method, []))
    rows.sort(key=lambda r: (r["spec_id"], r["sample_idx"], r["method"]))
    bench.write_results_csv(args.out, rows)
    if args.curve:
        bench.write_curve_csv(args.curve, bench.robustness_curve(point_errs))
    for r in bench.summary_rows(rows):
        print(f"{r['spec_id']} {r['method']}: mean error {r['mean_error_px']:.4f} px")
    return EXIT_OK


def cmd_project(args):
    feats = io.read_fmap(args.features)
    basis = io.read_fmap(args.basis)
    h, w, _ = feats.shape
    if basis.shape[:2] != (h, w):
        print("error: basis and features differ in spatial size", file=sys.stderr)
        return EXIT_DATA
    projected = subspace.lrr_project(feats, basis, reg=args.reg)
    io.write_fmap(args.out, projected)
    before = subspace.pca_energy(feats)
    after = subspace.pca_energy(projected)
    if args.energy:
        with open(args.energy, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("index", "energy_before", "energy_after"))
            for k in range(max(before.size, after.size)):
                row = [k + 1]
                for prof in (before, after):
                    row.append(repr(float(prof[k])) if k < prof.size else "nan")
                wr.writerow(row)
    for name, prof in (("before", before), ("after", after)):
        vals = ["n/a" if prof.size == 0 else f"{subspace.npc(prof, t):.4f}" for t in (0.5, 0.6)]
        print(f"NPC {name}: 50% -> {vals[0]}, 60% -> {vals[1]}")
    return EXIT_OK


def cmd_loss(args):
    i_a = io.read_pgm(args.a)
    i_b = io.read_pgm(args.b)
    flow_ab = io.read_flo(args.flow_ab)
    flow_ba = io.read_flo(args.flow_ba) if args.flow_ba else -flow_ab
    rep = losses.total_objective(i_a, i_b, args.transform, flow_ab, flow_ba,
                                 lam=args.lam, mu=args.mu)
    doc = dict(rep.to_dict(), transform=args.transform)
    if args.out:
        io.write_json(args.out, doc)
    else:
        sys.stdout.write(io.dumps_json(doc))
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="basisflow", description="Homography flow bases toolkit.",
                formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("bases", help="write the 8 flow bases for a grid", formatter_class=fmt)
    s.add_argument("--width", type=int, required=True, help="grid width in pixels (>= 3)")
    s.add_argument("--height", type=int, required=True, help="grid height in pixels (>= 3)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_bases)

    s = sub.add_parser("fit", help="fit basis weights to a dense flow", formatter_class=fmt)
    s.add_argument("--flow", required=True, help="input .flo file")
    s.add_argument("--bases-size", type=_size, required=True, help="basis grid as WxH")
    s.add_argument("--out", required=True, help="output weights JSON")
    s.add_argument("--robust", action="store_true", help="use IRLS and write weightmap.pgm")
    s.add_argument("--loss", choices=("huber", "welsch"), default="huber", help="robust loss")
    s.add_argument("--delta", type=float, default=1.0, help="robust scale in pixels")
    s.add_argument("--max-iters", type=int, default=50, help="IRLS iteration cap")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("align", help="align two grayscale images", formatter_class=fmt)
    s.add_argument("--a", required=True, help="source image (PGM)")
    s.add_argument("--b", required=True, help="target image (PGM)")
    s.add_argument("--levels", type=int, default=None,
                   help="pyramid levels (default: min(4, what the size allows))")
    s.add_argument("--iters", type=int, default=30, help="Gauss-Newton iterations per level")
    s.add_argument("--normalized", action="store_true",
                   help="standardise both images to zero mean, unit variance")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("synth", help="generate benchmark samples", formatter_class=fmt)
    s.add_argument("--spec", required=True, help="spec JSON (object, list or {'specs': [...]})")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("eval", help="evaluate an estimator on synth output", formatter_class=fmt)
    s.add_argument("--dir", required=True, help="directory written by synth")
    s.add_argument("--method", choices=bench.METHODS, default="align", help="estimator")
    s.add_argument("--out", required=True, help="results CSV")
    s.add_argument("--curve", default=None, help="robustness curve CSV")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("project", help="low-rank projection of a feature map",
                       formatter_class=fmt)
    s.add_argument("--features", required=True, help="input FMAP")
    s.add_argument("--basis", required=True, help="basis FMAP with K channels")
    s.add_argument("--reg", type=_reg, default=None,
                   help="ridge term; 'auto' or omitted uses 1e-8 * trace(V^T V) / K")
    s.add_argument("--out", required=True, help="projected FMAP")
    s.add_argument("--energy", default=None, help="cumulative energy CSV")
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("loss", help="evaluate the unsupervised objective", formatter_class=fmt)
    s.add_argument("--a", required=True, help="image a (PGM)")
    s.add_argument("--b", required=True, help="image b (PGM)")
    s.add_argument("--flow-ab", required=True, help="flow bringing a onto b (.flo)")
    s.add_argument("--flow-ba", default=None, help="flow bringing b onto a (default: -flow-ab)")
    s.add_argument("--transform", choices=sorted(losses.TRANSFORMS), default="identity",
                   help="feature transform")
    s.add_argument("--lambda", dest="lam", type=float, default=losses.LAMBDA,
                   help="feature identity weight")
    s.add_argument("--mu", type=float, default=losses.MU, help="inverse consistency weight")
    s.add_argument("--out", default=None, help="report JSON (default: stdout)")
    s.set_defaults(func=cmd_loss)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"basisflow {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BasisFlowError, ValueError, OSError) as exc:
        print(f"basisflow {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
