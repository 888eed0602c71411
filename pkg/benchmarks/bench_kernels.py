"""Time the numba kernels against the numpy fallback on a 576x320 grid.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one full ``align_direct`` call with each backend (run in a
subprocess so the environment flag takes effect at import time).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from basisflow import _kernels as k
from basisflow.bases import build

W, H = 576, 320


def timeit(fn, repeat):
    fn()  # warm-up (and JIT compile)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


ALIGN_SNIPPET = """
import time
from basisflow import BACKEND
from basisflow.bench import category_spec, gen_pair, make_base
from basisflow.fitting import align_direct
spec = category_spec("RE", seed=1)
s = gen_pair(make_base(spec), spec)
align_direct(s.i_a, s.i_b)
t0 = time.perf_counter()
align_direct(s.i_a, s.i_b)
print(BACKEND, time.perf_counter() - t0)
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not k.USE_NUMBA:
        sys.exit("numba backend disabled; unset BASISFLOW_NO_NUMBA to compare")

    rng = np.random.default_rng(0)
    img = rng.random((H, W))
    sx = np.tile(np.arange(W, dtype=float), H) + rng.normal(0, 3, H * W)
    sy = np.repeat(np.arange(H, dtype=float), W) + rng.normal(0, 3, H * W)
    bx, by = build(W, H).pixel_design()
    gx, gy, r = rng.normal(size=(3, H * W))
    mask = rng.random(H * W) > 0.05

    cases = [
        ("bilinear_sample", lambda f: f(img, sx, sy),
         k.bilinear_sample_np, k.bilinear_sample_nb),
        ("bilinear_sample_grad", lambda f: f(img, sx, sy),
         k.bilinear_sample_grad_np, k.bilinear_sample_grad_nb),
        ("normal_equations", lambda f: f(gx, gy, bx, by, r, mask),
         k.normal_equations_np, k.normal_equations_nb),
        ("downsample2", lambda f: f(img), k.downsample2_np, k.downsample2_nb),
    ]
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call, f_np, f_nb in cases:
        t_np = timeit(lambda: call(f_np), args.repeat)
        t_nb = timeit(lambda: call(f_nb), args.repeat)
        print(f"{name:<22}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{t_np / t_nb:>8.1f}x")

    print("\nalign_direct, one RE sample at 576x320:")
    for flag in ("0", "1"):
        env = dict(os.environ, BASISFLOW_NO_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", ALIGN_SNIPPET], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:<6} {float(out[1]):.3f} s")


if __name__ == "__main__":
    main()
