"""Numba vs numpy timings for the fused training step and the dedup scan.

    python benchmarks/bench_kernels.py [--batch 32] [--dim 8] [--records 2000] [--repeat 20]
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from mmaudit import kernels
from mmaudit.harness.data import SyntheticSpec, gen_synthetic
from mmaudit.harness.model import Model, ModelConfig
from mmaudit.schema.filters import encode_ngrams


def timeit(fn, repeat):
    fn()  # warm-up (and JIT compile on first call)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def bench_step(batch, dim, repeat):
    data = gen_synthetic(SyntheticSpec(n_samples=batch, d_v=dim, d_a=dim, seed=0))
    model = Model(ModelConfig(d_v=dim, d_a=dim, latent=dim), seed=0)
    args = (model.theta, model.offsets, model.cfg.dims, data.Cv, data.Ca, data.y, True, True, 0.2, 0.1, 0.0)
    out = {}
    for backend in ("numpy", "numba"):
        out[backend] = timeit(lambda: kernels.loss_and_grad(*args, backend=backend), repeat)
    g_np, _ = kernels.loss_and_grad(*args, backend="numpy")
    g_nb, _ = kernels.loss_and_grad(*args, backend="numba")
    return out, float(np.max(np.abs(g_np - g_nb)))


def _corpus(n, rng):
    words = ["gaze", "aversion", "pitch", "pause", "smile", "blink", "tremor", "hesitation", "rising", "flat",
             "frown", "nod", "fidget", "steady", "voice", "contact", "laugh", "shrug", "stutter", "calm"]
    lines = []
    for i in range(n):
        if lines and rng.random() < 0.1:
            lines.append(lines[rng.integers(len(lines))])
        else:
            lines.append(" ".join(rng.choice(words, size=12)))
    return lines


def bench_dedup(records, repeat):
    rng = np.random.default_rng(0)
    enc = encode_ngrams(_corpus(records, rng))
    out = {}
    for backend in ("numpy", "numba"):
        out[backend] = timeit(lambda: kernels.greedy_scan(*enc, 0.95, backend=backend), repeat)
    a = kernels.greedy_scan(*enc, 0.95, backend="numpy")
    b = kernels.greedy_scan(*enc, 0.95, backend="numba")
    same = bool(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]))
    return out, same


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--records", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    step, diff = bench_step(args.batch, args.dim, args.repeat)
    print(f"fused step  B={args.batch} d={args.dim}: numpy {step['numpy'] * 1e6:9.1f} us   "
          f"numba {step['numba'] * 1e6:9.1f} us   speedup {step['numpy'] / step['numba']:5.1f}x   "
          f"max |grad diff| {diff:.1e}")
    dd, same = bench_dedup(args.records, max(1, args.repeat // 10))
    print(f"dedup scan  n={args.records}: numpy {dd['numpy'] * 1e3:9.1f} ms   "
          f"numba {dd['numba'] * 1e3:9.1f} ms   speedup {dd['numpy'] / dd['numba']:5.1f}x   "
          f"identical {same}")


if __name__ == "__main__":
    main()
