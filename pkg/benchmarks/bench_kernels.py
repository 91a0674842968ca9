"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the four hot kernels on the shapes the default backbone actually
produces, then (optionally) a full classification training step per backend
in subprocesses, since the backend is fixed at import time.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --end-to-end --repeats 5
"""

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from difl.kernels import pykernels

try:
    from difl.kernels import _cykernels
except ImportError:
    _cykernels = None


def timeit(fn, repeats):
    fn()  # warm up
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def kernel_cases(batch):
    rng = np.random.default_rng(0)
    x1 = rng.normal(size=(batch, 1, 64, 64))
    k1 = rng.normal(size=(8, 1, 3, 3))
    x2 = rng.normal(size=(batch, 8, 31, 31))
    k2 = rng.normal(size=(16, 8, 3, 3))
    g1 = rng.normal(size=(batch, 8, 62, 62))
    g2 = rng.normal(size=(batch, 16, 29, 29))
    p1 = rng.normal(size=(batch, 8, 62, 62))

    def pool_back_inputs(mod):
        _, sw = mod.maxpool2_forward(p1)
        return sw

    return [
        ("conv 1x64x64 -> 8x62x62 fwd",
         lambda m: m.conv2d_forward(x1, k1, 1)),
        ("conv 8x31x31 -> 16x29x29 fwd",
         lambda m: m.conv2d_forward(x2, k2, 1)),
        ("conv 1x64x64 bwd",
         lambda m: m.conv2d_backward(x1, k1, 1, g1)),
        ("conv 8x31x31 bwd",
         lambda m: m.conv2d_backward(x2, k2, 1, g2)),
        ("maxpool 8x62x62 fwd",
         lambda m: m.maxpool2_forward(p1)),
        ("maxpool 8x62x62 bwd",
         lambda m, sw=None: m.maxpool2_backward(
             p1.shape, pool_back_inputs(m), g1[:, :, :31, :31])),
    ]


STEP_SNIPPET = """
import time
import numpy as np
from difl import kernels
from difl.data import SynthConfig
from difl.models import build, default_model_spec
from difl.training import TrainingConfig, classification_step
from difl.data import Batch

spec = default_model_spec()
gen = build(spec.generator, 0)
clf = build(spec.classifier, 1)
rng = np.random.default_rng(0)
batch = Batch(x=rng.normal(size=({batch}, 1, 64, 64)),
              y=(rng.uniform(size={batch}) < 0.5).astype(np.float64),
              d=np.zeros({batch}))
classification_step(gen, clf, batch, 0.05)  # warm up
t0 = time.perf_counter()
for _ in range({steps}):
    classification_step(gen, clf, batch, 0.05)
dt = (time.perf_counter() - t0) / {steps}
print(f"{{kernels.BACKEND}} {{dt:.6f}}")
"""


def run_end_to_end(backend, batch, steps):
    env = dict(os.environ, DIFL_KERNELS=backend)
    code = STEP_SNIPPET.format(batch=batch, steps=steps)
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    name, dt = out.stdout.split()
    assert name == backend, f"expected backend {backend}, got {name}"
    return float(dt)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--end-to-end", action="store_true",
                    help="also time one training step per backend")
    ap.add_argument("--steps", type=int, default=10,
                    help="training steps per end-to-end sample")
    args = ap.parse_args()

    if _cykernels is None:
        print("compiled backend unavailable; only timing numpy")
    print(f"{'kernel':<32s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, fn in kernel_cases(args.batch):
        t_np = timeit(lambda: fn(pykernels), args.repeats)
        if _cykernels is None:
            print(f"{name:<32s} {t_np * 1e3:>8.2f}ms")
            continue
        t_cy = timeit(lambda: fn(_cykernels), args.repeats)
        print(f"{name:<32s} {t_np * 1e3:>8.2f}ms {t_cy * 1e3:>8.2f}ms "
              f"{t_np / t_cy:>7.2f}x")

    if args.end_to_end and _cykernels is not None:
        t_np = run_end_to_end("numpy", args.batch, args.steps)
        t_cy = run_end_to_end("cython", args.batch, args.steps)
        print(f"{'full classification step':<32s} {t_np * 1e3:>8.2f}ms "
              f"{t_cy * 1e3:>8.2f}ms {t_np / t_cy:>7.2f}x")


if __name__ == "__main__":
    main()
