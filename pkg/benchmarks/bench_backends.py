"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_backends.py [--repeat 5]

Prints one row per workload with the best-of-``repeat`` time for each
backend and the speedup.  Without the compiled extension only the python
column is filled.
"""
import argparse
import timeit

import numpy as np

from quadprior import kernels
from quadprior.imagecore import gaussian_kernel
from quadprior.prior import extract_prior
from quadprior.synth import make_rng, synth_image
from quadprior.toymodel import ConvNet, TrainConfig, train_toy


def workloads():
    rng = np.random.default_rng(0)
    rows = rng.random((3 * 256, 256))
    taps = gaussian_kernel(2.0, 0).taps
    x = rng.standard_normal((8, 32, 32, 32))
    cols = kernels.im2col(x, 3, 1, 1)
    img = synth_image(make_rng(0, "bench"), 128)
    small = TrainConfig(steps=5, batch=4, size=32, widths=(16, 16, 16))
    flat = rng.random(128 * 128 * 3)

    def train():
        train_toy(small, net=ConvNet(widths=small.widths))

    # each entry looks kernels up at call time so set_backend takes effect
    return [
        ("correlate_rows 768x256 r=6", lambda: kernels.correlate_rows(rows, taps)),
        ("im2col 8x32x32x32 k3", lambda: kernels.im2col(x, 3, 1, 1)),
        ("col2im 8x32x32x32 k3", lambda: kernels.col2im(cols, x.shape, 3, 1, 1)),
        ("counter_uniform 1e6", lambda: kernels.counter_uniform(1_000_000, 12345)),
        ("gauss_poisson 128x128x3", lambda: kernels.gauss_poisson(flat, 200.0, 0.02, 7)),
        ("extract_prior 128x128", lambda: extract_prior(img)),
        ("train_toy 5 steps", train),
    ]


def best_time(fn, repeat):
    fn()  # warm up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    prev = kernels.BACKEND
    results = {}
    try:
        for b in backends:
            kernels.set_backend(b)
            for name, fn in workloads():
                results.setdefault(name, {})[b] = best_time(fn, args.repeat)
    finally:
        kernels.set_backend(prev)

    print(f"{'workload':<30}{'native ms':>12}{'python ms':>12}{'speedup':>10}")
    for name, t in results.items():
        nat, py = t.get("native"), t["python"]
        nat_s = f"{nat * 1e3:12.2f}" if nat is not None else f"{'-':>12}"
        sp = f"{py / nat:9.2f}x" if nat else f"{'-':>10}"
        print(f"{name:<30}{nat_s}{py * 1e3:12.2f}{sp}")


if __name__ == "__main__":
    main()
