"""Time each hot kernel under the numpy and numba backends.

    python benchmarks/bench_kernels.py [--repeat 20] [--scale 1]

The first numba call (JIT compile) is excluded from the timings.
"""
import argparse
import time

import numpy as np

from slt import kernels


def cases(scale, rng):
    B, C, H = 8 * scale, 8, 16
    x = (rng.random((B, C, H, H)) < 0.2).astype(np.float32)
    cols = kernels.im2col(x, 3, 3, 1, 1)
    inputs = rng.normal(0.5, 1.0, size=(8, 16384 * scale)).astype(np.float32)
    u, s = kernels.lif_forward(inputs, 0.99, 1.0, 1.0, 0.0)[:2]
    g = rng.normal(size=inputs.shape).astype(np.float32)
    xd = (rng.random((64 * scale, 512)) < 0.2).astype(np.float32)
    md = (rng.random((256, 512)) < 0.5).astype(np.float32)
    mc = (rng.random((16, C, 3, 3)) < 0.5).astype(np.float32)
    n_ev = 20000 * scale
    ev = (np.sort(rng.integers(0, 10**6, n_ev)), rng.integers(0, 32, n_ev), rng.integers(0, 32, n_ev), rng.integers(0, 2, n_ev))
    return {
        "im2col": lambda: kernels.im2col(x, 3, 3, 1, 1),
        "col2im": lambda: kernels.col2im(cols, x.shape, 3, 3, 1, 1),
        "lif_forward": lambda: kernels.lif_forward(inputs, 0.99, 1.0, 1.0, 0.0),
        "lif_backward": lambda: kernels.lif_backward(g, u, s, 0.99, 1.0, 1.0, 0.0, 1.0),
        "synops_dense": lambda: kernels.synops_dense(xd, md),
        "synops_conv": lambda: kernels.synops_conv(x, mc, 1, 1),
        "bin_events": lambda: kernels.bin_events(*ev, 4, 32, 32),
    }


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--scale", type=int, default=1)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    results = {}
    for name in backends:
        with kernels.use_backend(name):
            for kernel, fn in cases(args.scale, np.random.default_rng(0)).items():
                results.setdefault(kernel, {})[name] = best_time(fn, args.repeat)
    print(f"{'kernel':<14}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for kernel, row in results.items():
        line = f"{kernel:<14}" + "".join(f"{row[b] * 1e3:>12.3f}" for b in backends)
        if "numba" in row:
            line += f"{row['numpy'] / row['numba']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
