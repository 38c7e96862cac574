"""Benchmark the compiled kernel core against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Reports per-kernel timings on workloads shaped like the real pipeline:
the 3x3 convolution layers of the default classifier and the per-epoch
tapered spectral transform (224 windows x 300 samples x 224 frequencies).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sleepspec.kernels import _pure

try:
    from sleepspec.kernels import _core
except ImportError:
    _core = None


def timeit(fn, repeats: int) -> float:
    fn()  # warm up
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_conv(impl, batch=8, channels=3, out_channels=8, hw=224, repeats=3):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, channels, hw, hw)).astype(np.float32)
    w = rng.standard_normal((out_channels, channels, 3, 3)).astype(np.float32)
    b = np.zeros(out_channels, dtype=np.float32)
    fwd = timeit(lambda: impl.conv3x3_forward(x, w, b), repeats)
    y = impl.conv3x3_forward(x, w, b)
    bwd = timeit(lambda: impl.conv3x3_backward(x, w, y), repeats)
    return fwd, bwd


def bench_pool(impl, batch=8, channels=8, hw=224, repeats=3):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((batch, channels, hw, hw)).astype(np.float32)
    fwd = timeit(lambda: impl.maxpool2x2_forward(x), repeats)
    y, idx = impl.maxpool2x2_forward(x)
    bwd = timeit(lambda: impl.maxpool2x2_backward(y, idx, hw, hw), repeats)
    return fwd, bwd


def bench_spectra(impl, windows=224, n=300, freqs=224, tapers=5, repeats=3):
    rng = np.random.default_rng(2)
    segments = np.ascontiguousarray(rng.standard_normal((windows, n)))
    taps = np.ascontiguousarray(rng.standard_normal((tapers, n)))
    f = np.linspace(0.0, 30.0, freqs)
    return timeit(lambda: impl.tapered_spectra(segments, taps, f, 100.0), repeats)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    backends = [("pure", _pure)]
    if _core is not None:
        backends.append(("compiled", _core))
    else:
        print("note: compiled core not built; benchmarking the fallback only")

    results: dict[str, dict[str, float]] = {}
    for name, impl in backends:
        conv_f, conv_b = bench_conv(impl, repeats=args.repeats)
        pool_f, pool_b = bench_pool(impl, repeats=args.repeats)
        spectra = bench_spectra(impl, repeats=args.repeats)
        results[name] = {
            "conv3x3 forward (8x3x224x224 -> 8ch)": conv_f,
            "conv3x3 backward": conv_b,
            "maxpool2x2 forward (8x8x224x224)": pool_f,
            "maxpool2x2 backward": pool_b,
            "tapered_spectra (224 windows, 224 freqs)": spectra,
        }

    kernels = list(next(iter(results.values())))
    width = max(len(k) for k in kernels)
    header = f"{'kernel':<{width}}" + "".join(f"{n:>12}" for n in results)
    if len(results) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for kernel in kernels:
        row = f"{kernel:<{width}}"
        for name in results:
            row += f"{results[name][kernel] * 1e3:>10.2f}ms"
        if len(results) == 2:
            ratio = results["pure"][kernel] / results["compiled"][kernel]
            row += f"{ratio:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
