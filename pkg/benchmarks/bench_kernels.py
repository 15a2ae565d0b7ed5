"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints per-kernel wall times (best of N, milliseconds) for both paths at the
shapes used by the growth-ODE and 2D Poisson encoders, then one MultiAuto
training epoch under each path.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from madonet import _kernels
from madonet.model import Architecture, MultiAutoModel, OperatorData, TrainConfig, train
from madonet.stochastic import SensorGrid

CASES = [
    ("conv1d B256 C1->8 L25 K3", "1d", (256, 1, 25), (8, 1, 3)),
    ("conv1d B256 C8->16 L23 K3", "1d", (256, 8, 23), (16, 8, 3)),
    ("conv2d B256 C1->8 15x15 K3", "2d", (256, 1, 15, 15), (8, 1, 3, 3)),
    ("conv2d B256 C8->16 13x13 K3", "2d", (256, 8, 13, 13), (16, 8, 3, 3)),
]


def best_of(fn, repeat):
    fn()  # warm-up (and numba compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * min(times)


def kernel_rows(kern, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for label, kind, xs, ws in CASES:
        x, w = rng.normal(size=xs), rng.normal(size=ws)
        if kind == "1d":
            y = kern.conv1d_forward(x, w, 1)
            gy = rng.normal(size=y.shape)
            fns = (
                lambda: kern.conv1d_forward(x, w, 1),
                lambda: kern.conv1d_grad_kernel(gy, x, ws[2], 1),
                lambda: kern.conv1d_grad_input(gy, w, xs[2], 1),
            )
        else:
            y = kern.conv2d_forward(x, w, 1)
            gy = rng.normal(size=y.shape)
            fns = (
                lambda: kern.conv2d_forward(x, w, 1),
                lambda: kern.conv2d_grad_kernel(gy, x, ws[2], ws[3], 1),
                lambda: kern.conv2d_grad_input(gy, w, xs[2], xs[3], 1),
            )
        rows.append((label, [best_of(f, repeat) for f in fns]))
    data, pts, bw = rng.normal(size=(900, 4)), rng.normal(size=(3000, 4)), np.full(4, 0.3)
    rows.append(("kde eval 3000 pts x 900 latents", [best_of(lambda: kern.gauss_kde_eval(pts, data, bw), repeat)]))
    return rows


def epoch_time(repeat):
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 25)
    k = rng.normal(size=(1024, 25))
    grid = SensorGrid.line(t)
    data = OperatorData(k, np.cumsum(k, axis=1) / 25, grid, grid)
    model = MultiAutoModel(Architecture(input_shape=(25,), latent=4, p=60), 0)
    model.fit_scaling(data)
    return best_of(lambda: train(model, data, TrainConfig(epochs=1, batch_size=64)), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.numba_kernels is None:
        raise SystemExit("numba is not importable; nothing to compare")
    paths = {"numba": _kernels.numba_kernels, "numpy": _kernels.numpy_kernels}
    results = {name: kernel_rows(k, args.repeat) for name, k in paths.items()}
    print(f"{'kernel':34s} {'numba ms (fwd/gk/gx)':>24s} {'numpy ms (fwd/gk/gx)':>24s}")
    for (label, nb), (_, npy) in zip(results["numba"], results["numpy"]):
        fmt = lambda v: " / ".join(f"{x:.2f}" for x in v)  # noqa: E731
        print(f"{label:34s} {fmt(nb):>24s} {fmt(npy):>24s}")
    saved = _kernels.active
    try:
        for name, kern in paths.items():
            _kernels.active = kern
            print(f"one training epoch (1024 x 25 sensors, batch 64), {name}: {epoch_time(max(1, args.repeat // 2)):.0f} ms")
    finally:
        _kernels.active = saved


if __name__ == "__main__":
    main()
