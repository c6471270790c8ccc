"""Time the numba and numpy kernels on identical inputs and check they agree.

    python3 benchmarks/bench_kernels.py [--paths 2048] [--steps 1000] [--repeat 3]

The first numba call of each kernel includes compilation (or a cache load);
it is reported separately and excluded from the timed repeats.
"""

from __future__ import annotations

import argparse
import logging
import statistics
import time

import numpy as np

from neumannlab import _accel, kernels
from neumannlab.geometry import INTERVAL, make_ball, make_interval

logger = logging.getLogger("bench_kernels")


def _cases(paths: int, steps: int, rng: np.random.Generator):
    dt = 1.0 / steps
    iv = make_interval(-1.0, 1.0)
    ball = make_ball([0.0, 0.0], 1.0)
    dB1 = rng.normal(0.0, np.sqrt(dt), (paths, steps, 1))
    dB2 = rng.normal(0.0, np.sqrt(dt), (paths, steps, 2))
    x1 = np.zeros((paths, 1))
    x2 = np.zeros((paths, 2))
    nt, nx = 201, 801
    grid = np.array([0.0, 1.0 / (nt - 1), -2.0, 4.0 / (nx - 1)])
    xs = np.linspace(-2.0, 2.0, nx)
    ftab = np.ascontiguousarray(np.outer(np.exp(-np.linspace(0, 1, nt)), np.cos(np.pi * np.clip(xs, -1, 1))))
    htab = np.ones((nt, 2))
    term = np.cos(np.pi * np.clip(xs, -1, 1))
    x0s = np.linspace(-1.0, 1.0, 10)
    flat = np.ascontiguousarray(dB1[..., 0])
    wd = np.ascontiguousarray(ftab**2)
    U = rng.random((paths, steps))
    return {
        "reflected_paths[interval]": lambda: kernels.reflected_paths(iv.kind, iv.params, x1, dB1)[1],
        "reflected_paths[disc]": lambda: kernels.reflected_paths(ball.kind, ball.params, x2, dB2)[1],
        "penalized_paths[interval,n=32]": lambda: kernels.penalized_paths(iv.kind, iv.params, x1, dB1, 32.0, dt)[1],
        "coupled_gaps[n=8,32,128]": lambda: kernels.coupled_gaps(iv.kind, iv.params, x1, dB1, np.array([8.0, 32.0, 128.0]), dt)[0],
        "bridge_local_time_1d": lambda: kernels.bridge_local_time_1d(-1.0, 1.0, x1[:, 0], flat, dt),
        "skorokhod_local_time_1d": lambda: kernels.skorokhod_local_time_1d(-1.0, 1.0, x1[:, 0], flat, U, dt),
        "bsde_reflected_1d[reflection]": lambda: kernels.bsde_reflected_1d(
            -1.0, 1.0, x0s, flat, 0.0, dt, ftab, htab, term, grid, kernels.REFLECTION),
        "bsde_reflected_1d[projection]": lambda: kernels.bsde_reflected_1d(
            -1.0, 1.0, x0s, flat, 0.0, dt, ftab, htab, term, grid, kernels.PROJECTION),
        "bsde_penalized_1d[n=32]": lambda: kernels.bsde_penalized_1d(
            -1.0, 1.0, x0s, flat, 0.0, dt, 32.0, ftab, htab, term, grid),
        "weighted_functional_1d": lambda: kernels.weighted_functional_1d(
            -1.0, 1.0, x1[:, 0], flat, dt, 1.0, 0.5, wd, wd, grid, kernels.REFLECTION),
    }


def _time(fn, repeat: int) -> tuple[float, np.ndarray]:
    out = None
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts), np.asarray(out)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2048)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if not _accel.HAVE_NUMBA:
        logger.error("numba is not installed; nothing to compare")
        return 1

    cases = _cases(args.paths, args.steps, np.random.default_rng(args.seed))
    print(f"paths={args.paths} steps={args.steps} repeat={args.repeat}")
    print(f"{'kernel':34s} {'first(nb)':>10s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s} {'max|diff|':>10s}")
    worst = 0.0
    for name, fn in cases.items():
        with _accel.use_backend("numba"):
            t0 = time.perf_counter()
            fn()
            first = time.perf_counter() - t0
            t_nb, out_nb = _time(fn, args.repeat)
        with _accel.use_backend("numpy"):
            t_np, out_np = _time(fn, args.repeat)
        diff = float(np.max(np.abs(out_nb - out_np))) if out_nb.size else 0.0
        worst = max(worst, diff)
        print(f"{name:34s} {first:10.3f} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f} {diff:10.2e}")
    print(f"max backend disagreement {worst:.2e}")
    return 0 if worst < 1e-9 else 1


if __name__ == "__main__":
    raise SystemExit(main())
