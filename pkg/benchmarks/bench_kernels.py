"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--L 200] [--repeat 20]

Each kernel is called once before timing so compilation is excluded. Outputs
are also compared, so a run doubles as a backend-consistency check.
"""
import argparse
import time

import numpy as np

from pgg_act import kernels
from pgg_act._accel import HAVE_NUMBA
from pgg_act.lattice import build_lattice


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(L, rng):
    lat = build_lattice(L)
    n = lat.N
    s = rng.integers(0, 2, n).astype(np.int8)
    rew, val = rng.normal(size=(8, n)), rng.normal(size=(8, n))
    boot = rng.normal(size=n)
    qs, qa = rng.integers(0, 10, n), rng.integers(0, 2, n)
    qr, qn = rng.normal(size=n), rng.integers(0, 10, n)
    q0 = rng.normal(size=(n, 10, 2))
    focal, slot, u = rng.integers(0, n, n), rng.integers(0, 4, n), rng.random(n)
    return {
        "payoffs": (lambda f: f(s, lat.groups, 4.0), kernels.payoffs_numba, kernels.payoffs_numpy),
        "neighbor_counts": (lambda f: f(s, lat.neighbors), kernels.neighbor_counts_numba,
                            kernels.neighbor_counts_numpy),
        "gae": (lambda f: f(rew, val, boot, 0.96, 0.95), kernels.gae_numba, kernels.gae_numpy),
        "q_update": (lambda f: (f(q := q0.copy(), qs, qa, qr, qn, 0.1, 0.9), q)[1],
                     kernels.q_update_numba, kernels.q_update_numpy),
        "fermi_async": (lambda f: f(s, lat.groups, lat.neighbors, focal, slot, u, 4.0, 0.5),
                        kernels.fermi_async_numba, kernels.fermi_async_python),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--L", type=int, default=200)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"L={args.L} (N={args.L ** 2}), best of {args.repeat}")
    print(f"{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  match")
    for name, (call, fast, slow) in cases(args.L, rng).items():
        repeat = 1 if name == "fermi_async" else args.repeat
        t_fast = best_time(lambda: call(fast), args.repeat)
        t_slow = best_time(lambda: call(slow), repeat)
        same = np.array_equal(call(fast), call(slow))
        print(f"{name:<16}{t_fast * 1e3:>10.3f}{t_slow * 1e3:>10.3f}{t_slow / t_fast:>8.1f}x  {same}")


if __name__ == "__main__":
    main()
