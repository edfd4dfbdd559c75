"""Compare the numba kernels with their numpy fallbacks.

Run with ``python benchmarks/bench_kernels.py``. Both paths are timed in
the same process (the ``use_numba`` argument overrides the environment
flag), after a warm-up call that triggers compilation.
"""

import argparse
import time

import numpy as np

from klquant._accel import HAVE_NUMBA
from klquant.eigensolver import solve_eigen
from klquant.kernels import fbm
from klquant.nystrom import assemble_symmetrized, trapezoidal_rule
from klquant.quantizer import nearest_codeword


def best_of(f, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = f()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_eigen(n, repeat):
    kern = fbm(0.7)
    m = assemble_symmetrized(kern, trapezoidal_rule(1.0, n))
    solve_eigen(m[:8, :8], use_numba=True)  # compile
    t_nb, (v_nb, _) = best_of(lambda: solve_eigen(m, use_numba=True), repeat)
    t_np, (v_np, _) = best_of(lambda: solve_eigen(m, use_numba=False), repeat)
    gap = float(np.max(np.abs(v_nb - v_np)))
    return t_nb, t_np, gap


def bench_assign(n_samples, n_codes, d, repeat):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n_samples, d))
    c = rng.standard_normal((n_codes, d))
    nearest_codeword(x[:10], c, use_numba=True)
    t_nb, (i_nb, _) = best_of(lambda: nearest_codeword(x, c, use_numba=True), repeat)
    t_np, (i_np, _) = best_of(lambda: nearest_codeword(x, c, use_numba=False), repeat)
    return t_nb, t_np, int(np.count_nonzero(i_nb != i_np))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba not installed; nothing to compare")
        return
    print(f"{'kernel':<28}{'numba [s]':>12}{'numpy [s]':>12}{'speed-up':>10}  check")
    for n in (128, 256, 512):
        t_nb, t_np, gap = bench_eigen(n, args.repeat)
        print(f"{'eigensolver n=' + str(n):<28}{t_nb:12.4f}{t_np:12.4f}{t_np / t_nb:10.1f}  max|dlambda|={gap:.1e}")
    for n_codes, d in ((20, 3), (100, 4)):
        t_nb, t_np, diff = bench_assign(200_000, n_codes, d, args.repeat)
        label = f"assign N={n_codes} d={d}"
        print(f"{label:<28}{t_nb:12.4f}{t_np:12.4f}{t_np / t_nb:10.1f}  mismatches={diff}")


if __name__ == "__main__":
    main()
