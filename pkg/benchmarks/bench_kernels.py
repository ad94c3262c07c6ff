"""Compare the numba kernels against the pure-numpy fallback.

Kernel timings run in-process, switching through the ``use_numba`` argument.
The end-to-end timing integrates Burgers and Gray-Scott in two subprocesses,
one with ``GLMQS_DISABLE_JIT=1``.

    python benchmarks/bench_kernels.py [--repeat 5] [--no-end-to-end]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from glmqs import kernels
from glmqs._accel import USE_NUMBA
from glmqs.linear import BandedBackend
from glmqs.problems import BurgersConfig, GrayScottConfig, burgers_system, grayscott_system

END_TO_END = """
import time
from glmqs import make_problem, builtin_tableau, integrate, backend_name
for name, kw, N in (("burgers", {"M": 402}, 200), ("grayscott", {"M": 32}, 40)):
    sys_ = make_problem(name, **kw)
    integrate(builtin_tableau("GLMQS-2"), sys_, N=4)  # compile / warm caches
    t = time.perf_counter()
    integrate(builtin_tableau("GLMQS-2"), sys_, N=N)
    print(f"{name} {backend_name()} {time.perf_counter() - t:.4f}")
"""


def best_of(fn, repeat, number):
    fn()  # warm-up (triggers compilation)
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases():
    rng = np.random.default_rng(0)
    bcfg = BurgersConfig(M=2002)
    u = rng.uniform(-1, 1, bcfg.M - 2)
    gcfg = GrayScottConfig(M=64)
    y = grayscott_system(gcfg).y0
    gargs = (gcfg.M, gcfg.d1, gcfg.d2, gcfg.F, gcfg.kappa, gcfg.k)
    J = burgers_system(bcfg).jac(u)
    b = rng.standard_normal(u.size)

    def banded_solve(flag):
        be = BandedBackend(1, 1, use_numba=flag)
        be.factor(J, 0.01)
        return be.solve(b)

    return [
        (f"burgers rhs (n={u.size})", lambda f: kernels.burgers_rhs(u, bcfg.d, bcfg.k, use_numba=f)),
        (f"burgers jac (n={u.size})", lambda f: kernels.burgers_jac(u, bcfg.d, bcfg.k, use_numba=f)),
        (f"gray-scott rhs (n={y.size})", lambda f: kernels.grayscott_rhs(y, *gargs, use_numba=f)),
        (f"banded LU factor+solve (n={u.size})", banded_solve),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=200)
    parser.add_argument("--no-end-to-end", action="store_true")
    args = parser.parse_args(argv)

    if not USE_NUMBA:
        print("numba unavailable or disabled; only the numpy column is meaningful")
    print(f"{'kernel':40s} {'numpy [us]':>12s} {'numba [us]':>12s} {'speedup':>8s}")
    for label, fn in kernel_cases():
        t_np = best_of(lambda: fn(False), args.repeat, args.number)
        t_nb = best_of(lambda: fn(True), args.repeat, args.number) if USE_NUMBA else float("nan")
        print(f"{label:40s} {t_np * 1e6:12.1f} {t_nb * 1e6:12.1f} {t_np / t_nb:8.2f}")

    if args.no_end_to_end:
        return
    print("\nend-to-end GLMQS-2 integration [s]")
    for flag in ("0", "1"):
        env = dict(os.environ, GLMQS_DISABLE_JIT=flag)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
        print(out.stdout.rstrip())


if __name__ == "__main__":
    main()
