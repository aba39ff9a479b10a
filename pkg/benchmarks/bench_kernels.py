"""Compare the numba and numpy digest backends.

    python3 benchmarks/bench_kernels.py [--rows N] [--attempts N] [--skip-end-to-end]

Kernel timings call both backends in-process. The end-to-end timing builds a
PSP chain in a subprocess per backend, because the backend is chosen from
SPENDCHAIN_DISABLE_NUMBA at import time.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from spendchain import _kernels as K

END_TO_END = """
import time
from fractions import Fraction
from spendchain import COIN, ConsensusRule, RuleKind, Strategy, run_chain_build
from spendchain.strategies import funding_allocations
fpc = Fraction(1, 10)
s = Strategy.self_spend(50 * COIN, fpc, 1)
rule = ConsensusRule(RuleKind.PSP, {D})
args = dict(genesis=funding_allocations(1, s, fpc, 2), reward=50 * COIN, fpc=fpc, mode="{mode}")
run_chain_build(rule, s, 8, 1, 0, **args)  # warm-up, includes JIT compilation
t = time.perf_counter()
run_chain_build(rule, s, {L}, {trials}, 1, **args)
print((time.perf_counter() - t) / ({L} * {trials}) * 1e6)
"""


def best_of(fn, repeat=3):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_digest_rows(n_rows):
    rows = np.random.default_rng(0).integers(0, 1 << 64, size=(n_rows, 7), dtype=np.uint64)
    out = {"numpy": best_of(lambda: K.digest_rows_numpy(rows))}
    if K.digest_rows_numba is not None:
        K.digest_rows_numba(rows[:4])
        out["numba"] = best_of(lambda: K.digest_rows_numba(rows))
        assert np.array_equal(K.digest_rows_numba(rows), K.digest_rows_numpy(rows))
    return {k: n_rows / v for k, v in out.items()}  # digests per second


def bench_grind(attempts):
    state = K.absorb_py([1, 2, 3, 4, 5, 6])
    out = {"numpy": best_of(lambda: K.grind_numpy(state, 0, 0, attempts))}
    if K.grind_numba is not None:
        K.grind_numba(state, 0, 0, 16)
        out["numba"] = best_of(lambda: K.grind_numba(state, 0, 0, attempts))
    out["python"] = best_of(lambda: [K.finalize_py(state, n) for n in range(attempts // 100)], 1) * 100
    return {k: attempts / v for k, v in out.items()}


def bench_end_to_end(mode, D, L, trials):
    code = END_TO_END.format(D=D, L=L, trials=trials, mode=mode)
    result = {}
    for name, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, SPENDCHAIN_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        result[name] = float(proc.stdout.strip())
    return result  # microseconds per block


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1_000_000)
    ap.add_argument("--attempts", type=int, default=1 << 22)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)

    print(f"numba available and enabled: {K.USE_NUMBA}")
    print(f"\nbatch digests ({args.rows} rows of 7 words), digests/s")
    for name, rate in bench_digest_rows(args.rows).items():
        print(f"  {name:8s} {rate:14,.0f}")
    print(f"\nnonce grinding ({args.attempts} attempts, no hit), attempts/s")
    for name, rate in bench_grind(args.attempts).items():
        print(f"  {name:8s} {rate:14,.0f}")
    if not args.skip_end_to_end:
        for mode, D, L, trials in (("geometric", 16, 512, 20), ("grind", 12, 64, 20)):
            print(f"\nPSP chain build, {mode} mode, D={D}: microseconds per block")
            for name, us in bench_end_to_end(mode, D, L, trials).items():
                print(f"  {name:8s} {us:10.1f}")


if __name__ == "__main__":
    main()
