"""Time the hot kernels under the numba and numpy backends.

Usage: python benchmarks/bench_kernels.py [--paths N] [--rows N] [--repeat N]

Each backend runs in a fresh interpreter because RCMLAB_BACKEND is read once
at import.  Timings exclude the first (compiling) call and report the best of
``--repeat`` runs.
"""
import argparse
import json
import os
import subprocess
import sys
import time

CHILD = r"""
import json, sys, time
import numpy as np
from rcmlab import ConductanceLaw, LatticeSpec, sample_environment
from rcmlab import _kernels, walk_sim

paths, rows, repeat = map(int, sys.argv[1:4])

def best(fn):
    fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)

w = np.random.default_rng(0).pareto(1.0, (rows, rows))
env = sample_environment(ConductanceLaw.polynomial_tail(1, 0.5), LatticeSpec(0, 1, 64), seed=0)
starts = np.full(paths, env.sites.origin)

def batch():
    walk_sim.alias_cache(env)  # tables cached; time the path loop only
    walk_sim.run_batch(env, starts, 10.0, seed=1)

print(json.dumps({"alias_rows": best(lambda: _kernels.alias_rows(w)), "run_batch": best(batch)}))
"""


def run_backend(name, args):
    env = dict(os.environ, RCMLAB_BACKEND=name)
    out = subprocess.run([sys.executable, "-c", CHILD, str(args.paths), str(args.rows), str(args.repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--rows", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    res = {b: run_backend(b, args) for b in ("numba", "numpy")}
    print(f"{'kernel':<12}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for k in ("alias_rows", "run_batch"):
        nb, npy = res["numba"][k], res["numpy"][k]
        print(f"{k:<12}{nb:12.4f}{npy:12.4f}{npy / nb:10.1f}x")
    print(f"({args.paths} paths on 129 sites to t=10; alias tables {args.rows}x{args.rows}; "
          f"total {time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
