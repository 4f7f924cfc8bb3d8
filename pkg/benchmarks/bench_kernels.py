"""Compiled vs pure-numpy kernels, plus one end-to-end run under each setting.

    python3 benchmarks/bench_kernels.py [--repeat 200]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tomograph import _kernels

E2E = """
import time
from tomograph.netmodel import gen_topology, gen_gravity_traffic
from tomograph.ingest import DatasetBundle, SplitSpec, split
from tomograph.estimator import EstimatorConfig, init_state, run
topo, A = gen_topology(0, 11, 41 / 11)
tr, te = split(DatasetBundle(A, gen_gravity_traffic(0, topo, 700), topo), SplitSpec(500, 200))
st = init_state(tr, EstimatorConfig(s=35))
run(st, te, horizon=2)
t = time.perf_counter()
run(st, te)
print(time.perf_counter() - t)
"""


def problems(seed=0):
    rng = np.random.default_rng(seed)
    U = np.linalg.qr(rng.normal(size=(41, 41)))[0][:, :35].T.copy()
    E = rng.uniform(0, 1, size=(35, 11))
    f = E @ rng.uniform(0, 2, 11) + rng.normal(0, 0.3, 35)
    return U, E, f


def bench(fn, args, repeat):
    fn(*args)  # compile / warm caches
    return min(timeit.repeat(lambda: fn(*args), number=repeat, repeat=3)) / repeat


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()
    U, E, f = problems()
    x0 = np.zeros(E.shape[1])
    cases = [
        ("qr_pivot 35x41", _kernels.py_qr_pivot, _kernels.qr_pivot, (U, 1e-12)),
        ("nnls 35x11", _kernels.py_nnls, _kernels.nnls, (E, f, x0, 1000, 1e-10)),
    ]
    print(f"numba active: {_kernels.HAS_NUMBA}")
    print(f"{'kernel':<18}{'python (us)':>14}{'numba (us)':>14}{'speedup':>10}")
    for name, py, fast, a in cases:
        tp = bench(py, a, args.repeat)
        tf = bench(fast, a, args.repeat)
        print(f"{name:<18}{tp * 1e6:>14.1f}{tf * 1e6:>14.1f}{tp / tf:>10.1f}")

    if args.skip_e2e:
        return
    for flag in ("0", "1"):
        env = dict(os.environ, TOMOGRAPH_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", E2E], env=env, check=True,
                             capture_output=True, text=True).stdout.strip()
        print(f"200-step run, s=35, TOMOGRAPH_NUMBA={flag}: {float(out):.3f} s")


if __name__ == "__main__":
    main()
