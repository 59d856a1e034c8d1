"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_backends.py [--repeat 3]

Each backend runs in its own interpreter (the switch is read at import time),
so the numpy run sets ADOPTDYN_DISABLE_NUMBA=1. The first numba call is
timed separately as compile time.
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKLOAD = r"""
import json, sys, time
import numpy as np
from adoptdyn import kernels
from adoptdyn._accel import backend
from adoptdyn.clustering import silhouette_samples

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
n = 25
f = rng.dirichlet(np.ones(n))
m = np.repeat(np.arange(1.0, 6.0), 5)
c = 1.0 / (m @ f)
W = rng.random((n, n)); np.fill_diagonal(W, 0); W /= W.sum(1, keepdims=True)
lam = rng.uniform(0.3, 0.6, n); xi = rng.uniform(0.1, 0.3, n) * (1 - lam - 0.05)
a0 = np.full(n, 0.19); d0 = np.zeros(n); x0 = rng.uniform(0.3, 0.8, n)
args = (a0, d0, x0, x0, m * f, m, c, 0.01, 0.02, rng.uniform(0, 0.1, n), lam, xi, W)
X = rng.random((1500, 4)); labels = rng.integers(0, 5, 1500)

def timed(fn):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter(); fn(); best = min(best, time.perf_counter() - t0)
    return best

t0 = time.perf_counter()
kernels.simulate_arrays(*args, 10); kernels.converge_arrays(*args, max_steps=10)
silhouette_samples(X[:50], labels[:50])
warmup = time.perf_counter() - t0
out = {"backend": backend(), "warmup_s": warmup,
       "simulate_1e5_s": timed(lambda: kernels.simulate_arrays(*args, 100_000)),
       "converge_s": timed(lambda: kernels.converge_arrays(*args, tol=1e-12, max_steps=1_000_000)),
       "silhouette_1500_s": timed(lambda: silhouette_samples(X, labels))}
print(json.dumps(out))
"""


def run(disable, repeat):
    env = dict(os.environ)
    env.pop("ADOPTDYN_DISABLE_NUMBA", None)
    if disable:
        env["ADOPTDYN_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    t0 = time.perf_counter()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    keys = [k for k in fast if k.endswith("_s") and k != "warmup_s"]
    print(f"{'workload':<20}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    print(f"{'warmup (compile)':<20}{fast['warmup_s']:>12.4f}{slow['warmup_s']:>12.4f}")
    for k in keys:
        print(f"{k[:-2]:<20}{fast[k]:>12.4f}{slow[k]:>12.4f}{slow[k] / fast[k]:>9.1f}x")
    print(f"total wall time {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
