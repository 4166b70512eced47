"""Time the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the backend is chosen at
import time from ``RETROSEARCH_DISABLE_NUMBA``.  Compilation is paid once in
a warm-up call and reported separately.

    python3 benchmarks/bench_kernels.py [--repeats 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from retrosearch import kernels, theory
from retrosearch.bnb import BnBEnvironment, IlpInstance, erdos_renyi, simplex_solve
from retrosearch.search import SearchBudget, StopMode, run_search

repeats = int(sys.argv[1])

def best(fn):
    t0 = time.perf_counter(); fn(); warm = time.perf_counter() - t0
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter(); fn(); runs.append(time.perf_counter() - t0)
    return warm, min(runs)

walk = lambda: theory.simulate_hitting_time(theory.WalkConfig(0.3, 50, 100_000, 1))
graphs = [IlpInstance.from_graph(erdos_renyi(50, 5 / 49, s)) for s in range(20)]
lps = lambda: [simplex_solve(g) for g in graphs]
env = BnBEnvironment()
inst = env.generate(50, 3)
bnb = lambda: run_search(env, inst, env.expert_policy(), SearchBudget(250, StopMode.EXHAUST_BUDGET))

out = {"numba": kernels.USE_NUMBA}
for name, fn in (("hitting_time_1e5", walk), ("simplex_20_graphs_n50", lps), ("bnb_250_nodes_n50", bnb)):
    warm, t = best(fn)
    out[name] = {"first_call": warm, "best": t}
print(json.dumps(out))
"""


def run_backend(disable: bool, repeats: int) -> dict:
    env = dict(os.environ)
    env.pop("RETROSEARCH_DISABLE_NUMBA", None)
    if disable:
        env["RETROSEARCH_DISABLE_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeats)], env=env, capture_output=True, text=True,
                          check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    fast = run_backend(False, args.repeats)
    slow = run_backend(True, args.repeats)
    if not fast["numba"]:
        print("numba is not importable; both columns use numpy")
    print(f"{'kernel':<24}{'numba (s)':>12}{'numpy (s)':>12}{'speed-up':>10}{'numba 1st call':>16}")
    for key in (k for k in fast if k != "numba"):
        a, b = fast[key]["best"], slow[key]["best"]
        print(f"{key:<24}{a:>12.4f}{b:>12.4f}{b / a:>9.1f}x{fast[key]['first_call']:>15.2f}s")


if __name__ == "__main__":
    main()
