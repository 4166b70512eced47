"""End-to-end acceptance checks.

Each check prints one ``[PASS]`` / ``[FAIL]`` line (run with ``-s`` to see
them live; they are also collected in the terminal summary).  The maze and
B&B experiments are shared between checks through module-scoped fixtures, so
the whole file takes roughly a quarter of an hour.
"""

import time

import numpy as np
import pytest
from scipy.stats import binomtest

from oracles import half_integral_grid_lp, unbudgeted_best_bound, vertex_enumeration_lp
from retrosearch import harness as H
from retrosearch import policy as P
from retrosearch import retrospective as R
from retrosearch.bnb import BnBEnvironment, IlpInstance, brute_force_mvc, erdos_renyi, simplex_solve
from retrosearch.maze import MazeEnvironment
from retrosearch.search import ExplorationConfig, SearchBudget, StopMode, run_search

from conftest import ACCEPTANCE_LINES, RandomPolicy, RandomTreeEnv

MAZE_INI = """
[experiment]
env = maze
sizes = 11, 15, 21, 25, 31
seed = 1
[train]
iterations = 3
"""

BNB_INI = """
[experiment]
env = bnb
sizes = 30, 40, 50
seed = 1
budget = 250
[train]
iterations = 3
"""


def report(k: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


# ---------------------------------------------------------------------------
# 1. hitting-time theory
# ---------------------------------------------------------------------------


def test_criterion_1_theory():
    t0 = time.perf_counter()
    rep = H.validate_theory(seed=0)
    ratio_a = H.theory.simulate_hitting_time(H.theory.WalkConfig(0.1, 20, 100_000, 11)).mean
    ratio_b = H.theory.simulate_hitting_time(H.theory.WalkConfig(0.3, 20, 100_000, 12)).mean
    elapsed = time.perf_counter() - t0
    worst = max(c["rel_error"] for c in rep.cells)
    ratio = ratio_b / ratio_a
    ok = all(c["mean_ok"] for c in rep.cells) and elapsed < 30 and abs(ratio - 2.0) <= 0.1
    report(1, ok, f"8 cells, worst mean rel error {worst:.4f} (tol 0.02), ratio {ratio:.3f} (2.0 +/- 5%), "
                  f"{elapsed:.1f}s (< 30s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. retrospective oracle properties
# ---------------------------------------------------------------------------


def _oracle_failures(trace) -> int:
    bad = 0
    nodes = trace.tree.nodes
    for t in trace.tree.terminals:
        rt = R.retrospective_oracle(trace, t)
        path = rt.path
        if len(path) != nodes[t].depth + 1:
            bad += 1
        if path[0] != 0 or path[-1] != t:
            bad += 1
        if any(nodes[b].parent != a for a, b in zip(path, path[1:])):
            bad += 1
        if len(path) > trace.tree.expansions + 1:
            bad += 1
    return bad


def test_criterion_2_oracle_properties():
    rng = np.random.default_rng(2024)
    maze, bnb, tree = MazeEnvironment(), BnBEnvironment(), RandomTreeEnv()
    explore = ExplorationConfig(epsilon=0.3, noise_variance=0.1, multi_terminal=True)
    checked = terminals = failures = 0
    for k in range(1000):
        s = int(rng.integers(2**31))
        kind = k % 4
        if kind == 0:
            env, inst = maze, maze.generate(int(rng.choice([5, 7, 9, 11, 15])), s, f"m{k}")
            pol = maze.expert_policy()
        elif kind == 1:
            env, inst = bnb, bnb.generate(int(rng.integers(6, 16)), s)
            pol = bnb.expert_policy()
        else:
            env, inst, pol = tree, s, RandomPolicy(s)
        budget = SearchBudget(int(rng.integers(5, 60)), StopMode.EXHAUST_BUDGET)
        tr = run_search(env, inst, pol, budget, explore, s)
        checked += 1
        terminals += len(tr.tree.terminals)
        failures += _oracle_failures(tr)
    ok = failures == 0 and checked == 1000
    report(2, ok, f"{checked} traces (maze, B&B, random trees), {terminals} terminal paths, {failures} failures")
    assert ok


# ---------------------------------------------------------------------------
# 3. simplex and branch-and-bound exactness
# ---------------------------------------------------------------------------


def test_criterion_3_lp_and_bnb_exactness():
    lp_err = half_err = 0.0
    graphs = 0
    for seed in range(50):
        n = 4 + seed % 7  # 4..10
        g = erdos_renyi(n, 0.45, 300 + seed)
        if g.m == 0:
            g = erdos_renyi(n, 0.9, 300 + seed)
        lp = simplex_solve(IlpInstance.from_graph(g))
        ref = vertex_enumeration_lp(g) if n <= 7 else half_integral_grid_lp(g)
        lp_err = max(lp_err, abs(lp.value - ref))
        half_err = max(half_err, float(np.abs(2 * lp.x - np.round(2 * lp.x)).max()) / 2)
        graphs += 1
    env = BnBEnvironment()
    mismatches = 0
    for seed in range(100):
        g = erdos_renyi(8 + seed % 8, 0.3, 700 + seed)
        tr = unbudgeted_best_bound(env, IlpInstance.from_graph(g))
        if tr.best_objective() != brute_force_mvc(g):
            mismatches += 1
    ok = lp_err <= 1e-6 and half_err <= 1e-7 and mismatches == 0
    report(3, ok, f"{graphs} LPs max |err| {lp_err:.2e} (<= 1e-6), half-integrality {half_err:.2e} (<= 1e-7), "
                  f"B&B vs brute force {100 - mismatches}/100 exact")
    assert ok


# ---------------------------------------------------------------------------
# 4. gradients
# ---------------------------------------------------------------------------


def _fd(f, v, h=1e-6):
    out = np.zeros_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        out[i] = (f(v + e) - f(v - e)) / (2 * h)
    return out


def _rel(a, b, floor=1e-5):
    return float((np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))).max())


def test_criterion_4_gradients():
    rng = np.random.default_rng(4)
    worst_rank = worst_prune = 0.0
    for k in range(100):
        params = P.init_ranker(6, hidden=8, seed=k)
        params.b1 = rng.normal(size=8)
        A, B = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
        _, g = P.pairwise_loss_and_grad(params, A, B)
        num = _fd(lambda v: P.pairwise_loss_and_grad(params.with_flat(v), A, B)[0], params.flat())
        worst_rank = max(worst_rank, _rel(g.flat(), num))

        X = rng.normal(size=(12, 5))
        y = rng.integers(0, 2, size=12)
        prm = P.PrunerParams(rng.normal(size=5), float(rng.normal()), 5.0, rng.normal(size=5),
                             rng.uniform(0.5, 2.0, size=5))
        _, gw, gb = P.weighted_logistic_loss_and_grad(prm, X, y)

        def loss(v, prm=prm, X=X, y=y):
            q = prm.copy()
            q.w, q.b = v[:5], v[5]
            return P.weighted_logistic_loss_and_grad(q, X, y)[0]

        num = _fd(loss, np.concatenate([prm.w, [prm.b]]))
        worst_prune = max(worst_prune, _rel(np.concatenate([gw, [gb]]), num))
    ok = worst_rank <= 1e-4 and worst_prune <= 1e-4
    report(4, ok, f"100 points each, worst rel error ranking {worst_rank:.2e}, logistic {worst_prune:.2e} (<= 1e-4)")
    assert ok


# ---------------------------------------------------------------------------
# 5-8. experiments
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def maze_runs():
    env = H.make_env("maze")
    base = H.config_from_ini(MAZE_INI)
    suites = H.load_suites(env, base)
    out, t0 = {}, time.perf_counter()
    for mode in ("dagger_extrapolation", "retro_dagger"):
        out[mode] = H.run_experiment(H.config_from_ini(MAZE_INI, mode=mode), suites=suites)
    out["wall"] = time.perf_counter() - t0
    out["suites"] = suites
    return out


@pytest.fixture(scope="module")
def bnb_runs():
    env = H.make_env("bnb")
    suites = H.load_suites(env, H.config_from_ini(BNB_INI))
    return {
        mode: H.run_experiment(H.config_from_ini(BNB_INI, mode=mode), suites=suites)
        for mode in ("expert_baseline", "dagger_extrapolation", "retro_dagger")
    }, suites


def test_criterion_5_maze_curriculum(maze_runs):
    _, _, ex = maze_runs["dagger_extrapolation"]
    _, _, rt = maze_runs["retro_dagger"]
    parts, ok = [], maze_runs["wall"] <= 2 * 3600
    for s in (21, 25, 31):
        a, b = rt[s].metric, ex[s].metric
        wins, losses = int((a < b).sum()), int((a > b).sum())
        p = binomtest(wins, wins + losses, alternative="greater").pvalue if wins + losses else 1.0
        good = a.mean() < b.mean() and p < 0.05
        ok &= good
        parts.append(f"{s}: {a.mean():.2f} vs {b.mean():.2f} ({wins}/{losses}, p={p:.1e})")
    report(5, ok, "retro vs extrapolation explored squares, " + "; ".join(parts)
           + f"; {maze_runs['wall']:.0f}s")
    assert ok


def test_criterion_6_error_rate_ordering(maze_runs):
    _, _, ex = maze_runs["dagger_extrapolation"]
    _, _, rt = maze_runs["retro_dagger"]
    scaled = (15, 21, 25, 31)
    pairs = [(rt[s].error.value, ex[s].error.value) for s in scaled]
    strict = sum(a < b for a, b in pairs)
    ok = all(a <= b for a, b in pairs) and strict >= 2
    detail = "; ".join(f"{s}: {a:.4f} vs {b:.4f}" for s, (a, b) in zip(scaled, pairs))
    report(6, ok, f"retro vs extrapolation error rate, {detail}; strict at {strict}/4")
    assert ok


def test_criterion_7_bnb_ordering(bnb_runs):
    runs, _ = bnb_runs
    gaps = {m: runs[m][2][50].mean for m in runs}
    ok = gaps["retro_dagger"] <= gaps["dagger_extrapolation"] and gaps["retro_dagger"] <= gaps["expert_baseline"]
    report(7, ok, f"n=50 budget 250 mean gap %: retro {gaps['retro_dagger']:.3f}, "
                  f"extrapolation {gaps['dagger_extrapolation']:.3f}, best-bound {gaps['expert_baseline']:.3f}")
    assert ok


def test_criterion_8_determinism(maze_runs, bnb_runs):
    checks = []
    for mode in ("dagger_extrapolation", "retro_dagger"):
        again, _, _ = H.run_experiment(H.config_from_ini(MAZE_INI, mode=mode, jobs=2), suites=maze_runs["suites"])
        checks.append((f"maze/{mode}", again.metrics_view() == maze_runs[mode][0].metrics_view()))
    runs, suites = bnb_runs
    for mode in runs:
        again, _, _ = H.run_experiment(H.config_from_ini(BNB_INI, mode=mode, jobs=2), suites=suites)
        checks.append((f"bnb/{mode}", again.metrics_view() == runs[mode][0].metrics_view()))
    ok = all(c for _, c in checks)
    report(8, ok, "jobs=2 rerun bit-exact: " + ", ".join(f"{n}={'yes' if c else 'no'}" for n, c in checks))
    assert ok
