"""Independent reference implementations used only by the tests."""

import itertools

import numpy as np

from retrosearch.bnb import Graph, IlpInstance
from retrosearch.search import SearchBudget, StopMode, run_search


def mvc_constraints(graph: Graph):
    """All rows of ``G x >= h`` for the MVC relaxation: edges, ``x >= 0`` and ``-x >= -1``."""
    n = graph.n
    rows, rhs = [], []
    for u, v in graph.edges:
        r = np.zeros(n)
        r[u] = r[v] = 1.0
        rows.append(r)
        rhs.append(1.0)
    eye = np.eye(n)
    rows += list(eye) + list(-eye)
    rhs += [0.0] * n + [-1.0] * n
    return np.array(rows), np.array(rhs)


def vertex_enumeration_lp(graph: Graph, c=None) -> float:
    """Minimum of ``c @ x`` over the basic feasible points of the MVC polytope.

    Every choice of ``n`` linearly independent tight rows is solved; feasible
    solutions are the polytope's vertices.  Exponential, so small ``n`` only.
    """
    n = graph.n
    c = np.ones(n) if c is None else np.asarray(c, float)
    G, h = mvc_constraints(graph)
    best = np.inf
    combos = np.array(list(itertools.combinations(range(G.shape[0]), n)))
    for chunk in np.array_split(combos, max(1, len(combos) // 20000)):
        A = G[chunk]
        b = h[chunk]
        det = np.linalg.det(A)
        ok = np.abs(det) > 1e-9
        if not ok.any():
            continue
        X = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
        feas = np.all(X @ G.T >= h - 1e-9, axis=1)
        if feas.any():
            best = min(best, float((X[feas] @ c).min()))
    return best


def half_integral_grid_lp(graph: Graph, c=None) -> float:
    """Minimum over the grid {0, 1/2, 1}^n, which contains every vertex of the MVC polytope."""
    n = graph.n
    c = np.ones(n) if c is None else np.asarray(c, float)
    grid = np.array(list(itertools.product((0.0, 0.5, 1.0), repeat=n)))
    ok = np.ones(len(grid), dtype=bool)
    for u, v in graph.edges:
        ok &= grid[:, u] + grid[:, v] >= 1.0
    return float((grid[ok] @ c).min())


def scipy_lp(graph: Graph) -> float:
    from scipy.optimize import linprog

    inst = IlpInstance.from_graph(graph)
    A, b = inst.constraint_matrix()
    if graph.m == 0:
        return 0.0
    res = linprog(inst.c, A_ub=-A, b_ub=-b, bounds=[(0, 1)] * graph.n, method="highs")
    return float(res.fun)


def unbudgeted_best_bound(env, instance):
    """Run best-bound B&B until the frontier empties."""
    budget = SearchBudget(10**7, StopMode.EXHAUST_BUDGET)
    return run_search(env, instance, env.expert_policy(), budget)
