"""Branch-and-bound over minimum vertex cover ILPs."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .lp import TOL, solve_lp
from .search import SearchBudget, SearchNode, SearchTree, StopMode, Trace

SCHEMA_ID = "bnb-mvc-v1"
FEATURE_NAMES = (
    "lp_bound",
    "rounded_objective",
    "depth",
    "integrality_gap",
    "solutions_found",
    "global_lower",
    "global_upper",
    "frontier_size",
)
FEATURE_DIM = len(FEATURE_NAMES)
NO_SOLUTION_GAP = 300.0
BRUTE_FORCE_MAX_N = 26


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise GraphFormatError(f"self-loop on node {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise GraphFormatError(f"edge ({u}, {v}) out of range for n={self.n}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphFormatError(f"duplicate edge {key}")
            seen.add(key)

    @property
    def m(self) -> int:
        return len(self.edges)


def erdos_renyi(n: int, p: float, seed: int) -> Graph:
    """G(n, p): every unordered pair is an edge independently with probability p."""
    if n < 1 or not 0.0 <= p <= 1.0:
        raise ValueError("need n >= 1 and p in [0, 1]")
    iu, ju = np.triu_indices(n, k=1)
    keep = np.random.default_rng(seed).random(iu.size) < p
    return Graph(n, tuple(zip(iu[keep].tolist(), ju[keep].tolist())))


def graph_to_text(g: Graph) -> str:
    return "\n".join([f"{g.n} {g.m}"] + [f"{u} {v}" for u, v in g.edges]) + "\n"


def graph_from_text(text: str) -> Graph:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    try:
        n, m = int(lines[0][0]), int(lines[0][1])
        edges = tuple((int(a), int(b)) for a, b in lines[1:])
    except (IndexError, ValueError) as exc:
        raise GraphFormatError(f"malformed graph file: {exc}") from None
    if len(edges) != m:
        raise GraphFormatError(f"header says {m} edges, found {len(edges)}")
    return Graph(n, edges)


@dataclass(eq=False)
class IlpInstance:
    """``min c @ x`` s.t. ``x_u + x_v >= 1`` per edge, ``x`` binary."""

    graph: Graph
    c: np.ndarray
    instance_id: str = "ilp"
    optimum: float | None = None

    @classmethod
    def from_graph(cls, graph: Graph, instance_id: str = "ilp", optimum: float | None = None):
        return cls(graph, np.ones(graph.n), instance_id, optimum)

    @property
    def n(self) -> int:
        return self.graph.n

    def constraint_matrix(self):
        A = np.zeros((self.graph.m, self.n))
        for i, (u, v) in enumerate(self.graph.edges):
            A[i, u] = A[i, v] = 1.0
        return A, np.ones(self.graph.m)

    def dump(self) -> str:
        """Human-readable ILP rows."""
        lines = [f"\\ {self.instance_id}", "minimize", "  " + " + ".join(f"{c:g} x{j}" for j, c in enumerate(self.c)),
                 "subject to"]
        lines += [f"  e{i}: x{u} + x{v} >= 1" for i, (u, v) in enumerate(self.graph.edges)]
        lines += ["bounds"] + [f"  0 <= x{j} <= 1" for j in range(self.n)]
        lines += ["binary", "  " + " ".join(f"x{j}" for j in range(self.n)), "end"]
        return "\n".join(lines) + "\n"


@dataclass
class LpSolution:
    status: str  # "optimal" | "infeasible"
    value: float
    x: np.ndarray

    def fractional(self) -> np.ndarray:
        return np.flatnonzero(np.abs(self.x - np.round(self.x)) > TOL)

    def integral(self) -> bool:
        return self.status == "optimal" and self.fractional().size == 0


def simplex_solve(instance: IlpInstance, fixed: dict[int, int] | None = None) -> LpSolution:
    """LP relaxation with the variables in ``fixed`` pinned to 0/1.

    Edges already covered by a variable fixed to 1 are dropped and an edge with
    one endpoint fixed to 0 forces the other to 1; the remaining covering LP
    goes to the two-phase simplex.  Upper bounds ``x <= 1`` are implied there
    because every cost is positive.
    """
    fixed = fixed or {}
    n = instance.n
    x = np.zeros(n)
    val = np.full(n, -1, dtype=np.int64)
    for j, v in fixed.items():
        val[j] = v
    rows = []
    for u, v in instance.graph.edges:
        fu, fv = val[u], val[v]
        if fu == 1 or fv == 1:
            continue
        if fu == 0 and fv == 0:
            return LpSolution("infeasible", math.inf, np.full(n, np.nan))
        if fu == 0:
            val[v] = 2  # forced to 1 but still unfixed
        elif fv == 0:
            val[u] = 2
        else:
            rows.append((u, v))
    x[(val == 1) | (val == 2)] = 1.0
    rows = [(u, v) for u, v in rows if val[u] == -1 and val[v] == -1]
    if rows:
        free = sorted({j for e in rows for j in e})
        pos = {j: i for i, j in enumerate(free)}
        A = np.zeros((len(rows), len(free)))
        for i, (u, v) in enumerate(rows):
            A[i, pos[u]] = A[i, pos[v]] = 1.0
        res = solve_lp(instance.c[free], A, np.ones(len(rows)))
        if res.status != "optimal":
            return LpSolution("infeasible", math.inf, np.full(n, np.nan))
        x[free] = res.x
    return LpSolution("optimal", float(instance.c @ x), x)


def lp_relaxation_value(instance: IlpInstance) -> float:
    return simplex_solve(instance).value


def branch_variable(lp: LpSolution) -> int:
    """Most fractional variable; ties go to the lowest index."""
    frac = lp.fractional()
    dist = np.abs(lp.x[frac] - 0.5)
    return int(frac[np.flatnonzero(dist <= dist.min() + 1e-12)[0]])


@dataclass(frozen=True)
class BnBNodeState:
    fixed: tuple[tuple[int, int], ...]
    lp: LpSolution = field(compare=False)
    depth: int = 0

    def fixed_map(self) -> dict[int, int]:
        return dict(self.fixed)


def optimality_gap(found: float | None, optimum: float) -> float:
    """Percent excess of ``found`` over ``optimum``; 300 when nothing was found."""
    if optimum <= 0:
        raise ValueError("optimum must be positive")
    if found is None or not math.isfinite(found):
        return NO_SOLUTION_GAP
    return 100.0 * (found - optimum) / optimum


class BnBSession:
    def __init__(self, instance: IlpInstance):
        self.instance = instance
        self.integer_costs = bool(np.all(instance.c == np.round(instance.c)))
        self.incumbent = math.inf
        self.solutions = 0
        self.trivial_upper = float(instance.c.sum())

    def root_state(self):
        return BnBNodeState((), simplex_solve(self.instance), 0)

    def bound_pruned(self, bound: float) -> bool:
        if not math.isfinite(self.incumbent):
            return False
        if self.integer_costs:
            return math.ceil(bound - TOL) >= self.incumbent
        return bound >= self.incumbent - TOL

    def children(self, state: BnBNodeState):
        lp = state.lp
        if lp.status != "optimal" or lp.integral():
            return []
        j = branch_variable(lp)
        base = state.fixed_map()
        out = []
        for v in (0, 1):
            fixed = dict(base)
            fixed[j] = v
            child_lp = simplex_solve(self.instance, fixed)
            if child_lp.status != "optimal" or self.bound_pruned(child_lp.value):
                continue
            out.append(BnBNodeState(tuple(sorted(fixed.items())), child_lp, state.depth + 1))
        return out

    def is_terminal(self, state: BnBNodeState):
        if state.lp.integral():
            return True, float(self.instance.c @ np.round(state.lp.x))
        return False, None

    def on_terminal(self, node: SearchNode) -> None:
        self.solutions += 1
        if node.objective is not None and node.objective < self.incumbent:
            self.incumbent = node.objective

    def features(self, node: SearchNode, tree: SearchTree) -> np.ndarray:
        lp = node.env_state.lp
        c = self.instance.c
        rounded = float(c @ np.ceil(lp.x - TOL))
        bounds = [tree.nodes[i].env_state.lp.value for i in tree.frontier]
        lower = min(bounds + [lp.value])
        upper = self.incumbent if math.isfinite(self.incumbent) else self.trivial_upper
        gap = (upper - lower) / max(abs(upper), 1.0)
        return np.array(
            [lp.value, rounded, node.depth, gap, self.solutions, lower, upper, len(tree.frontier)],
            dtype=float,
        )


class BestBoundPolicy:
    """Unlearned heuristic: expand the node with the smallest LP bound."""

    tag = "best_bound"
    query_normalized = False
    prune = None

    def score(self, F: np.ndarray) -> np.ndarray:
        return -np.atleast_2d(F)[:, 0]


class BnBEnvironment:
    name = "bnb"
    schema_id = SCHEMA_ID
    feature_dim = FEATURE_DIM
    stop_mode = StopMode.EXHAUST_BUDGET
    lower_is_better = True
    default_budget = 250
    mean_degree = 5.0

    def session(self, instance: IlpInstance) -> BnBSession:
        return BnBSession(instance)

    def budget(self, instance: IlpInstance | None = None, max_expansions: int | None = None) -> SearchBudget:
        return SearchBudget(max_expansions or self.default_budget, self.stop_mode)

    def expert_policy(self):
        return BestBoundPolicy()

    def metric(self, trace: Trace, instance: IlpInstance) -> float:
        if instance.optimum is None:
            raise ValueError(f"instance {instance.instance_id} has no known optimum")
        return optimality_gap(trace.best_objective(), instance.optimum)

    def edge_probability(self, n: int) -> float:
        return min(1.0, self.mean_degree / max(n - 1, 1))

    def generate(self, size: int, seed: int, instance_id: str | None = None, solve: bool = True) -> IlpInstance:
        g = erdos_renyi(size, self.edge_probability(size), seed)
        iid = instance_id if instance_id is not None else f"mvc-{size}-{seed}"
        opt = float(exact_mvc(g)) if solve else None
        return IlpInstance.from_graph(g, iid, opt)


# ---------------------------------------------------------------------------
# exact optima
# ---------------------------------------------------------------------------


def brute_force_mvc(graph: Graph) -> int:
    """Minimum vertex cover size by subset enumeration in order of size."""
    if graph.n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {graph.n}")
    if graph.m == 0:
        return 0
    incident = [0] * graph.n
    for i, (u, v) in enumerate(graph.edges):
        incident[u] |= 1 << i
        incident[v] |= 1 << i
    full = (1 << graph.m) - 1
    verts = [v for v in range(graph.n) if incident[v]]
    for k in range(1, len(verts) + 1):
        for combo in itertools.combinations(verts, k):
            cov = 0
            for v in combo:
                cov |= incident[v]
            if cov == full:
                return k
    return len(verts)


def milp_mvc(graph: Graph) -> int:
    """Minimum vertex cover size via scipy's MILP solver (HiGHS)."""
    from scipy.optimize import Bounds, LinearConstraint, milp

    if graph.m == 0:
        return 0
    inst = IlpInstance.from_graph(graph)
    A, b = inst.constraint_matrix()
    res = milp(
        c=inst.c,
        constraints=LinearConstraint(A, lb=b, ub=np.inf),
        integrality=np.ones(graph.n),
        bounds=Bounds(0, 1),
    )
    if not res.success:
        raise RuntimeError(f"MILP solver failed: {res.message}")
    return int(round(res.fun))


def exact_mvc(graph: Graph) -> int:
    return brute_force_mvc(graph) if graph.n <= 16 else milp_mvc(graph)
