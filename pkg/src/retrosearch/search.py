"""Policy-driven best-first tree search with full trace recording."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Protocol, Sequence

import numpy as np


class EmptyFrontierError(RuntimeError):
    pass


class TraceFormatError(ValueError):
    pass


class StopMode(str, Enum):
    FIRST_TERMINAL = "first_terminal"
    EXHAUST_BUDGET = "exhaust_budget"
    K_TERMINALS = "k_terminals"


@dataclass(frozen=True)
class SearchBudget:
    max_expansions: int
    stop_mode: StopMode = StopMode.FIRST_TERMINAL
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stop_mode", StopMode(self.stop_mode))
        if self.max_expansions < 1:
            raise ValueError("max_expansions must be >= 1")
        if self.stop_mode is StopMode.K_TERMINALS and self.k < 1:
            raise ValueError("k must be >= 1 for k_terminals")

    def terminal_quota(self) -> int | None:
        if self.stop_mode is StopMode.FIRST_TERMINAL:
            return 1
        if self.stop_mode is StopMode.K_TERMINALS:
            return self.k
        return None


@dataclass(frozen=True)
class ExplorationConfig:
    """Roll-out exploration: uniform random pops and Gaussian score noise."""

    epsilon: float = 0.0
    noise_variance: float = 0.0
    multi_terminal: bool = False

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.noise_variance < 0.0:
            raise ValueError("noise_variance must be >= 0")


@dataclass
class SearchNode:
    id: int
    parent: int | None
    depth: int
    env_state: Any
    is_terminal: bool = False
    objective: float | None = None
    score_at_insertion: float = math.nan
    features: np.ndarray | None = field(default=None, repr=False)
    pruned: bool = False


@dataclass
class SearchTree:
    nodes: list[SearchNode] = field(default_factory=list)
    frontier: list[int] = field(default_factory=list)
    terminals: list[int] = field(default_factory=list)
    expansions: int = 0

    def add(self, parent: int | None, env_state: Any) -> SearchNode:
        depth = 0 if parent is None else self.nodes[parent].depth + 1
        node = SearchNode(id=len(self.nodes), parent=parent, depth=depth, env_state=env_state)
        self.nodes.append(node)
        return node

    def __len__(self):
        return len(self.nodes)

    def structure_text(self) -> str:
        """Canonical text of the tree shape, used to compare replays."""
        lines = [f"expansions {self.expansions}"]
        for n in self.nodes:
            parent = "-" if n.parent is None else str(n.parent)
            flag = "T" if n.is_terminal else ("P" if n.pruned else "N")
            obj = "-" if n.objective is None else repr(float(n.objective))
            lines.append(f"{n.id} {parent} {n.depth} {flag} {obj}")
        lines.append("frontier " + " ".join(map(str, self.frontier)))
        lines.append("terminals " + " ".join(map(str, self.terminals)))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Event:
    step: int
    popped: int
    children: tuple[int, ...]


@dataclass
class Trace:
    tree: SearchTree
    events: list[Event]
    instance_id: str
    seed: int
    policy_tag: str

    @property
    def no_terminal_found(self) -> bool:
        return not self.tree.terminals

    def best_objective(self) -> float | None:
        objs = [self.tree.nodes[t].objective for t in self.tree.terminals]
        objs = [o for o in objs if o is not None]
        return min(objs) if objs else None


class Session(Protocol):
    def root_state(self) -> Any: ...

    def children(self, state: Any) -> list[Any]: ...

    def is_terminal(self, state: Any) -> tuple[bool, float | None]: ...

    def features(self, node: SearchNode, tree: SearchTree) -> np.ndarray: ...

    def on_terminal(self, node: SearchNode) -> None: ...


class Environment(Protocol):
    def session(self, instance: Any) -> Session: ...


def pop_best(frontier: Sequence[int], scores: Sequence[float]) -> int:
    """Position of the highest score; ties go to the smallest node id.

    ``frontier`` holds node ids (insertion ordinals) and ``scores`` the matching
    policy scores.
    """
    if len(frontier) == 0:
        raise EmptyFrontierError("pop from an empty frontier")
    ids = np.asarray(frontier)
    s = np.asarray(scores, dtype=float)
    top = np.flatnonzero(s == s.max())
    if top.size == 1:
        return int(top[0])
    return int(top[np.argmin(ids[top])])


def _resolve_policy(policy, rng):
    resolve = getattr(policy, "resolve", None)
    return resolve(rng) if resolve is not None else policy


def run_search(
    env: Environment,
    instance: Any,
    policy,
    budget: SearchBudget,
    explore: ExplorationConfig | None = None,
    seed: int = 0,
    instance_id: str | None = None,
) -> Trace:
    """Roll ``policy`` out on ``instance`` until the budget's stop rule fires.

    Policies without query normalisation are scored once, when a node is
    inserted.  Query-normalised policies depend on the whole frontier batch, so
    their scores are recomputed over the frontier before every pop; node
    features themselves are frozen at insertion either way.
    """
    explore = explore or ExplorationConfig()
    rng = np.random.default_rng(seed)
    policy = _resolve_policy(policy, rng)
    session = env.session(instance)
    iid = instance_id if instance_id is not None else str(getattr(instance, "instance_id", "instance"))
    tree = SearchTree()
    events: list[Event] = []
    trace = Trace(tree=tree, events=events, instance_id=iid, seed=int(seed), policy_tag=policy.tag)

    root = tree.add(None, session.root_state())
    term, obj = session.is_terminal(root.env_state)
    if term:
        root.is_terminal, root.objective = True, obj
        tree.terminals.append(root.id)
        session.on_terminal(root)
        return trace

    per_batch = bool(getattr(policy, "query_normalized", False))
    pruner = getattr(policy, "prune", None)
    quota = budget.terminal_quota()
    noise_sd = math.sqrt(explore.noise_variance)

    root.features = session.features(root, tree)
    tree.frontier.append(root.id)
    feats = [root.features]
    scores: list[float] = []
    if not per_batch:
        root.score_at_insertion = float(policy.score(root.features[None, :])[0])
        scores.append(root.score_at_insertion)

    batch_scores = None
    while tree.frontier and tree.expansions < budget.max_expansions:
        k = len(tree.frontier)
        if per_batch and batch_scores is None:
            batch_scores = np.asarray(policy.score(np.vstack(feats)), dtype=float)
            for nid, s in zip(tree.frontier, batch_scores):
                if math.isnan(tree.nodes[nid].score_at_insertion):
                    tree.nodes[nid].score_at_insertion = float(s)
        if explore.epsilon > 0.0 and rng.random() < explore.epsilon:
            pos = int(rng.integers(k))
        else:
            cur = batch_scores if per_batch else np.asarray(scores)
            if noise_sd > 0.0:
                cur = cur + rng.normal(0.0, noise_sd, size=k)
            pos = pop_best(tree.frontier, cur)
        popped = tree.frontier.pop(pos)
        feats.pop(pos)
        if not per_batch:
            scores.pop(pos)
        step = tree.expansions
        tree.expansions += 1

        new_ids: list[int] = []
        enqueue: list[SearchNode] = []
        for child_state in session.children(tree.nodes[popped].env_state):
            child = tree.add(popped, child_state)
            new_ids.append(child.id)
            term, obj = session.is_terminal(child_state)
            if term:
                child.is_terminal, child.objective = True, obj
                tree.terminals.append(child.id)
                session.on_terminal(child)
                if quota is not None and len(tree.terminals) >= quota:
                    break
                continue
            child.features = session.features(child, tree)
            enqueue.append(child)
        if pruner is not None and enqueue:
            mask = pruner(np.vstack([c.features for c in enqueue]))
            for c, drop in zip(enqueue, mask):
                c.pruned = bool(drop)
            enqueue = [c for c in enqueue if not c.pruned]
        if enqueue and not per_batch:
            s = policy.score(np.vstack([c.features for c in enqueue]))
            for c, v in zip(enqueue, s):
                c.score_at_insertion = float(v)
                scores.append(float(v))
        for c in enqueue:
            tree.frontier.append(c.id)
            feats.append(c.features)
        batch_scores = None
        events.append(Event(step, popped, tuple(new_ids)))
        if quota is not None and len(tree.terminals) >= quota:
            break
    return trace


# ---------------------------------------------------------------------------
# replay and text serialisation
# ---------------------------------------------------------------------------


def replay_tree(
    events: Iterable[Event],
    terminals: dict[int, float | None],
    pruned: Iterable[int] = (),
) -> SearchTree:
    """Rebuild the tree shape (no environment payloads) from expansion events."""
    pruned = set(pruned)
    tree = SearchTree()
    tree.add(None, None)
    if 0 in terminals:
        tree.nodes[0].is_terminal, tree.nodes[0].objective = True, terminals[0]
        tree.terminals.append(0)
    else:
        tree.frontier.append(0)
    for ev in events:
        if ev.step != tree.expansions:
            raise TraceFormatError(f"event step {ev.step} out of order")
        if ev.popped not in tree.frontier:
            raise TraceFormatError(f"node {ev.popped} popped while not on the frontier")
        tree.frontier.remove(ev.popped)
        tree.expansions += 1
        for cid in ev.children:
            if cid != len(tree.nodes):
                raise TraceFormatError(f"child id {cid} is not the next ordinal")
            node = tree.add(ev.popped, None)
            if cid in terminals:
                node.is_terminal, node.objective = True, terminals[cid]
                tree.terminals.append(cid)
            elif cid in pruned:
                node.pruned = True
            else:
                tree.frontier.append(cid)
    return tree


def _fmt_obj(o):
    return "-" if o is None else repr(float(o))


def trace_to_text(trace: Trace) -> str:
    tree = trace.tree
    terms = ",".join(f"{t}:{_fmt_obj(tree.nodes[t].objective)}" for t in tree.terminals) or "-"
    pruned = ",".join(str(n.id) for n in tree.nodes if n.pruned) or "-"
    lines = [
        "# retrosearch-trace v1",
        f"# instance_id={trace.instance_id}",
        f"# seed={trace.seed}",
        f"# policy_tag={trace.policy_tag}",
        f"# terminals={terms}",
        f"# pruned={pruned}",
    ]
    for ev in trace.events:
        kids = ",".join(map(str, ev.children)) or "-"
        lines.append(f"{ev.step} {ev.popped} {kids}")
    return "\n".join(lines) + "\n"


def trace_from_text(text: str) -> Trace:
    header: dict[str, str] = {}
    events: list[Event] = []
    lines = text.splitlines()
    if not lines or lines[0].strip() != "# retrosearch-trace v1":
        raise TraceFormatError("missing trace header")
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key] = val
            continue
        parts = line.split()
        if len(parts) != 3:
            raise TraceFormatError(f"bad event line: {line!r}")
        kids = () if parts[2] == "-" else tuple(int(c) for c in parts[2].split(","))
        events.append(Event(int(parts[0]), int(parts[1]), kids))
    try:
        terminals: dict[int, float | None] = {}
        if header["terminals"] != "-":
            for item in header["terminals"].split(","):
                nid, _, obj = item.partition(":")
                terminals[int(nid)] = None if obj == "-" else float(obj)
        pruned = [] if header["pruned"] == "-" else [int(p) for p in header["pruned"].split(",")]
        tree = replay_tree(events, terminals, pruned)
        # keep the recorded terminal order
        tree.terminals = list(terminals)
        return Trace(
            tree=tree,
            events=events,
            instance_id=header["instance_id"],
            seed=int(header["seed"]),
            policy_tag=header["policy_tag"],
        )
    except KeyError as exc:
        raise TraceFormatError(f"missing header field {exc}") from None
