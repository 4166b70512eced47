"""Kruskal mazes and the A*-style maze search environment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .search import SearchBudget, SearchNode, SearchTree, StopMode, Trace

SCHEMA_ID = "maze-window5-v1"
WINDOW = 5
FEATURE_DIM = 3 + WINDOW * WINDOW
# feature columns
F_MANHATTAN, F_DEPTH, F_PROGRESS = 0, 1, 2

_STEPS = ((-1, 0), (0, 1), (1, 0), (0, -1))


class MazeFormatError(ValueError):
    pass


@dataclass(eq=False)
class MazeInstance:
    walls: np.ndarray  # True where blocked
    start: tuple[int, int]
    goal: tuple[int, int]
    instance_id: str = "maze"
    _padded: np.ndarray | None = field(default=None, repr=False)

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    @property
    def width(self) -> int:
        return self.walls.shape[1]

    @property
    def size(self) -> int:
        return self.height

    def passable(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width and not self.walls[r, c]

    def padded_open(self) -> np.ndarray:
        """Passability grid padded with walls so every 5x5 window is in range."""
        if self._padded is None:
            h = WINDOW // 2
            self._padded = np.pad(~self.walls, h, constant_values=False).astype(float)
        return self._padded

    def passable_count(self) -> int:
        return int((~self.walls).sum())


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def kruskal_generate(size: int, seed: int, instance_id: str | None = None) -> MazeInstance:
    """Perfect maze on a ``size`` x ``size`` grid (cells at odd coordinates).

    Walls between lattice cells are visited in a seeded random order and a
    wall is carved whenever it joins two different components.
    """
    if size < 5 or size % 2 == 0:
        raise ValueError(f"maze size must be odd and >= 5, got {size}")
    k = (size - 1) // 2
    walls = np.ones((size, size), dtype=bool)
    walls[1::2, 1::2] = False
    edges = []
    for i in range(k):
        for j in range(k):
            if j + 1 < k:
                edges.append((i * k + j, i * k + j + 1))
            if i + 1 < k:
                edges.append((i * k + j, (i + 1) * k + j))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(edges))
    ds = _DisjointSet(k * k)
    for e in order:
        a, b = edges[e]
        if ds.union(a, b):
            (ra, ca), (rb, cb) = divmod(a, k), divmod(b, k)
            walls[ra + rb + 1, ca + cb + 1] = False
    iid = instance_id if instance_id is not None else f"maze-{size}-{seed}"
    return MazeInstance(walls, (1, 1), (size - 2, size - 2), iid)


def passage_edges(maze: MazeInstance) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """4-adjacent pairs of passable squares, each listed once."""
    out = []
    for r in range(maze.height):
        for c in range(maze.width):
            if maze.walls[r, c]:
                continue
            if r + 1 < maze.height and not maze.walls[r + 1, c]:
                out.append(((r, c), (r + 1, c)))
            if c + 1 < maze.width and not maze.walls[r, c + 1]:
                out.append(((r, c), (r, c + 1)))
    return out


def validate_maze(maze: MazeInstance) -> None:
    """Raise ``MazeFormatError`` unless the maze is a perfect maze with valid endpoints."""
    if maze.height % 2 == 0 or maze.width % 2 == 0:
        raise MazeFormatError("maze dimensions must be odd")
    if maze.start == maze.goal:
        raise MazeFormatError("start and goal coincide")
    for name, cell in (("start", maze.start), ("goal", maze.goal)):
        if not maze.passable(cell):
            raise MazeFormatError(f"{name} {cell} is not passable")
    n_open = maze.passable_count()
    edges = passage_edges(maze)
    if len(edges) != n_open - 1:
        raise MazeFormatError(f"passage graph has {len(edges)} edges for {n_open} squares; not a tree")
    seen = {maze.start}
    stack = [maze.start]
    while stack:
        r, c = stack.pop()
        for dr, dc in _STEPS:
            nb = (r + dr, c + dc)
            if nb not in seen and maze.passable(nb):
                seen.add(nb)
                stack.append(nb)
    if len(seen) != n_open:
        raise MazeFormatError("passage graph is not connected")


def manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def manhattan_expert_score(node: SearchNode, maze: MazeInstance) -> float:
    """A* priority ``-(g + h)``: depth plus Manhattan distance to the goal."""
    cell = node.env_state[0]
    return -float(node.depth + manhattan(cell, maze.goal))


# ---------------------------------------------------------------------------
# search environment
# ---------------------------------------------------------------------------


class MazeSession:
    """State payload: ``(cell, parent_cell)``."""

    def __init__(self, maze: MazeInstance):
        self.maze = maze

    def root_state(self):
        return (self.maze.start, None)

    def children(self, state):
        return maze_children(self.maze, state)

    def is_terminal(self, state):
        if state[0] == self.maze.goal:
            return True, None
        return False, None

    def features(self, node: SearchNode, tree: SearchTree) -> np.ndarray:
        return maze_features(self.maze, node.env_state, node.depth)

    def on_terminal(self, node: SearchNode) -> None:
        node.objective = float(node.depth)


def maze_children(maze: MazeInstance, state):
    (r, c), parent = state
    out = []
    for dr, dc in _STEPS:
        nb = (r + dr, c + dc)
        if nb != parent and maze.passable(nb):
            out.append((nb, (r, c)))
    return out


def maze_features(maze: MazeInstance, state, depth: int) -> np.ndarray:
    cell, parent = state
    h = manhattan(cell, maze.goal)
    progress = 0 if parent is None else manhattan(parent, maze.goal) - h
    r, c = cell
    window = maze.padded_open()[r : r + WINDOW, c : c + WINDOW]
    out = np.empty(FEATURE_DIM)
    out[F_MANHATTAN] = h
    out[F_DEPTH] = depth
    out[F_PROGRESS] = progress
    out[3:] = window.ravel()
    return out


class ManhattanExpert:
    """A* with the Manhattan heuristic, expressed as a frontier score."""

    tag = "manhattan"
    query_normalized = False
    prune = None

    def score(self, F: np.ndarray) -> np.ndarray:
        F = np.atleast_2d(F)
        return -(F[:, F_DEPTH] + F[:, F_MANHATTAN])


class MazeEnvironment:
    name = "maze"
    schema_id = SCHEMA_ID
    feature_dim = FEATURE_DIM
    stop_mode = StopMode.FIRST_TERMINAL
    lower_is_better = True

    def session(self, instance: MazeInstance) -> MazeSession:
        return MazeSession(instance)

    def budget(self, instance: MazeInstance, max_expansions: int | None = None) -> SearchBudget:
        cap = max_expansions if max_expansions else instance.passable_count()
        return SearchBudget(cap, self.stop_mode)

    def expert_policy(self):
        return ManhattanExpert()

    def metric(self, trace: Trace, instance: MazeInstance) -> float:
        return float(explored_squares(trace))

    def generate(self, size: int, seed: int, instance_id: str | None = None) -> MazeInstance:
        return kruskal_generate(size, seed, instance_id)


def explored_squares(trace: Trace) -> int:
    """Distinct expanded squares, counting the goal square once it is reached."""
    nodes = trace.tree.nodes
    cells = {nodes[ev.popped].env_state[0] for ev in trace.events}
    cells.update(nodes[t].env_state[0] for t in trace.tree.terminals)
    return len(cells)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def maze_to_text(maze: MazeInstance) -> str:
    rows = []
    for r in range(maze.height):
        row = []
        for c in range(maze.width):
            if (r, c) == maze.start:
                row.append("S")
            elif (r, c) == maze.goal:
                row.append("G")
            else:
                row.append("#" if maze.walls[r, c] else ".")
        rows.append("".join(row))
    return "\n".join(rows) + "\n"


def maze_from_text(text: str, instance_id: str = "maze", validate: bool = True) -> MazeInstance:
    rows = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise MazeFormatError("maze rows are missing or ragged")
    walls = np.zeros((len(rows), len(rows[0])), dtype=bool)
    start = goal = None
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == "#":
                walls[r, c] = True
            elif ch == "S":
                if start is not None:
                    raise MazeFormatError("more than one start")
                start = (r, c)
            elif ch == "G":
                if goal is not None:
                    raise MazeFormatError("more than one goal")
                goal = (r, c)
            elif ch != ".":
                raise MazeFormatError(f"unexpected character {ch!r} at {(r, c)}")
    if start is None or goal is None:
        raise MazeFormatError("maze needs exactly one S and one G")
    maze = MazeInstance(walls, start, goal, instance_id)
    if validate:
        validate_maze(maze)
    return maze
