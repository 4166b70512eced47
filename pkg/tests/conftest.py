import numpy as np
import pytest

from retrosearch.search import SearchBudget, StopMode


class RandomTreeSession:
    """Synthetic search space: every state spawns 0-3 children from a hash of its path.

    Terminals carry a random integer objective.  Used for property tests that
    must cover tree shapes the real environments rarely produce.
    """

    def __init__(self, seed, terminal_prob=0.15, max_depth=12):
        self.seed = seed
        self.p = terminal_prob
        self.max_depth = max_depth

    def _rng(self, state):
        return np.random.default_rng([self.seed, *state])

    def root_state(self):
        return (0,)

    def children(self, state):
        if len(state) > self.max_depth:
            return []
        k = int(self._rng(state).integers(0, 4))
        return [state + (i,) for i in range(k)]

    def is_terminal(self, state):
        if len(state) == 1:
            return False, None
        r = self._rng(state + (99,))
        if r.random() < self.p:
            return True, float(r.integers(1, 20))
        return False, None

    def features(self, node, tree):
        r = self._rng(node.env_state + (7,))
        return np.concatenate([[node.depth, len(tree.frontier)], r.normal(size=3)])

    def on_terminal(self, node):
        pass


class RandomTreeEnv:
    name = "random-tree"
    feature_dim = 5
    schema_id = "random-tree"
    stop_mode = StopMode.EXHAUST_BUDGET

    def __init__(self, terminal_prob=0.15):
        self.p = terminal_prob

    def session(self, instance):
        return RandomTreeSession(instance, self.p)

    def budget(self, instance=None, max_expansions=None):
        return SearchBudget(max_expansions or 40, self.stop_mode)

    def metric(self, trace, instance):
        best = trace.best_objective()
        return 100.0 if best is None else best


class RandomPolicy:
    """Scores features with a fixed random linear map (deterministic, not normalised)."""

    query_normalized = False
    prune = None

    def __init__(self, seed=0, dim=5):
        self.w = np.random.default_rng(seed).normal(size=dim)
        self.tag = f"random-linear-{seed}"

    def score(self, F):
        return np.atleast_2d(F) @ self.w


@pytest.fixture
def random_tree_env():
    return RandomTreeEnv()


# One line per acceptance criterion, echoed again after the test session.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
