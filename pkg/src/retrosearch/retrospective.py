"""Retrospective imitation: relabel a policy's own search traces and retrain.

The retrospective oracle walks parent links back from a terminal found in a
trace; the resulting root-to-terminal path is the shortest way to that
terminal in hindsight.  Replaying the trace against that path yields pairwise
preferences (path node over every other frontier node) that train the next
policy.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from . import policy as pol
from .search import ExplorationConfig, SearchBudget, StopMode, Trace, run_search
from .seeding import derive_seed

log = logging.getLogger(__name__)

DATASET_HEADER = "# retrosearch-dataset v1"


class UnknownTerminalError(KeyError):
    pass


class NoTerminalFoundError(RuntimeError):
    pass


class TrainingStarvedError(RuntimeError):
    """No roll-out in any iteration reached a terminal, so nothing was learned."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DatasetFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# oracle and relabelling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetroTrace:
    path: tuple[int, ...]
    terminal: int
    source_trace: str


def retrospective_oracle(trace: Trace, terminal: int) -> RetroTrace:
    nodes = trace.tree.nodes
    if terminal not in trace.tree.terminals:
        raise UnknownTerminalError(f"node {terminal} is not a terminal of trace {trace.instance_id}")
    path = [terminal]
    cur = nodes[terminal].parent
    while cur is not None:
        path.append(cur)
        cur = nodes[cur].parent
    path.reverse()
    return RetroTrace(tuple(path), terminal, trace.instance_id)


def select_target_terminal(trace: Trace) -> int:
    """Terminal with the smallest objective; ties go to the smallest node id."""
    terms = trace.tree.terminals
    if not terms:
        raise NoTerminalFoundError(f"trace {trace.instance_id} reached no terminal")
    nodes = trace.tree.nodes

    def key(t):
        obj = nodes[t].objective
        return (math.inf if obj is None else obj, t)

    return min(terms, key=key)


@dataclass(frozen=True)
class DecisionPoint:
    step: int
    target: int  # retro-path node waiting on the frontier
    frontier: tuple[int, ...]
    popped: int
    first: bool  # first step at which ``target`` was available


def decision_points(trace: Trace, retro: RetroTrace) -> Iterator[DecisionPoint]:
    """Replay ``trace`` and yield every step at which the next retro node was open."""
    nodes = trace.tree.nodes
    path = retro.path
    if len(path) < 2:
        return
    frontier = [path[0]]
    k = 0
    seen_k = -1
    last = len(path) - 1  # the terminal itself is never enqueued
    for ev in trace.events:
        if k < last and path[k] in frontier:
            yield DecisionPoint(ev.step, path[k], tuple(frontier), ev.popped, seen_k != k)
            seen_k = k
        frontier.remove(ev.popped)
        if k < last and ev.popped == path[k]:
            k += 1
        for c in ev.children:
            n = nodes[c]
            if not n.is_terminal and not n.pruned:
                frontier.append(c)


@dataclass
class LabeledExample:
    preferred: np.ndarray
    negatives: np.ndarray  # (k, dim)
    instance_id: str
    step: int

    def __post_init__(self):
        self.negatives = np.atleast_2d(self.negatives)
        if self.negatives.shape[0] < 1:
            raise ValueError("a labelled example needs at least one negative")
        if self.negatives.shape[1] != self.preferred.shape[0]:
            raise ValueError("feature dimensions differ")


@dataclass
class Dataset:
    examples: list[LabeledExample] = field(default_factory=list)
    iteration: int = 0
    size: int = 0
    prune_features: list[np.ndarray] = field(default_factory=list)
    prune_labels: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.examples)

    @property
    def dim(self) -> int | None:
        if self.examples:
            return int(self.examples[0].preferred.shape[0])
        if self.prune_features:
            return int(self.prune_features[0].shape[0])
        return None

    def extend(self, other: "Dataset") -> None:
        self.examples.extend(other.examples)
        self.prune_features.extend(other.prune_features)
        self.prune_labels.extend(other.prune_labels)

    def copy(self) -> "Dataset":
        return Dataset(list(self.examples), self.iteration, self.size, list(self.prune_features), list(self.prune_labels))

    def pairs(self, normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """All (preferred, negative) pairs, each example normalised as one frontier batch."""
        P, N = [], []
        for ex in self.examples:
            batch = np.vstack([ex.preferred[None, :], ex.negatives])
            if normalize:
                batch = pol.normalize_query(batch)[0]
            k = batch.shape[0] - 1
            P.append(np.repeat(batch[:1], k, axis=0))
            N.append(batch[1:])
        if not P:
            return np.zeros((0, 0)), np.zeros((0, 0))
        return np.vstack(P), np.vstack(N)


def make_dataset(trace: Trace, retro: RetroTrace, with_pruner: bool = False) -> Dataset:
    """Pairwise preferences: the waiting retro node beats every other open node.

    With ``with_pruner``, retro-path nodes are labelled keep (1) and expanded
    off-path nodes prune (0).
    """
    nodes = trace.tree.nodes
    out = Dataset()
    for dp in decision_points(trace, retro):
        negs = [n for n in dp.frontier if n != dp.target]
        if not negs:
            continue
        out.examples.append(
            LabeledExample(
                nodes[dp.target].features,
                np.vstack([nodes[n].features for n in negs]),
                trace.instance_id,
                dp.step,
            )
        )
    if with_pruner:
        on_path = set(retro.path)
        for n in retro.path[:-1]:
            if nodes[n].features is not None:
                out.prune_features.append(nodes[n].features)
                out.prune_labels.append(1)
        for ev in trace.events:
            if ev.popped not in on_path:
                out.prune_features.append(nodes[ev.popped].features)
                out.prune_labels.append(0)
    return out


def dataset_from_trace(trace: Trace, with_pruner: bool = False) -> Dataset:
    if trace.no_terminal_found:
        return Dataset()
    retro = retrospective_oracle(trace, select_target_terminal(trace))
    return make_dataset(trace, retro, with_pruner)


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------


def _vec(v) -> str:
    return " ".join(format(float(x), ".17g") for x in v)


def dataset_to_text(ds: Dataset, schema_id: str = "-") -> str:
    dim = ds.dim or 0
    lines = [
        DATASET_HEADER,
        f"# dim={dim} iteration={ds.iteration} size={ds.size} schema={schema_id or '-'} "
        f"examples={len(ds.examples)} prune_records={len(ds.prune_labels)}",
    ]
    for ex in ds.examples:
        lines.append(f"E {ex.instance_id} {ex.step} {ex.negatives.shape[0]}")
        lines.append("P " + _vec(ex.preferred))
        lines += ["N " + _vec(row) for row in ex.negatives]
    for x, y in zip(ds.prune_features, ds.prune_labels):
        lines.append(f"Q {int(y)} " + _vec(x))
    return "\n".join(lines) + "\n"


def dataset_from_text(text: str) -> tuple[Dataset, str]:
    lines = text.splitlines()
    if len(lines) < 2 or lines[0] != DATASET_HEADER:
        raise DatasetFormatError("missing dataset header")
    meta = dict(item.split("=", 1) for item in lines[1].lstrip("# ").split())
    ds = Dataset(iteration=int(meta["iteration"]), size=int(meta["size"]))
    dim = int(meta["dim"])
    i = 2
    while i < len(lines):
        tag, _, rest = lines[i].partition(" ")
        if tag == "E":
            iid, step, k = rest.rsplit(" ", 2)
            pref = np.array([float(v) for v in lines[i + 1][2:].split()])
            negs = np.array([[float(v) for v in lines[i + 2 + j][2:].split()] for j in range(int(k))])
            ds.examples.append(LabeledExample(pref, negs, iid, int(step)))
            i += 2 + int(k)
        elif tag == "Q":
            label, _, vals = rest.partition(" ")
            ds.prune_labels.append(int(label))
            ds.prune_features.append(np.array([float(v) for v in vals.split()]))
            i += 1
        else:
            raise DatasetFormatError(f"unknown record {tag!r} on line {i + 1}")
    if ds.dim not in (None, dim):
        raise DatasetFormatError(f"header dim {dim} does not match records ({ds.dim})")
    if len(ds.examples) != int(meta["examples"]):
        raise DatasetFormatError("example count does not match header")
    return ds, meta.get("schema", "-")


# ---------------------------------------------------------------------------
# training configuration and helpers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Settings for one fixed-size run of retrospective DAgger or SMILe.

    ``alpha`` mixes the learned policy with a uniformly random frontier policy
    on every decision (DAgger); ``smile_alpha`` is the SMILe mixture rate.
    """

    iterations: int = 3
    alpha: float = 1.0
    exploration: ExplorationConfig = ExplorationConfig(epsilon=0.05, noise_variance=0.05)
    learner: pol.LearnerConfig = pol.LearnerConfig()
    smile_alpha: float = 0.5
    noisy_rollouts: int = 0
    normalize: bool = True
    select_prune: bool = False
    w_opt: float = 5.0
    max_expansions: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.smile_alpha <= 1.0:
            raise ValueError("mixing parameters must lie in [0, 1]")

    def rollout_exploration(self) -> ExplorationConfig:
        eps = 1.0 - self.alpha * (1.0 - self.exploration.epsilon)
        return ExplorationConfig(eps, 0.0, self.exploration.multi_terminal)


def fit_policy(dataset: Dataset, env, cfg: TrainConfig, tag: str = "ranker") -> pol.RankerPolicy:
    """Train a fresh ranker (and optional pruner) on ``dataset``."""
    P, N = dataset.pairs(cfg.normalize)
    if P.shape[0] == 0:
        raise ValueError("dataset has no pairwise examples")
    params = pol.init_ranker(env.feature_dim, cfg.learner.hidden, cfg.learner.seed, env.schema_id)
    result = pol.train_ranker(params, P, N, cfg.learner)
    pruner = None
    if cfg.select_prune and dataset.prune_labels and len(set(dataset.prune_labels)) == 2:
        pruner, _ = pol.train_pruner(
            np.vstack(dataset.prune_features), np.asarray(dataset.prune_labels), cfg.w_opt, cfg.learner, env.schema_id
        )
    return pol.RankerPolicy(result.params, cfg.normalize, pruner, tag)


def _budget(env, instance, cfg: TrainConfig | None, multi: bool) -> SearchBudget:
    b = env.budget(instance, cfg.max_expansions if cfg else None)
    if multi and b.stop_mode is not StopMode.EXHAUST_BUDGET:
        b = SearchBudget(b.max_expansions, StopMode.EXHAUST_BUDGET)
    return b


def _rollout_one(args):
    env, instance, policy, budget, explore, seed = args
    return run_search(env, instance, policy, budget, explore, seed)


def rollout_many(env, instances, policy, budgets, explore, seeds, jobs: int = 1) -> list[Trace]:
    """Independent roll-outs; output order follows ``instances`` for any ``jobs``."""
    tasks = [(env, inst, policy, b, explore, s) for inst, b, s in zip(instances, budgets, seeds)]
    if jobs <= 1 or len(tasks) <= 1:
        return [_rollout_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_rollout_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _trace_quality(trace: Trace):
    obj = trace.best_objective()
    return (math.inf if obj is None else obj, trace.tree.expansions)


def evaluate_policy(env, policy, instances, seed: int, jobs: int = 1, max_expansions=None) -> list[float]:
    budgets = [env.budget(inst, max_expansions) for inst in instances]
    seeds = [derive_seed(seed, 7, j) for j in range(len(instances))]
    traces = rollout_many(env, instances, policy, budgets, ExplorationConfig(), seeds, jobs)
    return [env.metric(t, inst) for t, inst in zip(traces, instances)]


# ---------------------------------------------------------------------------
# error rate
# ---------------------------------------------------------------------------


@dataclass
class ErrorRate:
    value: float
    mistakes: int
    actions: int
    excluded: int
    per_instance: list[float]


def error_rate_of_trace(trace: Trace) -> tuple[int, int]:
    """``(mistakes, actions)`` against the trace's own retrospective optimal path.

    Each retro action (expanding one non-terminal path node) is one decision;
    it counts as a mistake when the policy did not pop that node at the first
    step it was available.
    """
    retro = retrospective_oracle(trace, select_target_terminal(trace))
    actions = len(retro.path) - 1
    mistakes = sum(1 for dp in decision_points(trace, retro) if dp.first and dp.popped != dp.target)
    return mistakes, actions


def measure_error_rate(policy, instances, env, seed: int = 0, jobs: int = 1, max_expansions=None) -> ErrorRate:
    """Pooled error rate: total mistakes over total retro actions."""
    budgets = [env.budget(inst, max_expansions) for inst in instances]
    seeds = [derive_seed(seed, 11, j) for j in range(len(instances))]
    traces = rollout_many(env, instances, policy, budgets, ExplorationConfig(), seeds, jobs)
    return error_rate_from_traces(traces)


def error_rate_from_traces(traces: Sequence[Trace]) -> ErrorRate:
    mistakes = actions = excluded = 0
    per = []
    for tr in traces:
        if tr.no_terminal_found:
            excluded += 1
            continue
        m, a = error_rate_of_trace(tr)
        mistakes += m
        actions += a
        per.append(m / a if a else 0.0)
    value = mistakes / actions if actions else 0.0
    return ErrorRate(value, mistakes, actions, excluded, per)


# ---------------------------------------------------------------------------
# Retrospective DAgger
# ---------------------------------------------------------------------------


@dataclass
class IterationMetrics:
    iteration: int
    dataset_size: int
    validation_metric: float
    error_rate: float
    skipped: bool = False


@dataclass
class DaggerResult:
    policy: object
    metrics: list[IterationMetrics]
    dataset: Dataset
    candidates: list
    best_index: int


def _collect(env, instances, policy, cfg: TrainConfig, seed: int, iteration: int, jobs: int, noisy: int) -> Dataset:
    explore = cfg.rollout_exploration()
    multi = cfg.exploration.multi_terminal
    budgets = [_budget(env, inst, cfg, multi) for inst in instances]
    seeds = [derive_seed(seed, iteration, j) for j in range(len(instances))]
    traces = rollout_many(env, instances, policy, budgets, explore, seeds, jobs)
    if noisy > 0:
        noisy_explore = replace(explore, noise_variance=cfg.exploration.noise_variance)
        for r in range(noisy):
            nseeds = [derive_seed(seed, iteration, j, r + 1) for j in range(len(instances))]
            extra = rollout_many(env, instances, policy, budgets, noisy_explore, nseeds, jobs)
            traces = [min(a, b, key=_trace_quality) for a, b in zip(traces, extra)]
    data = Dataset(iteration=iteration)
    for tr in traces:
        data.extend(dataset_from_trace(tr, cfg.select_prune))
    return data


def _validate(env, policy, validation, seed, jobs, cfg):
    vals = evaluate_policy(env, policy, validation, seed, jobs, cfg.max_expansions)
    err = math.nan
    if env.stop_mode is StopMode.FIRST_TERMINAL:
        err = measure_error_rate(policy, validation, env, seed, jobs, cfg.max_expansions).value
    return float(np.mean(vals)), err


def retro_dagger(
    env,
    instances: Sequence,
    initial_policy,
    config: TrainConfig,
    dataset: Dataset | None = None,
    validation: Sequence | None = None,
    seed: int = 0,
    jobs: int = 1,
    noisy_first_pass: bool = False,
    on_iteration: Callable[[IterationMetrics], None] | None = None,
) -> DaggerResult:
    """Retrospective DAgger on a fixed problem size.

    Each iteration rolls out the current policy (mixed with random pops),
    relabels every trace with the retrospective oracle, aggregates the new
    examples into ``D`` and retrains from scratch on ``D``.  The candidate with
    the best validation metric (lower is better) is returned; the initial
    policy is a candidate too, so the result never validates worse than it.
    """
    if not instances:
        raise ValueError("retro_dagger needs at least one training instance")
    validation = list(validation) if validation else list(instances)
    D = dataset.copy() if dataset is not None else Dataset()
    current = initial_policy
    candidates = [initial_policy]
    v0, e0 = _validate(env, initial_policy, validation, seed, jobs, config)
    scores = [v0]
    metrics = [IterationMetrics(0, len(D), v0, e0)]
    if on_iteration:
        on_iteration(metrics[0])
    skipped = 0
    for i in range(1, config.iterations + 1):
        noisy = config.noisy_rollouts if (noisy_first_pass and i == 1) else 0
        Di = _collect(env, instances, current, config, seed, i, jobs, noisy)
        if len(Di) == 0:
            skipped += 1
            msg = f"iteration {i}: no roll-out produced training data"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            m = IterationMetrics(i, len(D), math.nan, math.nan, skipped=True)
            metrics.append(m)
            if on_iteration:
                on_iteration(m)
            continue
        D.extend(Di)
        D.iteration = i
        current = fit_policy(D, env, config, tag=f"retro_dagger_it{i}")
        v, e = _validate(env, current, validation, seed, jobs, config)
        candidates.append(current)
        scores.append(v)
        m = IterationMetrics(i, len(D), v, e)
        metrics.append(m)
        log.info("retro_dagger iteration %d: |D|=%d validation=%.4f error=%.4f", i, len(D), v, e)
        if on_iteration:
            on_iteration(m)
    if skipped == config.iterations:
        raise TrainingStarvedError(
            "no iteration produced training data",
            DaggerResult(initial_policy, metrics, D, candidates, 0),
        )
    best = int(np.argmin(scores))
    return DaggerResult(candidates[best], metrics, D, candidates, best)


# ---------------------------------------------------------------------------
# Retrospective SMILe
# ---------------------------------------------------------------------------


def smile_weights(alpha: float, iterations: int) -> np.ndarray:
    """Mixture weights after ``iterations`` rounds: initial policy first, then each trained policy."""
    w = [(1.0 - alpha) ** iterations]
    w += [alpha * (1.0 - alpha) ** (j - 1) for j in range(1, iterations + 1)]
    return np.asarray(w)


@dataclass
class SmileResult:
    policy: pol.MixturePolicy
    metrics: list[IterationMetrics]
    components: list


def retro_smile(
    env,
    instances: Sequence,
    initial_policy,
    config: TrainConfig,
    validation: Sequence | None = None,
    seed: int = 0,
    jobs: int = 1,
    noisy_first_pass: bool = False,
    on_iteration: Callable[[IterationMetrics], None] | None = None,
) -> SmileResult:
    """Retrospective SMILe: a geometric mixture of per-iteration policies.

    Iteration ``i`` rolls out the current mixture (one component sampled per
    roll-out), relabels the traces, trains a new component on that data only,
    and reweights as ``(1-a)^i`` for the initial policy and ``a(1-a)^(j-1)``
    for the ``j``-th trained component.
    """
    if not instances:
        raise ValueError("retro_smile needs at least one training instance")
    validation = list(validation) if validation else list(instances)
    a = config.smile_alpha
    components = [initial_policy]
    mixture = pol.MixturePolicy([initial_policy], [1.0], tag="retro_smile_it0")
    metrics = []
    trained = 0
    for i in range(1, config.iterations + 1):
        noisy = config.noisy_rollouts if (noisy_first_pass and i == 1) else 0
        Di = _collect(env, instances, mixture, config, seed, i, jobs, noisy)
        if len(Di) == 0:
            warnings.warn(f"iteration {i}: no roll-out produced training data", RuntimeWarning, stacklevel=2)
            metrics.append(IterationMetrics(i, 0, math.nan, math.nan, skipped=True))
            continue
        components.append(fit_policy(Di, env, config, tag=f"retro_smile_component{i}"))
        trained += 1
        weights = smile_weights(a, trained)
        keep = weights > 0.0
        mixture = pol.MixturePolicy(
            [c for c, k in zip(components, keep) if k], weights[keep] / weights[keep].sum(), tag=f"retro_smile_it{i}"
        )
        v, e = _validate(env, mixture, validation, seed, jobs, config)
        m = IterationMetrics(i, len(Di), v, e)
        metrics.append(m)
        if on_iteration:
            on_iteration(m)
    if trained == 0:
        raise TrainingStarvedError("no iteration produced training data")
    return SmileResult(mixture, metrics, components)


# ---------------------------------------------------------------------------
# scaling up
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurriculumConfig:
    sizes: tuple[int, ...]
    train: TrainConfig = TrainConfig()
    seed: int = 0

    def __post_init__(self):
        if not self.sizes or any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError("curriculum sizes must be nonempty and strictly increasing")


@dataclass
class ScaleResult:
    sizes: list[int]
    policies: list
    metrics: dict[int, list[IterationMetrics]]
    dataset: Dataset | None
    aborted_at: int | None = None


def scale_up(
    env,
    curriculum: CurriculumConfig,
    base_policy,
    instances_for: Callable[[int], tuple[Sequence, Sequence]],
    base_dataset: Dataset | None = None,
    method: str = "dagger",
    jobs: int = 1,
    on_iteration: Callable[[int, IterationMetrics], None] | None = None,
) -> ScaleResult:
    """Train one policy per curriculum size, each seeded by the previous one.

    ``instances_for(size)`` returns ``(train, validation)`` instances.  No expert
    data is used beyond ``base_dataset``; for DAgger the aggregate of the
    previous size initialises ``D`` at the next size.
    """
    sizes = list(curriculum.sizes)
    policies = [base_policy]
    metrics: dict[int, list[IterationMetrics]] = {}
    D = base_dataset.copy() if base_dataset is not None else None
    current = base_policy
    for idx, size in enumerate(sizes[1:], start=1):
        train, validation = instances_for(size)
        seed = derive_seed(curriculum.seed, size)
        hook = (lambda m, s=size: on_iteration(s, m)) if on_iteration else None
        try:
            if method == "dagger":
                res = retro_dagger(
                    env, train, current, curriculum.train, D, validation, seed, jobs, noisy_first_pass=True,
                    on_iteration=hook,
                )
                D = res.dataset
                D.size = size
                current = res.policy
                metrics[size] = res.metrics
            elif method == "smile":
                sres = retro_smile(
                    env, train, current, curriculum.train, validation, seed, jobs, noisy_first_pass=True,
                    on_iteration=hook,
                )
                current = sres.policy
                metrics[size] = sres.metrics
            else:
                raise ValueError(f"unknown method {method!r}")
        except TrainingStarvedError:
            log.warning("training starved at size %d; curriculum aborted", size)
            return ScaleResult(sizes[:idx], policies, metrics, D, aborted_at=size)
        policies.append(current)
    return ScaleResult(sizes, policies, metrics, D)
