"""Experiment orchestration: instance suites, training modes, evaluation, artifacts."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import policy as pol
from . import retrospective as retro
from . import theory
from .bnb import BnBEnvironment, Graph, IlpInstance, graph_from_text, graph_to_text
from .maze import MazeEnvironment, maze_from_text, maze_to_text
from .search import ExplorationConfig, Trace, run_search
from .seeding import GENERATOR, derive_seed

log = logging.getLogger(__name__)

MODES = ("retro_dagger", "retro_smile", "dagger_extrapolation", "dagger_cheating", "expert_baseline")
SPLITS = ("train", "validation", "test")
EXPERT = "builtin:expert"


class ConfigError(ValueError):
    pass


def make_env(name: str):
    if name == "maze":
        return MazeEnvironment()
    if name == "bnb":
        return BnBEnvironment()
    raise ConfigError(f"unknown environment {name!r} (expected maze or bnb)")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DEFAULT_SIZES = {"maze": (11, 15, 21, 25, 31), "bnb": (30, 40, 50, 60)}


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "maze"
    mode: str = "retro_dagger"
    sizes: tuple[int, ...] = ()
    seed: int = 0
    budget: int | None = None
    jobs: int = 1
    counts: tuple[int, int, int] = (48, 2, 100)
    instances: str | None = None
    train: retro.TrainConfig = retro.TrainConfig()

    def __post_init__(self):
        if self.env not in ("maze", "bnb"):
            raise ConfigError(f"unknown environment {self.env!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if not self.sizes:
            object.__setattr__(self, "sizes", DEFAULT_SIZES[self.env])
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ConfigError("sizes must be strictly increasing")
        if self.env == "maze" and any(s < 5 or s % 2 == 0 for s in self.sizes):
            raise ConfigError("maze sizes must be odd and at least 5")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.budget is not None and self.budget < 1:
            raise ConfigError("budget must be positive")
        if min(self.counts) < 1:
            raise ConfigError("every split needs at least one instance")


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.replace(",", " ").split())


def config_from_ini(text: str, **overrides) -> ExperimentConfig:
    """Build a config from INI text; keyword overrides win over the file."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    tr = cp["train"] if cp.has_section("train") else {}
    le = cp["learner"] if cp.has_section("learner") else {}
    known = {
        "experiment": {"env", "mode", "sizes", "seed", "budget", "jobs", "counts", "instances"},
        "train": {
            "iterations", "alpha", "epsilon", "noise_variance", "multi_terminal", "smile_alpha",
            "noisy_rollouts", "normalize", "select_prune", "w_opt", "max_expansions",
        },
        "learner": {"learning_rate", "epochs", "batch_size", "seed", "hidden"},
    }
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown config section [{sec}]")
        extra = set(cp[sec]) - known[sec]
        if extra:
            raise ConfigError(f"unknown keys in [{sec}]: {', '.join(sorted(extra))}")
    try:
        env = overrides.get("env") or ex.get("env", "maze")
        learner = pol.LearnerConfig(
            learning_rate=float(le.get("learning_rate", 0.01)),
            epochs=int(le.get("epochs", 20)),
            batch_size=int(le.get("batch_size", 64)),
            seed=int(le.get("seed", 0)),
            hidden=int(le.get("hidden", 32)),
        )
        mt = tr.get("multi_terminal", "auto")
        multi = env == "bnb" if mt.strip() == "auto" else _parse_bool(mt)
        max_exp = tr.get("max_expansions", "").strip()
        train = retro.TrainConfig(
            iterations=int(tr.get("iterations", 3)),
            alpha=float(tr.get("alpha", 1.0)),
            exploration=ExplorationConfig(
                float(tr.get("epsilon", 0.05)), float(tr.get("noise_variance", 0.05)), multi
            ),
            learner=learner,
            smile_alpha=float(tr.get("smile_alpha", 0.5)),
            noisy_rollouts=int(tr.get("noisy_rollouts", 0)),
            normalize=_parse_bool(tr.get("normalize", "true")),
            select_prune=_parse_bool(tr.get("select_prune", "false")),
            w_opt=float(tr.get("w_opt", 5.0)),
            max_expansions=int(max_exp) if max_exp else None,
        )
        budget = overrides.get("budget")
        if budget is None and ex.get("budget", "").strip():
            budget = int(ex["budget"])
        seed = overrides.get("seed")
        return ExperimentConfig(
            env=env,
            mode=overrides.get("mode") or ex.get("mode", "retro_dagger"),
            sizes=_ints(ex.get("sizes", "")),
            seed=int(seed if seed is not None else ex.get("seed", 0)),
            budget=budget,
            jobs=int(overrides.get("jobs") or ex.get("jobs", 1)),
            counts=_ints(ex.get("counts", "48 2 100")),
            instances=overrides.get("instances") or (ex.get("instances", "").strip() or None),
            train=train,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_to_ini(cfg: ExperimentConfig) -> str:
    """Fully resolved config; reloading it reproduces ``cfg``.  ``jobs`` is
    recorded but does not affect results."""
    t = cfg.train
    cp = configparser.ConfigParser()
    cp["experiment"] = {
        "env": cfg.env,
        "mode": cfg.mode,
        "sizes": ", ".join(map(str, cfg.sizes)),
        "seed": str(cfg.seed),
        "budget": "" if cfg.budget is None else str(cfg.budget),
        "jobs": str(cfg.jobs),
        "counts": " ".join(map(str, cfg.counts)),
        "instances": cfg.instances or "",
    }
    cp["train"] = {
        "iterations": str(t.iterations),
        "alpha": repr(t.alpha),
        "epsilon": repr(t.exploration.epsilon),
        "noise_variance": repr(t.exploration.noise_variance),
        "multi_terminal": str(t.exploration.multi_terminal).lower(),
        "smile_alpha": repr(t.smile_alpha),
        "noisy_rollouts": str(t.noisy_rollouts),
        "normalize": str(t.normalize).lower(),
        "select_prune": str(t.select_prune).lower(),
        "w_opt": repr(t.w_opt),
        "max_expansions": "" if t.max_expansions is None else str(t.max_expansions),
    }
    cp["learner"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(t.learner).items()}
    buf = io.StringIO()
    buf.write(f"# generator={GENERATOR} root_seed={cfg.seed}\n")
    cp.write(buf)
    return buf.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of everything that can change results (``jobs`` and paths excluded)."""
    ini = config_to_ini(cfg)
    keep = [ln for ln in ini.splitlines() if not ln.startswith(("jobs", "instances"))]
    return hashlib.sha256("\n".join(keep).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# instance suites
# ---------------------------------------------------------------------------


def instance_seed(root: int, size: int, split: str, index: int) -> int:
    return derive_seed(root, size, SPLITS.index(split), index)


def make_instance(env, size: int, split: str, index: int, root: int):
    iid = f"{env.name}-{size}-{split}-{index:03d}"
    return env.generate(size, instance_seed(root, size, split, index), iid)


@dataclass
class Suite:
    size: int
    train: list
    validation: list
    test: list

    def split(self, name: str) -> list:
        return getattr(self, name)


def generate_suite(env, size: int, counts: Sequence[int], root: int) -> Suite:
    parts = [[make_instance(env, size, sp, i, root) for i in range(k)] for sp, k in zip(SPLITS, counts)]
    return Suite(size, *parts)


def _instance_text(env, inst) -> tuple[str, str]:
    if env.name == "maze":
        return maze_to_text(inst), ".maze"
    return graph_to_text(inst.graph), ".graph"


def write_suites(env, suites: Sequence[Suite], out: Path, root: int) -> Path:
    """Instance files plus ``manifest.json``; byte-identical for identical inputs."""
    out = Path(out)
    entries = []
    for suite in suites:
        for sp in SPLITS:
            for inst in suite.split(sp):
                text, ext = _instance_text(env, inst)
                rel = Path(str(suite.size)) / sp / f"{inst.instance_id}{ext}"
                path = out / rel
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text)
                entry = {"file": rel.as_posix(), "id": inst.instance_id, "size": suite.size, "split": sp}
                if env.name == "bnb":
                    entry["optimum"] = inst.optimum
                entries.append(entry)
    manifest = {"env": env.name, "generator": GENERATOR, "root_seed": root, "instances": entries}
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return mpath


def read_suites(env, directory: Path, sizes: Sequence[int] | None = None) -> dict[int, Suite]:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"no manifest at {mpath}") from None
    if manifest.get("env") != env.name:
        raise ConfigError(f"{mpath} holds {manifest.get('env')} instances, not {env.name}")
    suites: dict[int, Suite] = {}
    for e in manifest["instances"]:
        size = int(e["size"])
        if sizes is not None and size not in sizes:
            continue
        text = (directory / e["file"]).read_text()
        if env.name == "maze":
            inst = maze_from_text(text, e["id"])
        else:
            inst = IlpInstance.from_graph(graph_from_text(text), e["id"], e.get("optimum"))
        suites.setdefault(size, Suite(size, [], [], [])).split(e["split"]).append(inst)
    return suites


def load_suites(env, cfg: ExperimentConfig) -> dict[int, Suite]:
    if cfg.instances:
        suites = read_suites(env, Path(cfg.instances), cfg.sizes)
        missing = [s for s in cfg.sizes if s not in suites]
        if missing:
            raise ConfigError(f"instance directory lacks sizes {missing}")
        return suites
    return {s: generate_suite(env, s, cfg.counts, cfg.seed) for s in cfg.sizes}


# ---------------------------------------------------------------------------
# training modes
# ---------------------------------------------------------------------------


@dataclass
class TrainedModels:
    policies: dict[int, object]
    metrics: list[dict] = field(default_factory=list)
    aborted_at: int | None = None


def expert_dataset(env, instances, jobs: int = 1, budget: int | None = None) -> retro.Dataset:
    """Expert roll-outs relabelled by the retrospective oracle (uniform data pipeline)."""
    expert = env.expert_policy()
    budgets = [env.budget(inst, budget) for inst in instances]
    traces = retro.rollout_many(env, instances, expert, budgets, ExplorationConfig(), [0] * len(instances), jobs)
    data = retro.Dataset()
    for tr in traces:
        data.extend(retro.dataset_from_trace(tr, with_pruner=True))
    return data


def _row(size, m: retro.IterationMetrics) -> dict:
    return {
        "size": size,
        "iteration": m.iteration,
        "dataset_size": m.dataset_size,
        "validation_metric": m.validation_metric,
        "error_rate": m.error_rate,
        "skipped": int(m.skipped),
    }


def train_models(cfg: ExperimentConfig, suites: dict[int, Suite] | None = None, env=None) -> TrainedModels:
    """Run ``cfg.mode`` over the curriculum and return one policy per size."""
    env = env or make_env(cfg.env)
    suites = suites or load_suites(env, cfg)
    sizes = list(cfg.sizes)
    tc = cfg.train
    if cfg.budget is not None and tc.max_expansions is None:
        tc = replace(tc, max_expansions=cfg.budget)
    out = TrainedModels({})
    if cfg.mode == "expert_baseline":
        out.policies = {s: env.expert_policy() for s in sizes}
        return out
    if cfg.mode == "dagger_cheating":
        for s in sizes:
            data = expert_dataset(env, suites[s].train, cfg.jobs, tc.max_expansions)
            out.policies[s] = retro.fit_policy(data, env, tc, tag=f"cheating_{s}")
            out.metrics.append({"size": s, "iteration": 0, "dataset_size": len(data), "validation_metric": math.nan,
                                "error_rate": math.nan, "skipped": 0})
        return out

    s1 = sizes[0]
    base_data = expert_dataset(env, suites[s1].train, cfg.jobs, tc.max_expansions)
    base_data.size = s1
    base = retro.fit_policy(base_data, env, tc, tag=f"base_{s1}")
    out.metrics.append({"size": s1, "iteration": 0, "dataset_size": len(base_data), "validation_metric": math.nan,
                        "error_rate": math.nan, "skipped": 0})
    if cfg.mode == "dagger_extrapolation":
        out.policies = {s: base for s in sizes}
        return out

    curriculum = retro.CurriculumConfig(tuple(sizes), tc, cfg.seed)
    res = retro.scale_up(
        env,
        curriculum,
        base,
        lambda s: (suites[s].train, suites[s].validation),
        base_data,
        method="dagger" if cfg.mode == "retro_dagger" else "smile",
        jobs=cfg.jobs,
        on_iteration=lambda s, m: out.metrics.append(_row(s, m)),
    )
    out.policies = dict(zip(res.sizes, res.policies))
    out.aborted_at = res.aborted_at
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class SizeEvaluation:
    size: int
    rows: list[dict]
    metric: np.ndarray
    error: retro.ErrorRate

    @property
    def mean(self) -> float:
        return float(self.metric.mean())


def evaluate(env, policy, instances, size: int, seed: int, budget: int | None = None, jobs: int = 1) -> SizeEvaluation:
    """Roll ``policy`` out on ``instances`` without exploration; metric and error rate come from the same traces."""
    budgets = [env.budget(inst, budget) for inst in instances]
    seeds = [derive_seed(seed, size, 7, j) for j in range(len(instances))]
    traces = retro.rollout_many(env, instances, policy, budgets, ExplorationConfig(), seeds, jobs)
    rows = []
    values = []
    for inst, tr, b in zip(instances, traces, budgets):
        v = env.metric(tr, inst)
        values.append(v)
        if env.name == "maze":
            rows.append({"instance": inst.instance_id, "size": size, "budget": b.max_expansions,
                         "explored_squares": int(v), "expansions": tr.tree.expansions})
        else:
            best = tr.best_objective()
            rows.append({"instance": inst.instance_id, "size": size, "budget": b.max_expansions,
                         "incumbent": "" if best is None else best, "optimum": inst.optimum,
                         "gap_percent": v, "expansions": tr.tree.expansions})
    return SizeEvaluation(size, rows, np.asarray(values, dtype=float), retro.error_rate_from_traces(traces))


def evaluate_models(cfg: ExperimentConfig, models: TrainedModels, suites: dict[int, Suite], env=None):
    env = env or make_env(cfg.env)
    return {
        s: evaluate(env, p, suites[s].test, s, cfg.seed, cfg.budget, cfg.jobs) for s, p in models.policies.items()
    }


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _header(cfg_seed: int) -> str:
    return f"# generator={GENERATOR} root_seed={cfg_seed}\n"


def write_csv(path: Path, rows: list[dict], seed: int, columns: Sequence[str] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(columns or (rows[0].keys() if rows else []))
    with path.open("w", newline="") as fh:
        fh.write(_header(seed))
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k, "")) for k in cols})


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def read_csv(path: Path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))


def save_models(models: TrainedModels, out: Path, mode: str) -> dict[int, str]:
    out = Path(out)
    (out / "models").mkdir(parents=True, exist_ok=True)
    refs: dict[int, str] = {}
    written: dict[int, str] = {}
    for s, p in models.policies.items():
        if isinstance(p, (pol.RankerPolicy, pol.MixturePolicy)):
            key = id(p)
            if key not in written:  # extrapolation shares one model across sizes
                rel = f"models/{mode}_{s}.model"
                pol.save_policy(p, out / rel)
                written[key] = rel
            refs[s] = written[key]
        else:
            refs[s] = EXPERT
    (out / "models" / "index.json").write_text(json.dumps({str(k): v for k, v in refs.items()}, indent=1) + "\n")
    return refs


def load_models(directory: Path, env) -> dict[int, object]:
    directory = Path(directory)
    index = json.loads((directory / "models" / "index.json").read_text())
    cache: dict[str, object] = {}
    out = {}
    for s, ref in index.items():
        if ref == EXPERT:
            out[int(s)] = env.expert_policy()
        else:
            if ref not in cache:
                cache[ref] = pol.load_policy(directory / ref)
            out[int(s)] = cache[ref]
    return out


@dataclass
class RunRecord:
    config_hash: str
    env: str
    mode: str
    generator: str
    root_seed: int
    sizes: list[int]
    per_instance: dict[str, dict[str, float]]
    mean_metric: dict[str, float]
    error_rate: dict[str, float]
    error_excluded: dict[str, int]
    aborted_at: int | None
    wall_time: float
    artifacts: dict[str, str]

    def metrics_view(self) -> dict:
        """Everything that must reproduce bit-exactly (wall time and paths excluded)."""
        return {
            "config_hash": self.config_hash,
            "per_instance": self.per_instance,
            "mean_metric": self.mean_metric,
            "error_rate": self.error_rate,
            "error_excluded": self.error_excluded,
        }

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"


def _result_columns(env_name: str):
    if env_name == "maze":
        return ["instance", "size", "budget", "explored_squares", "expansions"]
    return ["instance", "size", "budget", "incumbent", "optimum", "gap_percent", "expansions"]


def write_evaluation(cfg: ExperimentConfig, evals: dict[int, SizeEvaluation], out: Path) -> dict[str, str]:
    out = Path(out)
    rows = [r for s in sorted(evals) for r in evals[s].rows]
    write_csv(out / "results.csv", rows, cfg.seed, _result_columns(cfg.env))
    summary = [
        {
            "size": s,
            "mode": cfg.mode,
            "mean": ev.mean,
            "median": float(np.median(ev.metric)),
            "error_rate": ev.error.value,
            "error_excluded": ev.error.excluded,
            "instances": ev.metric.size,
        }
        for s, ev in sorted(evals.items())
    ]
    write_csv(out / "summary.csv", summary, cfg.seed)
    return {"results": "results.csv", "summary": "summary.csv"}


def run_experiment(cfg: ExperimentConfig, out: Path | None = None, suites=None) -> tuple[RunRecord, TrainedModels,
                                                                                          dict[int, SizeEvaluation]]:
    """Train per ``cfg.mode``, evaluate on every test split and (optionally) persist everything."""
    t0 = time.perf_counter()
    env = make_env(cfg.env)
    suites = suites or load_suites(env, cfg)
    artifacts: dict[str, str] = {}
    models = train_models(cfg, suites, env)
    evals = evaluate_models(cfg, models, suites, env)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(config_to_ini(cfg))
        artifacts["config"] = "config.ini"
        write_csv(out / "metrics.csv", models.metrics, cfg.seed,
                  ["size", "iteration", "dataset_size", "validation_metric", "error_rate", "skipped"])
        artifacts["metrics"] = "metrics.csv"
        refs = save_models(models, out, cfg.mode)
        artifacts.update({f"model_{s}": r for s, r in refs.items()})
        artifacts.update(write_evaluation(cfg, evals, out))
    record = RunRecord(
        config_hash=config_hash(cfg),
        env=cfg.env,
        mode=cfg.mode,
        generator=GENERATOR,
        root_seed=cfg.seed,
        sizes=sorted(evals),
        per_instance={str(s): {r["instance"]: float(v) for r, v in zip(ev.rows, ev.metric)} for s, ev in evals.items()},
        mean_metric={str(s): ev.mean for s, ev in evals.items()},
        error_rate={str(s): ev.error.value for s, ev in evals.items()},
        error_excluded={str(s): ev.error.excluded for s, ev in evals.items()},
        aborted_at=models.aborted_at,
        wall_time=time.perf_counter() - t0,
        artifacts=artifacts,
    )
    if out is not None:
        (Path(out) / "run_record.json").write_text(record.to_json())
    return record, models, evals


# ---------------------------------------------------------------------------
# theory validation
# ---------------------------------------------------------------------------

THEORY_COLUMNS = ["epsilon", "N", "trials", "mean", "expected", "rel_error", "variance", "alpha", "tail_freq",
                  "bound_value", "mean_ok", "tail_ok"]


@dataclass
class TheoryReport:
    rows: list[dict]
    cells: list[dict]

    @property
    def all_pass(self) -> bool:
        return all(c["mean_ok"] and c["tail_ok"] for c in self.cells)


def validate_theory(epsilons=(0.1, 0.2, 0.3, 0.4), targets=(10, 50), trials: int = 100_000, seed: int = 0,
                    mean_tol: float = 0.02, alphas=theory.DEFAULT_ALPHAS) -> TheoryReport:
    rows, cells = [], []
    for i, eps in enumerate(epsilons):
        for j, n in enumerate(targets):
            res = theory.simulate_hitting_time(theory.WalkConfig(eps, n, trials, derive_seed(seed, i, j)), alphas)
            expected = theory.expected_hitting_time(eps, n)
            rel = abs(res.mean - expected) / expected
            tail = theory.tail_check(res)
            cell = {"epsilon": eps, "N": n, "mean": res.mean, "expected": expected, "rel_error": rel,
                    "mean_ok": rel <= mean_tol, "tail_ok": tail.passed, "slope": tail.slope}
            cells.append(cell)
            for a, f, bnd in zip(tail.alphas, tail.freqs, tail.bound):
                rows.append({"epsilon": eps, "N": n, "trials": trials, "mean": res.mean, "expected": expected,
                             "rel_error": rel, "variance": res.variance, "alpha": a, "tail_freq": f,
                             "bound_value": bnd, "mean_ok": int(cell["mean_ok"]), "tail_ok": int(tail.passed)})
    return TheoryReport(rows, cells)
