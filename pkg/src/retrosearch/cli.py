"""Command-line entry point: ``retrosearch <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness as H
from . import policy as pol
from .bnb import GraphFormatError
from .maze import MazeFormatError
from .retrospective import TrainingStarvedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STARVED = 3
EXIT_IO = 4


def _common(p: argparse.ArgumentParser, mode: bool = True) -> None:
    p.add_argument("--env", choices=("maze", "bnb"))
    if mode:
        p.add_argument("--mode", choices=H.MODES)
    p.add_argument("--config", type=Path, help="INI file with [experiment], [train] and [learner] sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--budget", type=int, help="node-expansion budget per search")
    p.add_argument("--out", type=Path, required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="retrosearch", description="Retrospective imitation for tree search.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write train/validation/test instance files and a manifest")
    _common(g, mode=False)
    g.add_argument("--sizes", help="comma-separated problem sizes")
    g.add_argument("--counts", help="train,validation,test counts (default 48,2,100)")

    for name in ("train", "scale-up"):
        t = sub.add_parser(name, help="train per --mode over the size curriculum, then evaluate on the test split")
        _common(t)
        t.add_argument("--instances", type=Path, help="directory written by 'generate'")

    e = sub.add_parser("evaluate", help="evaluate saved models on test instances")
    _common(e)
    e.add_argument("--models", type=Path, required=True, help="output directory of a 'train' run")
    e.add_argument("--instances", type=Path)

    v = sub.add_parser("validate-theory", help="simulate the hitting-time walk and compare with the closed form")
    v.add_argument("--epsilons", default="0.1,0.2,0.3,0.4")
    v.add_argument("--targets", default="10,50")
    v.add_argument("--trials", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", type=Path, required=True)
    return ap


def _load_config(args) -> H.ExperimentConfig:
    text = ""
    if getattr(args, "config", None) is not None:
        text = args.config.read_text()
    overrides = {k: getattr(args, k, None) for k in ("env", "mode", "seed", "jobs", "budget")}
    inst = getattr(args, "instances", None)
    overrides["instances"] = str(inst) if inst else None
    cfg = H.config_from_ini(text, **overrides)
    sizes = getattr(args, "sizes", None)
    counts = getattr(args, "counts", None)
    if sizes or counts:
        try:
            cfg = replace(
                cfg,
                sizes=H._ints(sizes) if sizes else cfg.sizes,
                counts=H._ints(counts) if counts else cfg.counts,
            )
        except ValueError as exc:
            raise H.ConfigError(str(exc)) from None
    return cfg


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    env = H.make_env(cfg.env)
    suites = [H.generate_suite(env, s, cfg.counts, cfg.seed) for s in cfg.sizes]
    path = H.write_suites(env, suites, args.out, cfg.seed)
    (args.out / "config.ini").write_text(H.config_to_ini(cfg))
    print(f"wrote {sum(len(s.train) + len(s.validation) + len(s.test) for s in suites)} instances; manifest {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    try:
        record, _, evals = H.run_experiment(cfg, args.out)
    except TrainingStarvedError as exc:
        print(f"training_starved: {exc}", file=sys.stderr)
        return EXIT_STARVED
    for s in record.sizes:
        print(f"size {s}: mean metric {record.mean_metric[str(s)]:.4f}  error rate {record.error_rate[str(s)]:.4f}")
    if record.aborted_at is not None:
        print(f"training_starved at size {record.aborted_at}; partial results kept", file=sys.stderr)
        return EXIT_STARVED
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    env = H.make_env(cfg.env)
    policies = H.load_models(args.models, env)
    suites = H.load_suites(env, cfg)
    missing = [s for s in cfg.sizes if s not in policies]
    if missing:
        raise H.ConfigError(f"no saved model for sizes {missing}")
    evals = {s: H.evaluate(env, policies[s], suites[s].test, s, cfg.seed, cfg.budget, cfg.jobs) for s in cfg.sizes}
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.ini").write_text(H.config_to_ini(cfg))
    H.write_evaluation(cfg, evals, args.out)
    for s, ev in evals.items():
        print(f"size {s}: mean {ev.mean:.4f}  error rate {ev.error.value:.4f}")
    return EXIT_OK


def cmd_validate_theory(args) -> int:
    try:
        eps = tuple(float(v) for v in args.epsilons.split(","))
        targets = tuple(int(v) for v in args.targets.split(","))
    except ValueError as exc:
        raise H.ConfigError(str(exc)) from None
    report = H.validate_theory(eps, targets, args.trials, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    H.write_csv(args.out / "theory.csv", report.rows, args.seed, H.THEORY_COLUMNS)
    for c in report.cells:
        verdict = "pass" if c["mean_ok"] and c["tail_ok"] else "FAIL"
        print(
            f"eps={c['epsilon']:<4} N={c['N']:<3} mean={c['mean']:.3f} expected={c['expected']:.3f} "
            f"rel_err={c['rel_error']:.4f} tail_slope={c['slope']:.3f} {verdict}"
        )
    print("all pass" if report.all_pass else "some checks failed")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "scale-up": cmd_train,
    "evaluate": cmd_evaluate,
    "validate-theory": cmd_validate_theory,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except H.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, pol.ModelFormatError, MazeFormatError, GraphFormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
