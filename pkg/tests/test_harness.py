import json

import pytest

from retrosearch import cli
from retrosearch import harness as H
from retrosearch.maze import maze_from_text

SMALL = """
[experiment]
env = maze
sizes = 7, 9
counts = 4 1 3
seed = 5

[train]
iterations = 1

[learner]
epochs = 2
"""


def test_config_round_trip_and_overrides():
    cfg = H.config_from_ini(SMALL)
    assert cfg.sizes == (7, 9) and cfg.counts == (4, 1, 3) and cfg.train.iterations == 1
    again = H.config_from_ini(H.config_to_ini(cfg))
    assert again == cfg
    over = H.config_from_ini(SMALL, seed=9, mode="retro_smile", jobs=2)
    assert over.seed == 9 and over.mode == "retro_smile" and over.jobs == 2
    assert H.config_hash(over) == H.config_hash(H.config_from_ini(SMALL, seed=9, mode="retro_smile", jobs=1))
    assert H.config_hash(cfg) != H.config_hash(over)


@pytest.mark.parametrize(
    "text",
    [
        "[experiment]\nenv = chess\n",
        "[experiment]\nmode = magic\n",
        "[experiment]\nsizes = 11, 8\n",
        "[experiment]\nbogus = 1\n",
        "[nonsense]\n",
        "[train]\nalpha = 2\n",
        "[train]\nnormalize = maybe\n",
        "no section header",
    ],
)
def test_bad_configs_raise(text):
    with pytest.raises(H.ConfigError):
        H.config_from_ini(text)


def test_generate_manifest_and_reload(tmp_path):
    cfg_path = tmp_path / "c.ini"
    cfg_path.write_text(SMALL)
    assert cli.main(["generate", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["generate", "--config", str(cfg_path), "--out", str(tmp_path / "b")]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(ma["instances"]) == 2 * 8
    assert ma["generator"] == "PCG64" and ma["root_seed"] == 5
    for e in ma["instances"]:
        text_a = (tmp_path / "a" / e["file"]).read_text()
        assert text_a == (tmp_path / "b" / e["file"]).read_text()
        maze_from_text(text_a)  # validates the perfect-maze invariants
    env = H.make_env("maze")
    suites = H.read_suites(env, tmp_path / "a")
    mem = H.generate_suite(env, 7, (4, 1, 3), 5)
    assert [(s.walls == t.walls).all() for s, t in zip(suites[7].test, mem.test)] == [True] * 3


def test_default_split_is_48_2_100(tmp_path):
    assert cli.main(["generate", "--env", "maze", "--sizes", "5", "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["instances"]) == 150


def test_exit_codes(tmp_path):
    assert cli.main(["generate", "--env", "maze", "--sizes", "8", "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "y")]) == 4
    assert cli.main(["evaluate", "--env", "maze", "--models", str(tmp_path / "none"), "--out", str(tmp_path / "z")]) == 4


def test_train_and_evaluate_cli(tmp_path):
    cfg_path = tmp_path / "c.ini"
    cfg_path.write_text(SMALL)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    for name in ("config.ini", "metrics.csv", "results.csv", "summary.csv", "run_record.json", "models/index.json"):
        assert (out / name).exists()
    assert (out / "results.csv").read_text().startswith("# generator=PCG64 root_seed=5")
    rec = json.loads((out / "run_record.json").read_text())
    ev = tmp_path / "ev"
    assert cli.main(["evaluate", "--config", str(cfg_path), "--models", str(out), "--out", str(ev)]) == 0
    assert (ev / "results.csv").read_text() == (out / "results.csv").read_text()
    rows = H.read_csv(out / "metrics.csv")
    assert {"size", "iteration", "dataset_size", "validation_metric", "error_rate"} <= set(rows[0])
    assert rec["sizes"] == [7, 9]


def test_modes_definitions():
    cfg = H.config_from_ini(SMALL)
    env = H.make_env("maze")
    suites = H.load_suites(env, cfg)
    extra = H.train_models(H.config_from_ini(SMALL, mode="dagger_extrapolation"), suites)
    assert extra.policies[7] is extra.policies[9]
    expert = H.train_models(H.config_from_ini(SMALL, mode="expert_baseline"), suites)
    assert expert.policies[9].tag == "manhattan"
    cheat = H.train_models(H.config_from_ini(SMALL, mode="dagger_cheating"), suites)
    assert cheat.policies[7] is not cheat.policies[9]
    # retro at the base size equals extrapolation at the base size
    retro = H.train_models(cfg, suites)
    a = H.evaluate(env, retro.policies[7], suites[7].test, 7, cfg.seed)
    b = H.evaluate(env, extra.policies[7], suites[7].test, 7, cfg.seed)
    assert a.metric.tolist() == b.metric.tolist()


def test_expert_baseline_reports_astar_counts():
    cfg = H.config_from_ini(SMALL, mode="expert_baseline")
    rec, _, evals = H.run_experiment(cfg)
    assert all(v > 0 for v in evals[9].metric)


def test_run_is_deterministic_across_jobs():
    a, _, _ = H.run_experiment(H.config_from_ini(SMALL, jobs=1))
    b, _, _ = H.run_experiment(H.config_from_ini(SMALL, jobs=2))
    assert a.metrics_view() == b.metrics_view()


def test_bnb_small_unlimited_gap_zero():
    env = H.make_env("bnb")
    cfg = H.ExperimentConfig(env="bnb", mode="expert_baseline", sizes=(12,), counts=(1, 1, 5), budget=10_000)
    suites = H.load_suites(env, cfg)
    rec, _, evals = H.run_experiment(cfg, suites=suites)
    assert evals[12].metric.tolist() == [0.0] * 5


def test_validate_theory_cli(tmp_path):
    code = cli.main(["validate-theory", "--epsilons", "0,0.25", "--targets", "5", "--trials", "20000",
                     "--out", str(tmp_path)])
    assert code == 0
    rows = H.read_csv(tmp_path / "theory.csv")
    eps0 = [r for r in rows if float(r["epsilon"]) == 0.0]
    assert all(float(r["mean"]) == 5.0 for r in eps0)
    assert {"epsilon", "N", "trials", "mean", "variance", "alpha", "tail_freq", "bound_value"} <= set(rows[0])
