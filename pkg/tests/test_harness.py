import json
import os

import numpy as np
import pytest

from romance.attacker import SprqAttacker
from romance.ego import EgoController
from romance.envs import make_env
from romance.evolution import Archive, ArchiveEntry, save_archive
from romance.harness import (
    budget_sweep,
    evaluate,
    evaluate_ega_dir,
    eval_checkpoint,
    gen_attackers,
    load_config,
    load_ego,
    run,
    sweep_checkpoint,
    EvalSettings,
)
from romance.trainers import ConfigError


SMOKE = os.path.join(os.path.dirname(__file__), "..", "configs", "smoke.yaml")


def write_cfg(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


MINI = """
out_dir: {out}
env: {{id: chain_coop}}
train:
  method: {method}
  seeds: [0]
  n_gen: 2
  n_adv: 1
  n_ego: 1
  n_p: 2
  n_a: 3
  quality_episodes: 2
  eval_every: 2
  eval_episodes: 2
ego: {{mixer: vdn, hidden: 16, window: 2, batch_episodes: 4}}
attack: {{capacity: 3, attacker_hidden: 16}}
eval:
  protocols: [natural, random]
  episodes: 2
  seeds: [100, 101]
  ega_seeds: [900]
  ega_top: 2
"""


def small_ego(env_id="chain_coop", seed=0):
    env = make_env(env_id)
    return EgoController(env.spec, mixer="vdn", hidden=16, window=2,
                         rng=np.random.default_rng(seed))


def saved_attacker_dir(tmp_path, env_id="chain_coop", n=2):
    env = make_env(env_id)
    arc = Archive(capacity=n, threshold=0.0)
    for i in range(n):
        att = SprqAttacker.fresh(
            env.spec.state_len + 1, env.spec.n_agents, 0.04, 0.5,
            hidden=8, rng=np.random.default_rng(i),
        )
        att.buffer.push(np.zeros(env.spec.state_len + 1))
        arc.entries.append(ArchiveEntry(att, float(-i), i + 1))
    d = tmp_path / "attackers"
    save_archive(arc, d)
    return str(d)


class TestConfigLoading:
    def test_smoke_config_parses(self):
        exp = load_config(SMOKE)
        assert exp.train.method == "romance"
        assert exp.seeds == [0]
        assert exp.evaluation.protocols == ["natural", "random"]

    def test_unknown_field_diagnostic(self, tmp_path):
        path = write_cfg(tmp_path, "out_dir: x\ntrain: {banana: 1}\n")
        with pytest.raises(ConfigError, match="train.banana"):
            load_config(path)

    def test_yaml_error_has_line(self, tmp_path):
        path = write_cfg(tmp_path, "out_dir: x\ntrain: [unclosed\n  nope: {{\n")
        with pytest.raises(ConfigError, match="line"):
            load_config(path)

    def test_missing_out_dir(self, tmp_path):
        path = write_cfg(tmp_path, "env: {id: chain_coop}\n")
        with pytest.raises(ConfigError, match="out_dir"):
            load_config(path)

    def test_ega_requires_directory(self, tmp_path):
        path = write_cfg(
            tmp_path,
            "out_dir: x\neval: {protocols: [ega], ega_dir: /nope/missing}\n",
        )
        with pytest.raises(ConfigError, match="ega_dir"):
            load_config(path)


class TestRun:
    def test_malformed_config_no_output_dir(self, tmp_path):
        bad = write_cfg(tmp_path, "train: {method: nope}\nout_dir: " + str(tmp_path / "out"))
        code = run(bad)
        assert code == 2
        assert not (tmp_path / "out").exists()

    def test_smoke_run_emits_declared_files(self, tmp_path):
        cfg = write_cfg(tmp_path, MINI.format(out=tmp_path / "out", method="romance"))
        code = run(cfg)
        assert code == 0
        out = tmp_path / "out"
        assert (out / "report.json").exists()
        assert (out / "0" / "metrics.csv").exists()
        assert (out / "0" / "ego.ckpt").exists()
        assert (out / "0" / "gen2" / "ego.ckpt").exists()
        report = json.loads((out / "report.json").read_text())
        assert report["runs"][0]["stats"]["budget_violations"] == 0
        protos = [r["protocol"] for r in report["runs"][0]["reports"]]
        assert protos == ["natural", "random"]

    def test_shipped_smoke_config_under_60s(self, tmp_path):
        import time

        t0 = time.time()
        code = run(SMOKE, out_dir=str(tmp_path / "smoke_out"))
        elapsed = time.time() - t0
        assert code == 0
        assert elapsed < 60.0, f"smoke run took {elapsed:.1f}s"
        out = tmp_path / "smoke_out"
        assert (out / "report.json").exists()
        assert (out / "0" / "metrics.csv").exists()
        assert (out / "0" / "ego.ckpt").exists()

    def test_metrics_schema_no_nans(self, tmp_path):
        cfg = write_cfg(tmp_path, MINI.format(out=tmp_path / "out", method="vanilla"))
        assert run(cfg) == 0
        lines = (tmp_path / "out" / "0" / "metrics.csv").read_text().strip().splitlines()
        assert lines[0] == "generation,protocol,win_rate,mean_return,ci95"
        for line in lines[1:]:
            cells = line.split(",")
            assert len(cells) == 5
            assert "nan" not in line.lower()
            float(cells[2]), float(cells[3]), float(cells[4])


class TestEvaluate:
    def test_natural_win_rate_one_for_trained_ego_on_easy_env(self):
        from romance.trainers import TrainConfig, train

        cfg = TrainConfig(
            env_id="chain_coop", method="vanilla", seed=1, mixer="vdn", hidden=32,
            window=2, n_gen=40, n_ego=2, n_p=2, eval_every=40, eval_episodes=2,
            batch_episodes=8, ego_lr=2e-3, ego_updates=2, target_interval=20,
            epsilon_fraction=0.5,
        )
        res = train(cfg)
        rep = evaluate(res.ego, "natural", None, 8, [100, 101], "chain_coop")
        assert rep.win_rate == 1.0

    def test_natural_equals_zero_budget_wrapper(self, tmp_path):
        ego = small_ego()
        nat = evaluate(ego, "natural", None, 4, [100, 101], "chain_coop")
        attackers = [
            SprqAttacker.fresh(3, 2, 0.04, 0.9, hidden=8, rng=np.random.default_rng(9))
        ]
        ega0 = evaluate(ego, "ega", None, 4, [100, 101], "chain_coop",
                        capacity=0, attackers=attackers)
        assert nat.win_rate == ega0.win_rate
        assert nat.mean_return == ega0.mean_return

    def test_unknown_protocol(self):
        with pytest.raises(ValueError, match="protocol"):
            evaluate(small_ego(), "chaos", None, 2, [0], "chain_coop")

    def test_ega_requires_attackers(self):
        with pytest.raises(ValueError, match="attacker"):
            evaluate(small_ego(), "ega", None, 2, [0], "chain_coop", capacity=2)

    def test_per_seed_breakdown(self):
        rep = evaluate(small_ego(), "natural", None, 3, [5, 6, 7], "chain_coop")
        assert [r["seed"] for r in rep.per_seed] == [5, 6, 7]
        assert 0.0 <= rep.win_rate <= 1.0

    def test_ega_digest_check_and_loading(self, tmp_path):
        d = saved_attacker_dir(tmp_path)
        settings = EvalSettings(episodes=2, seeds=[0, 1], ega_top=2)
        rep = evaluate_ega_dir(small_ego(), d, settings, "chain_coop", capacity=2)
        assert rep.protocol == "ega"
        assert 0.0 <= rep.win_rate <= 1.0

    def test_trace_export(self, tmp_path):
        trace = tmp_path / "trace.jsonl"
        evaluate(small_ego(), "natural", None, 1, [0], "chain_coop",
                 trace_path=str(trace))
        lines = trace.read_text().strip().splitlines()
        assert len(lines) >= 1
        rec = json.loads(lines[0])
        assert {"t", "chosen", "victim", "executed", "reward", "done"} <= set(rec)


class TestBudgetSweep:
    def test_rows_sorted_and_zero_budget_matches_natural(self, tmp_path):
        ego = small_ego()
        attackers = [
            SprqAttacker.fresh(3, 2, 0.04, 0.9, hidden=8, rng=np.random.default_rng(3))
        ]
        out_csv = tmp_path / "sweep.csv"
        reports = budget_sweep(ego, attackers, [4, 0, 2], 3, [50, 51], "chain_coop",
                               out_csv=str(out_csv))
        assert [r.budget for r in reports] == [0, 2, 4]
        nat = evaluate(ego, "natural", None, 3, [50, 51], "chain_coop")
        assert reports[0].win_rate == nat.win_rate
        lines = out_csv.read_text().strip().splitlines()
        assert lines[0] == "budget,win_rate,mean_return,ci95"
        assert len(lines) == 4

    def test_empty_k_list_rejected(self):
        with pytest.raises(ValueError):
            budget_sweep(small_ego(), [], [], 2, [0], "chain_coop")


class TestCliPaths:
    def test_eval_checkpoint_roundtrip(self, tmp_path):
        cfg = write_cfg(tmp_path, MINI.format(out=tmp_path / "out", method="vanilla"))
        assert run(cfg) == 0
        ckpt = tmp_path / "out" / "0" / "ego.ckpt"
        code = eval_checkpoint(cfg, str(ckpt), out_dir=str(tmp_path / "eval_out"))
        assert code == 0
        data = json.loads((tmp_path / "eval_out" / "eval_report.json").read_text())
        assert data["reports"][0]["protocol"] == "natural"
        ego, extra = load_ego(str(ckpt))
        assert extra["env_id"] == "chain_coop"

    def test_gen_attackers_then_sweep(self, tmp_path):
        cfg = write_cfg(tmp_path, MINI.format(out=tmp_path / "out", method="romance"))
        assert gen_attackers(cfg) == 0
        attackers_dir = tmp_path / "out" / "attackers"
        assert (attackers_dir / "index.json").exists()
        # train an ego, then sweep against the generated attackers
        assert run(cfg) == 0
        cfg2 = write_cfg(
            tmp_path,
            MINI.format(out=tmp_path / "out2", method="vanilla").replace(
                "ega_seeds: [900]", f"ega_seeds: [900]\n  ega_dir: {attackers_dir}\n  sweep_ks: [0, 2]"
            ),
            name="cfg2.yaml",
        )
        code = sweep_checkpoint(cfg2, str(tmp_path / "out" / "0" / "ego.ckpt"))
        assert code == 0
        assert (tmp_path / "out2" / "sweep.csv").exists()

    def test_cli_main_dispatch(self, tmp_path):
        from romance.cli import main

        cfg = write_cfg(tmp_path, MINI.format(out=tmp_path / "cli_out", method="vanilla"))
        assert main(["train", cfg]) == 0
        assert (tmp_path / "cli_out" / "report.json").exists()
        bad = write_cfg(tmp_path, "nope: {", name="bad.yaml")
        assert main(["train", bad]) == 2
