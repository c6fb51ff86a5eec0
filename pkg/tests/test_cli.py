"""CLI tests: exit codes, subcommand smoke runs, and report/figure outputs."""

import json

import numpy as np
import pytest

import arch.cli as cli
from arch.workcell import ANG_LIMIT, DT, LIN_LIMIT, VelocityCommand


class ScriptedInsert:
    def command(self, obs):
        v = np.array([np.clip(-obs[0] / DT, -LIN_LIMIT, LIN_LIMIT),
                      np.clip(-obs[1] / DT, -LIN_LIMIT, LIN_LIMIT),
                      -LIN_LIMIT])
        return VelocityCommand(v, float(np.clip(-obs[3] / DT, -ANG_LIMIT, ANG_LIMIT)))


@pytest.fixture()
def scripted_insert(monkeypatch):
    monkeypatch.setattr(cli, "_load_insert_policy", lambda path: ScriptedInsert())


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval", "--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval", "--frobnicate"])
    assert exc.value.code == 2


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2


def test_missing_config_path_is_usage_error(tmp_path):
    rc = cli.main(["pose-bench", "--config", str(tmp_path / "nope.json"),
                   "--n-trials", "1", "--out", str(tmp_path / "x.csv")])
    assert rc == 2


def test_pose_bench_writes_csv_and_figure(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    rc = cli.main(["pose-bench", "--n-trials", "2", "--seed", "1",
                   "--out", str(out)])
    assert rc == 0
    header = out.read_text().splitlines()[0]
    assert header == "trial,init_err_t,init_err_r,final_err_t,final_err_r,iters,loss"
    assert len(out.read_text().splitlines()) == 3
    assert (tmp_path / "bench.png").stat().st_size > 0
    assert "within 1 mm / 1 deg" in capsys.readouterr().out


def test_plan_debug_dumps_roadmap(tmp_path, capsys):
    dump = tmp_path / "roadmap.json"
    rc = cli.main(["plan-debug", "--nodes", "100", "--seed", "2",
                   "--dump-roadmap", str(dump)])
    assert rc == 0
    d = json.loads(dump.read_text())
    assert len(d["nodes"]) == 100
    assert "path" in d
    assert (tmp_path / "roadmap.png").stat().st_size > 0
    assert "edges checked" in capsys.readouterr().out


def test_collect_requires_oracle_flag(tmp_path, scripted_insert, capsys):
    rc = cli.main(["collect", "--insert-policy", "x",
                   "--out", str(tmp_path / "d.jsonl")])
    assert rc == 2


def test_collect_and_train_high_smoke(tmp_path, scripted_insert):
    demos = tmp_path / "demos.jsonl"
    rc = cli.main(["collect", "--oracle", "--insert-policy", "x",
                   "--n-success", "1", "--n-recovery", "0",
                   "--seed", "3", "--out", str(demos)])
    assert rc == 0
    assert demos.exists() and len(demos.read_text().splitlines()) >= 3

    ckpt = tmp_path / "high.archpol"
    rc = cli.main(["train-high", "--demos", str(demos), "--epochs", "5",
                   "--seed", "0", "--out", str(ckpt)])
    assert rc == 0
    from arch.policy_high import HighLevelPolicy
    HighLevelPolicy.load(ckpt)


def test_eval_oracle_writes_report_and_figure(tmp_path, scripted_insert, capsys):
    out = tmp_path / "report.json"
    rc = cli.main(["eval", "--high-policy", "oracle", "--insert-policy", "x",
                   "--n-trials", "2", "--seed", "4",
                   "--spl-convention", "standard", "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["schema"] == "arch-eval-1"
    assert report["spl_convention"] == "standard"
    assert (tmp_path / "report.png").stat().st_size > 0
    assert "SR %" in capsys.readouterr().out
