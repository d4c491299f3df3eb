import json
import subprocess
import sys

import pytest

from goalsagail.cli import main

FAST = ["--set", "cycles_per_epoch=2", "--set", "episodes_per_cycle=4", "--set", "policy_batches=2",
        "--set", "policy_batch_size=32", "--set", "eval_episodes=5", "--set", "agent.hidden_sizes=[16,16]",
        "--set", "disc.hidden_sizes=[16,16]", "--set", "disc.n_batches=2", "--set", "disc.batch_size=32"]


@pytest.fixture()
def demos(tmp_path):
    path = tmp_path / "demos.jsonl"
    assert main(["demo-gen", "--env", "pointpush2d", "--profile", "suboptimal", "--count", "4",
                 "--out", str(path)]) == 0
    return path


def test_train_eval_curves(tmp_path, demos, capsys):
    out = tmp_path / "run"
    rc = main(["train", "--env", "pointpush2d", "--algo", "goal_sagail", "--demos", str(demos), "--epochs", "2",
               "--out", str(out), *FAST])
    assert rc == 0
    assert (out / "checkpoint.npz").exists() and (out / "metrics.csv").exists()
    capsys.readouterr()
    assert main(["eval", str(out / "checkpoint.npz"), "--episodes", "7", "--records"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["episodes"] == 7 and len(payload["records"]) == 7
    assert main(["curves", str(out / "metrics.csv")]) == 0
    assert "to60" in capsys.readouterr().out


def test_demo_analyze_writes_csv(tmp_path, demos, capsys):
    csv_path = tmp_path / "bins.csv"
    assert main(["demo-analyze", str(demos), "--csv", str(csv_path)]) == 0
    assert "mass in lowest third" in capsys.readouterr().out
    assert csv_path.read_text().startswith("bin_lo,bin_hi,mass")


def test_suite_writes_aggregate(tmp_path):
    rc = main(["suite", "--env", "bitflip8", "--algo", "her", "--epochs", "1", "--seeds", "0,1",
               "--out", str(tmp_path), *FAST])
    assert rc == 0
    assert (tmp_path / "aggregate.csv").exists()
    assert (tmp_path / "seed_0" / "metrics.csv").exists() and (tmp_path / "seed_1" / "metrics.csv").exists()


def test_config_file_with_override(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("preset: desk\nenv: bitflip8\nalgo: her\nepochs: 1\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"), *FAST, "--set", "agent.gamma=0.9"]) == 0
    assert "epoch   0" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["train", "--env", "bitflip8", "--algo", "goal_gail", "--out", "x"],
    ["train", "--env", "nowhere", "--out", "x"],
    ["train", "--env", "bitflip8", "--set", "agent.nope=1", "--out", "x"],
    ["train", "--env", "bitflip8", "--set", "novalue", "--out", "x"],
    ["demo-gen", "--env", "bitflip8", "--profile", "perfect", "--count", "2", "--out", "x"],
    ["demo-analyze", "missing.jsonl"],
])
def test_config_errors_exit_1(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_runtime_failures_exit_2(tmp_path, monkeypatch, capsys):
    # a random-bit demonstrator cannot hit 50 of 50 goals with one attempt each
    rc = main(["demo-gen", "--env", "bitflip8", "--profile", "suboptimal", "--noise", "1.0", "--count", "50",
               "--max-attempts", "1", "--out", str(tmp_path / "d.jsonl")])
    assert rc == 2
    from goalsagail import cli
    from goalsagail.errors import InvariantViolation

    def boom(args):
        raise InvariantViolation("expert buffer exceeded its capacity")

    monkeypatch.setattr(cli, "cmd_curves", boom)
    assert main(["curves", "whatever.csv"]) == 2
    assert "invariant" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "goalsagail", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for verb in ("train", "eval", "demo-gen", "demo-analyze", "suite", "curves"):
        assert verb in proc.stdout
