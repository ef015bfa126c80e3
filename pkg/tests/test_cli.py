import subprocess
import sys

import pytest

from bmckde.cli import main


def test_validate_failure_names_condition(capsys):
    assert main(["validate", "--gamma", "0.2", "--alpha", "0.8"]) == 2
    err = capsys.readouterr().err
    assert "bandwidth/ergodicity condition violated" in err and "1.393" in err


def test_validate_success(capsys):
    assert main(["validate", "--gamma", "0.7", "--alpha", "0.8"]) == 0
    assert "configuration valid" in capsys.readouterr().out


def test_validate_speed_failure(capsys):
    assert main(["validate", "--beta", "0.45"]) == 2
    assert "outside the feasible interval" in capsys.readouterr().err


def test_oracle_check(tmp_path, capsys):
    assert main(["oracle-check", "--seed", "7", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    value = float(out.split("=")[1])
    assert value <= 1e-10
    assert (tmp_path / "oracle_check.csv").exists()


def test_help_exits_zero():
    proc = subprocess.run([sys.executable, "-m", "bmckde.cli", "simulate", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "usage" in proc.stdout


def test_dry_run_prints_defaults(tmp_path, capsys):
    assert main(["verify-clt", "--dry-run", "--replicates", "5", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "replicates: 5" in out and "gamma: 0.2" in out and "kernel: gaussian" in out
    assert not any(tmp_path.iterdir())


def test_runtime_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("model: {variant: finite, q: [[0.7, 0.3], [0.4, 0.6]]}\n")
    assert main(["estimate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_simulate_and_estimate_are_idempotent(tmp_path):
    args = ["--depths", "6", "--xs=-1,0,1", "--out", str(tmp_path)]
    assert main(["simulate", *args]) == 0
    first = (tmp_path / "tree.csv").read_bytes()
    assert main(["simulate", *args]) == 0
    assert (tmp_path / "tree.csv").read_bytes() == first
    assert len(first.splitlines()) == 2 + 127
    assert main(["estimate", *args]) == 0
    lines = (tmp_path / "estimate.csv").read_text().splitlines()
    assert lines[0].startswith("# config:") and len(lines) == 2 + 2 * 3


@pytest.mark.parametrize("command, files", [
    ("verify-clt", ["clt_variance.csv", "clt_variance.png"]),
    ("verify-mdp", ["mdp_report.csv", "mdp_verdict.csv", "mdp_rates.png"]),
    ("verify-crossgen", ["crossgen.csv", "crossgen.png"]),
])
def test_verify_commands_write_reports(tmp_path, command, files):
    args = [command, "--replicates", "500", "--depths", "5,6,7", "--beta", "0.1", "--plot", "--samples",
            "--out", str(tmp_path)]
    assert main(args) == 0
    for name in files + ["samples.jsonl"]:
        assert (tmp_path / name).stat().st_size > 0


def test_export_density(tmp_path):
    assert main(["export-density", "--plot", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "density.csv").read_text().splitlines()
    assert lines[0] == "x,mu" and len(lines) == 202
    assert (tmp_path / "density.png").exists()


def test_threads_env_overridden_by_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("BMCKDE_THREADS", "3")
    from bmckde.harness import default_threads

    assert default_threads() == 3
    assert main(["verify-clt", "--replicates", "500", "--depths", "5", "--threads", "1", "--out", str(tmp_path)]) == 0
