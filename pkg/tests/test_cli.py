import csv
import io
import json
import math
import subprocess
import sys

import pytest

from scsparc import cli, harness
from scsparc.exceptions import ExperimentError

SMALL_CODE = ["--L", "64", "--M", "16", "--gamma", "16", "--omega", "1", "--rate-ratio", "0.6"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_capacity_bsc(capsys):
    code, out, _ = run(capsys, "capacity", "--channel", "bsc", "--channel-param", "0.11")
    data = json.loads(out)
    assert code == 0
    assert data["capacity_nats"] == pytest.approx(0.3466, abs=1e-4)
    assert data["capacity_entropy_nats"] == pytest.approx(data["capacity_nats"], abs=1e-6)
    assert data["capacity_bits"] == pytest.approx(data["capacity_nats"] / math.log(2))


def test_capacity_from_config(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"channel": {"kind": "bec", "param": 0.2}}))
    code, out, _ = run(capsys, "capacity", "--config", str(cfg))
    assert code == 0 and json.loads(out)["capacity_nats"] == pytest.approx(0.8 * math.log(2), abs=1e-6)


def test_design(capsys):
    code, out, _ = run(capsys, "design", "--gamma", "12", "--omega", "2", "--rho", "0.1")
    lines = out.splitlines()
    header = json.loads(lines[0])
    rows = [[float(x) for x in r] for r in csv.reader(lines[1:])]
    assert code == 0 and len(rows) == 12
    assert rows[0][0] == pytest.approx(3.6) and rows[0][4] == pytest.approx(0.1 * 12 / 9)
    assert header["row_sums"] == pytest.approx([12.0] * 12)


def test_wave(capsys):
    code, out, _ = run(capsys, "wave", "--channel", "awgn", "--channel-param", "1.0")
    report = json.loads(out)
    assert code == 0
    assert report["regime"] == "wave" and report["g"] >= 1
    assert report["params"]["L"] == 1024 and report["k"] == 1.0


def test_se_csv(capsys, tmp_path):
    target = tmp_path / "se.csv"
    code, _, _ = run(capsys, "se", "--channel", "awgn", "--channel-param", "0.1", *SMALL_CODE,
                     "--iters", "4", "--n-mc", "2000", "--out", str(target))
    rows = list(csv.DictReader(io.StringIO(target.read_text())))
    assert code == 0
    assert list(rows[0]) == ["t", "c", "psi", "tau", "r", "sigma", "phi"]
    assert len(rows) == 4 * 16


def test_decode_records(capsys):
    code, out, _ = run(capsys, "decode", "--channel", "awgn", "--channel-param", "0.1", *SMALL_CODE,
                       "--iters", "5", "--n-mc", "2000", "--stop-tol", "0")
    recs = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and [r["t"] for r in recs] == list(range(5))
    assert {"t", "mse_empirical", "mse_se", "ser_running"} <= set(recs[0])


def test_simulate_writes_files(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "--channel", "awgn", "--channel-param", "0.1", *SMALL_CODE,
                       "--trials", "2", "--seed", "3", "--n-mc", "2000", "--out-dir", str(tmp_path))
    summary = json.loads(out)
    assert code == 0
    assert summary["points"][0]["trials"] == 2
    assert {p.name for p in tmp_path.iterdir()} == {"results.csv", "trajectories.csv", "se_trajectory.csv",
                                                    "summary.json"}


def test_simulate_sweep(capsys):
    code, out, _ = run(capsys, "simulate", "--channel", "awgn", "--channel-param", "0.1", *SMALL_CODE,
                       "--trials", "1", "--n-mc", "2000", "--sweep-axis", "rate_ratio", "--sweep-values", "0.4,0.5")
    assert code == 0 and [p["sweep_value"] for p in json.loads(out)["points"]] == [0.4, 0.5]


def test_glm(capsys):
    code, out, _ = run(capsys, "glm", "--N", "2000", "--alpha", "0.5", "--iters", "4", "--rho", "0.05")
    recs = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and len(recs) == 4
    assert abs(recs[-1]["mse_empirical"] - recs[-1]["mse_se"]) < 0.05


@pytest.mark.parametrize("argv", [
    ["design", "--gamma", "4", "--omega", "2"],
    ["capacity", "--channel", "bsc"],
    ["wave", "--channel", "awgn", "--channel-param", "1", "--params", "{not json"],
    ["se", "--channel", "awgn", "--channel-param", "1", "--L", "100", "--gamma", "32"],
    ["capacity", "--config", "/nonexistent.json"],
])
def test_parameter_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and err.startswith("error:")


def test_experiment_error_exits_3(capsys, monkeypatch):
    def fail(config, progress=None):
        raise ExperimentError("too many trials diverged")

    monkeypatch.setattr(cli, "run_experiment", fail)
    code, _, err = run(capsys, "simulate", "--channel", "awgn", "--channel-param", "0.1", *SMALL_CODE, "--trials", "1")
    assert code == 3 and "diverged" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "scsparc", "capacity", "--channel", "awgn", "--channel-param", "1"],
                          capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["capacity_nats"] == pytest.approx(0.5 * math.log(2), abs=1e-8)


def test_harness_is_importable_from_cli():
    assert cli.DESK_PRESET is harness.DESK_PRESET
