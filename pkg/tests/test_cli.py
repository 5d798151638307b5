import csv
import json
import logging

import pytest

from cli_manager import MAX_GRID_POINTS, parse_axis
from errors import ConfigError
from main import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main
from output_manager import OutputManager


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    yield tmp_path
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    root.setLevel(logging.WARNING)


def run_json(capsys, *argv):
    assert main(["-q", *argv]) == EXIT_OK
    return json.loads(capsys.readouterr().out)


def read_rows(path):
    with open(path, newline='') as f:
        return list(csv.DictReader(f))


def test_rates_json(capsys, schema_violations):
    data = run_json(capsys, "rates")
    assert schema_violations(data, "rates") == []
    assert data["preset_name"] == "default"
    assert data["budget"]["r_raman"] == 0.0
    assert data["budget"]["total_r"] == pytest.approx(data["budget"]["r_trap"] + data["budget"]["r_probe"])


def test_rates_csv_for_sigma_trap(workdir):
    out = workdir / "rates.csv"
    assert main(["-q", "--preset", "paper-sigma", "--format", "csv", "--out", str(out), "rates"]) == EXIT_OK
    rows = read_rows(out)
    assert list(rows[0]) == ["channel", "rate", "r"]
    assert [r["channel"] for r in rows] == ["trap", "probe", "raman", "total"]
    assert rows[-1]["rate"] == ""
    assert float(rows[2]["r"]) > float(rows[0]["r"])


def test_distribution(capsys, schema_violations):
    data = run_json(capsys, "distribution", "--n-max", "20")
    assert schema_violations(data, "distribution") == []
    assert len(data["rows"]) == 21
    assert data["optimal_threshold"] == 2
    assert 1.4e-3 < data["error_report"]["infidelity"] < 1.9e-3


def test_sweep_one_axis(capsys, schema_violations):
    data = run_json(capsys, "sweep", "--axis", "threshold=1,2,3")
    assert schema_violations(data, "sweep") == []
    assert data["axes"] == ["threshold"]
    assert [row["threshold"] for row in data["rows"]] == [1, 2, 3]
    infidelities = [row["infidelity"] for row in data["rows"]]
    assert infidelities[1] == min(infidelities)


def test_sweep_two_axes_csv(workdir):
    out = workdir / "sweep.csv"
    argv = ["-q", "--format", "csv", "--out", str(out), "sweep",
            "--axis", "t_d=2e-4:5e-4:4", "--axis", "background=0,60"]
    assert main(argv) == EXIT_OK
    rows = read_rows(out)
    assert len(rows) == 8
    assert list(rows[0]) == ["t_d", "background", "eps_bright", "eps_dark", "infidelity", "fidelity"]


def test_sweep_with_loss_column(capsys):
    data = run_json(capsys, "sweep", "--axis", "depth=5.9e6,11.9e6", "--mc-shots", "2000")
    low, full = data["rows"]
    assert low["loss"] > full["loss"]
    assert "loss_sigma" in full


def test_sweep_grid_limit():
    axes = ["--axis", "t_d=1e-4:1e-3:1001", "--axis", "threshold=1:1000:1000"]
    assert 1001 * 1000 > MAX_GRID_POINTS
    assert main(["-q", "sweep", *axes]) == EXIT_VALIDATION


def test_parse_axis():
    axis = parse_axis("t_d=1e-4:3e-4:3")
    assert axis.values == pytest.approx((1e-4, 2e-4, 3e-4))
    with pytest.raises(ConfigError):
        parse_axis("power=1,2")
    with pytest.raises(ConfigError):
        parse_axis("threshold=1.5,2")
    with pytest.raises(ConfigError):
        parse_axis("t_d=1:2")


def test_simulate_outputs(capsys, workdir, schema_violations):
    argv = ["simulate", "--shots", "4000", "--shots-csv", "shots.csv", "--histogram-csv", "hist.csv",
            "--wait-csv", "wait.csv"]
    data = run_json(capsys, "--seed", "3", *argv)
    assert schema_violations(data, "simulate") == []
    assert data["shots_per_state"] == 2000
    assert data["seed"] == 3
    low, high = data["infidelity_interval"]
    assert low <= data["infidelity"] <= high
    assert data["fidelity"] == pytest.approx(1 - data["infidelity"])

    shots = read_rows(workdir / "shots.csv")
    assert len(shots) == 4000
    assert list(shots[0]) == OutputManager.schema_columns("shots")
    assert {row["lost"] for row in shots} <= {"true", "false"}
    hist = read_rows(workdir / "hist.csv")
    assert sum(int(r["bright"]) for r in hist) == 2000
    assert sum(int(r["dark"]) for r in hist) == 2000
    wait = read_rows(workdir / "wait.csv")
    assert len(wait) == 100
    assert list(wait[0]) == ["wait_time", "empirical", "erlang"]


def test_simulate_is_deterministic(workdir):
    for name in ("a.json", "b.json"):
        assert main(["-q", "--seed", "9", "--out", name, "simulate", "--shots", "2000"]) == EXIT_OK
    assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()
    assert main(["-q", "--seed", "9", "--threads", "4", "--out", "c.json", "simulate", "--shots", "2000"]) == EXIT_OK
    assert (workdir / "a.json").read_bytes() == (workdir / "c.json").read_bytes()
    text = (workdir / "a.json").read_text()
    assert text.endswith("}\n")
    assert text == OutputManager.canonical_json(json.loads(text))


def test_simulate_rejects_too_few_shots():
    assert main(["-q", "simulate", "--shots", "0"]) == EXIT_VALIDATION


def test_fit_synthetic_histogram(capsys, workdir, sigma_config, make_histogram, schema_violations):
    hist = make_histogram(sigma_config.detection, 5000, seed=31)
    hist.write_csv(str(workdir / "sigma.csv"))
    capsys.readouterr()
    data = run_json(capsys, "--preset", "paper-sigma", "fit", "sigma.csv")
    assert schema_violations(data, "fit") == []
    assert data["histogram"]["n_shots"] == 5000
    low, high = data["interval"]
    assert low < 50e-6 < high or abs(data["depump_prob_per_scatter"] - 50e-6) < 3 * data["sigma"]


def test_fit_error_exit_codes(workdir):
    (workdir / "bad.csv").write_text("n,count\n0,1\n1,-5\n")
    assert main(["-q", "fit", "bad.csv"]) == EXIT_VALIDATION
    assert main(["-q", "fit", "missing.csv"]) == EXIT_VALIDATION
    (workdir / "one.csv").write_text("n,count\n6,100\n")
    assert main(["-q", "fit", "one.csv"]) == EXIT_NUMERICAL


def test_non_utf8_inputs_exit_with_validation_code(workdir):
    (workdir / "binary.csv").write_bytes(b"n,count\n0,\xff\n")
    assert main(["-q", "fit", "binary.csv"]) == EXIT_VALIDATION
    (workdir / "scenario.json").write_bytes(b'{"detection": {"t_d": 0.0005\xff}}')
    assert main(["-q", "--config", "scenario.json", "rates"]) == EXIT_VALIDATION
    (workdir / "hist.csv").write_text("n,count\n0,1\n5,9\n")
    (workdir / "hist.json").write_bytes(b'{"n_shots": 10, "prepared": "\xfe"}')
    assert main(["-q", "fit", "hist.csv"]) == EXIT_VALIDATION


def test_config_errors_exit_with_validation_code(workdir):
    (workdir / "scenario.json").write_text(json.dumps({"detection": {"t_d": -1.0}}))
    assert main(["-q", "--config", "scenario.json", "rates"]) == EXIT_VALIDATION
    assert main(["-q", "--config", "absent.json", "rates"]) == EXIT_VALIDATION


def test_config_file_overrides_preset(capsys, workdir):
    (workdir / "scenario.json").write_text(json.dumps({"detection": {"r_background": 0.0}}))
    data = run_json(capsys, "--config", "scenario.json", "distribution", "--n-max", "5")
    assert data["detection"]["r_background"] == 0.0
    assert data["optimal_threshold"] == 1


def test_unknown_preset_is_rejected_by_parser():
    with pytest.raises(SystemExit) as info:
        main(["--preset", "paper-unknown", "rates"])
    assert info.value.code == 2


def test_csv_to_stdout(capsys):
    assert main(["-q", "--format", "csv", "sweep", "--axis", "threshold=2"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "threshold,eps_bright,eps_dark,infidelity,fidelity"
    assert len(lines) == 2


def test_report_rows(capsys, schema_violations):
    data = run_json(capsys, "report", "--shots", "2000")
    assert schema_violations(data, "report") == []
    rows = {row["quantity"]: row for row in data["rows"]}
    assert rows["t1"]["model"] == pytest.approx(0.336, abs=0.001)
    assert rows["p_depump_sigma"]["model"] == pytest.approx(rows["p_depump_sigma"]["published"], rel=0.2)
    assert rows["bright_mean_for_999"]["model"] == pytest.approx(9.23, abs=0.01)
    assert rows["adaptive_mean_energy"]["published"] is None
    assert rows["loss_low_depth"]["model"] > rows["loss_full_depth"]["model"]
    assert rows["fixed_mean_scattered"]["model"] == pytest.approx(2500, rel=0.05)


def test_log_file_written(workdir):
    assert main(["-q", "rates"]) == EXIT_OK
    assert (workdir / "tweezer_readout.log").exists()
