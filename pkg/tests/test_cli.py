"""Command-line interface: determinism, exit codes, library equality."""

import json

import numpy as np

from lineariv import BasisSpec, ColumnMap, EffectModel, load_csv, standard_tsls
from lineariv.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_deterministic_and_reloadable(tmp_path, capsys):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--generator", "table1", "--lx", "0", "--ly", "0", "--lz", "0",
            "--n", "120", "--seed", "7"]
    code1, _, _ = run_cli(capsys, *args, "--out", str(p1))
    code2, _, _ = run_cli(capsys, *args, "--out", str(p2))
    assert code1 == code2 == 0
    assert p1.read_bytes() == p2.read_bytes()
    data = load_csv(p1, ColumnMap("y", "x", ["z"], ["v"]))
    assert data.n == 120


def test_fit_matches_library_call(tmp_path, capsys):
    csv_path = tmp_path / "d.csv"
    run_cli(capsys, "simulate", "--generator", "table1", "--n", "400", "--seed", "3",
            "--out", str(csv_path))
    code, out, _ = run_cli(
        capsys, "fit", "--data", str(csv_path), "--y-col", "y", "--x-col", "x",
        "--z-cols", "z", "--cov-cols", "v", "--estimator", "tsls",
        "--outcome-basis", "1", "c0", "--instrument-basis", "z0", "z0:c0")
    assert code == 0
    payload = json.loads(out)
    assert payload["schema_version"] == 1
    data = load_csv(csv_path, ColumnMap("y", "x", ["z"], ["v"]))
    direct = standard_tsls(data, EffectModel.constant(), BasisSpec(["1", "c0"]),
                           BasisSpec(["z0", "z0:c0"]))
    assert payload["psi_hat"] == [float(direct.psi_hat[0])]
    assert payload["se"] == [float(direct.se[0])]
    assert abs(payload["psi_hat"][0] - 1.0) < 0.5
    assert np.isfinite(payload["se"][0])


def test_fit_unknown_estimator_names_valid_set(tmp_path, capsys):
    csv_path = tmp_path / "d.csv"
    run_cli(capsys, "simulate", "--generator", "table1", "--n", "100", "--seed", "3",
            "--out", str(csv_path))
    code, _, err = run_cli(
        capsys, "fit", "--data", str(csv_path), "--y-col", "y", "--x-col", "x",
        "--z-cols", "z", "--cov-cols", "v",
        "--config", str(make_config(tmp_path, csv_path, estimator="frobnicate")))
    assert code == 2
    assert "tsls" in err and "br-beta" in err


def make_config(tmp_path, csv_path, **overrides):
    config = {
        "estimator": "tsls",
        "data": {"path": str(csv_path),
                 "columns": {"y": "y", "x": "x", "z": ["z"], "covariates": ["v"]}},
        "bases": {"outcome": ["1", "c0"], "instruments": ["z0", "z0:c0"]},
        "seed": 5,
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


def test_fit_config_file_and_byte_determinism(tmp_path, capsys):
    csv_path = tmp_path / "d.csv"
    run_cli(capsys, "simulate", "--generator", "table1", "--n", "300", "--seed", "9",
            "--out", str(csv_path))
    cfg = make_config(tmp_path, csv_path, estimator="eem",
                      bases={"outcome": ["1", "c0"], "index": ["1", "c0"], "iv": ["1", "c0"]})
    code1, out1, _ = run_cli(capsys, "fit", "--config", str(cfg))
    code2, out2, _ = run_cli(capsys, "fit", "--config", str(cfg))
    assert code1 == code2 == 0
    assert out1 == out2
    # flags override the config file
    code3, out3, _ = run_cli(capsys, "fit", "--config", str(cfg), "--estimator", "br-gamma")
    assert code3 == 0
    assert json.loads(out3)["estimator"] == "br-gamma"


def test_fit_bootstrap_inference(tmp_path, capsys):
    csv_path = tmp_path / "d.csv"
    run_cli(capsys, "simulate", "--generator", "table1", "--n", "250", "--seed", "4",
            "--out", str(csv_path))
    code, out, _ = run_cli(
        capsys, "fit", "--data", str(csv_path), "--y-col", "y", "--x-col", "x",
        "--z-cols", "z", "--cov-cols", "v", "--estimator", "tsls",
        "--outcome-basis", "1", "c0", "--instrument-basis", "z0", "z0:c0",
        "--inference", "bootstrap", "--resamples", "200", "--seed", "12")
    assert code == 0
    payload = json.loads(out)
    assert payload["inference"] == "bootstrap"
    assert payload["ci"]["lower"][0] < payload["psi_hat"][0] < payload["ci"]["upper"][0]


def test_fit_estimation_failure_exit_code(tmp_path, capsys):
    # constant instrument column: the first stage is rank deficient
    csv_path = tmp_path / "bad.csv"
    rows = ["y,x,z,v"] + [f"{i},{i * 0.5},1.0,{i * 0.1}" for i in range(20)]
    csv_path.write_text("\n".join(rows) + "\n")
    code, _, err = run_cli(
        capsys, "fit", "--data", str(csv_path), "--y-col", "y", "--x-col", "x",
        "--z-cols", "z", "--cov-cols", "v", "--estimator", "tsls",
        "--outcome-basis", "1", "c0")
    assert code == 3
    assert "estimation error" in err


def test_fit_missing_column_exit_code(tmp_path, capsys):
    csv_path = tmp_path / "d.csv"
    csv_path.write_text("y,x,z\n1,2,0\n2,1,1\n")
    code, _, err = run_cli(
        capsys, "fit", "--data", str(csv_path), "--y-col", "y", "--x-col", "x",
        "--z-cols", "z", "--cov-cols", "w", "--estimator", "tsls",
        "--outcome-basis", "1")
    assert code == 2
    assert "'w'" in err


def test_benchmark_smoke_schema(tmp_path, capsys):
    out_csv = tmp_path / "bench.csv"
    out_json = tmp_path / "bench.json"
    code, _, _ = run_cli(
        capsys, "benchmark", "--generator", "table1", "--lx", "0", "--ly", "0", "--lz", "0",
        "--reps", "3", "--n", "120", "--seed", "2", "--estimators", "tsls", "br_beta",
        "--out", str(out_csv), "--out-json", str(out_json))
    assert code == 0
    payload = json.loads(out_json.read_text())
    assert payload["schema_version"] == 1
    names = {row["estimator"] for row in payload["rows"]}
    assert names == {"tsls", "br_beta"}


def test_benchmark_full_grid_layout(tmp_path, capsys):
    out_json = tmp_path / "grid.json"
    code, _, _ = run_cli(
        capsys, "benchmark", "--table1-grid", "--reps", "2", "--n", "120",
        "--seed", "6", "--estimators", "tsls", "eem", "--out-json", str(out_json))
    assert code == 0
    rows = json.loads(out_json.read_text())["rows"]
    scenarios = {r["scenario"] for r in rows}
    assert len(scenarios) == 19          # every lambda-grid row of the design
    assert len(rows) == 19 * 2
    assert all(r["n"] == 120 and r["reps"] == 2 for r in rows)


def test_replicate_below_audit_threshold_warns(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "replicate", "table1", "--reps", "10",
                           "--out-dir", str(tmp_path))
    assert code == 0
    assert "below audit threshold" in out
    assert (tmp_path / "table1_report.csv").exists()


def test_replicate_gate_failure_exit_code(tmp_path, capsys):
    # a seed without the heavy-tail demonstration fails the blow-up gate
    code, out, _ = run_cli(capsys, "replicate", "fig3", "--reps", "300", "--seed", "1")
    assert code == 4
    assert "FAIL" in out


def test_replicate_thread_count_invariance(tmp_path, capsys):
    d1, d2 = tmp_path / "t1", tmp_path / "t2"
    code1, _, _ = run_cli(capsys, "replicate", "table1", "--reps", "20",
                          "--threads", "1", "--out-dir", str(d1))
    code2, _, _ = run_cli(capsys, "replicate", "table1", "--reps", "20",
                          "--threads", "3", "--out-dir", str(d2))
    assert code1 == code2 == 0
    assert (d1 / "table1_report.csv").read_bytes() == (d2 / "table1_report.csv").read_bytes()
    assert (d1 / "table1_report.json").read_bytes() == (d2 / "table1_report.json").read_bytes()
