"""Command-line behavior, exercised in process through main(argv)."""

import json

import numpy as np
import pytest

from portloss.cli import EXIT_NUMERIC, EXIT_OK, EXIT_REJECTED, main


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == EXIT_OK
    out = capsys.readouterr().out
    for sid in ("subordinated_k200", "nosub_halves_k100", "no_default_k_scan",
                "calibrate_synthetic_base"):
        assert sid in out


def test_validate_bundled(capsys):
    assert main(["validate", "no_default_k_scan"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["valid"] is True
    assert rep["id"] == "no_default_k_scan"
    assert rep["cost"]["grid_points"] == 21


def test_unknown_reference_suggests_listing(capsys):
    assert main(["validate", "/no/such/file.json"]) == EXIT_REJECTED
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "scenario_rejected"
    assert "list-scenarios" in err["message"]


def test_invalid_json_file_rejected(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["validate", str(path)]) == EXIT_REJECTED
    err = json.loads(capsys.readouterr().err)
    assert "not valid JSON" in err["message"]


def test_bad_override_rejected_with_pointer(tmp_path, capsys):
    rc = main(["run", "no_default_k_scan", "--set", "mode=bogus",
               "--out-dir", str(tmp_path)])
    assert rc == EXIT_REJECTED
    err = json.loads(capsys.readouterr().err)
    assert err["pointer"] == "/mode"
    assert not list(tmp_path.iterdir())


def test_run_writes_artifacts(tmp_path, capsys):
    rc = main(["run", "no_default_k_scan", "--out-dir", str(tmp_path)])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("wrote ")
    assert "[no_default_table]" in out or "[" in out
    assert (tmp_path / "no_default.csv").exists()


def test_run_scenario_file_with_override(tmp_path, capsys):
    doc = {"mode": "no-default", "face": 75.0, "k_values": [1, 2],
           "mu_values": [0.17]}
    path = tmp_path / "scan.json"
    path.write_text(json.dumps(doc))
    rc = main(["run", str(path), "--set", "k_values=[1,2,4]",
               "--out-dir", str(tmp_path / "out")])
    assert rc == EXIT_OK
    capsys.readouterr()
    rows = [ln for ln in (tmp_path / "out" / "no_default.csv")
            .read_text().splitlines()
            if ln and not ln.startswith("#")]
    assert len(rows) == 1 + 3  # header plus one row per K


def test_numeric_failure_leaves_error_report(tmp_path, capsys):
    csv = tmp_path / "flat.csv"
    np.savetxt(csv, np.zeros((100, 3)), delimiter=",")
    doc = {"mode": "calibrate", "source": {"kind": "csv", "path": str(csv)}}
    path = tmp_path / "cal.json"
    path.write_text(json.dumps(doc))
    out_dir = tmp_path / "out"
    rc = main(["run", str(path), "--out-dir", str(out_dir)])
    assert rc == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "FitError" in err
    report = json.loads((out_dir / "error_report.json").read_text())
    assert report["error"] == "FitError"
    assert report["partial_artifacts"] == []


def test_workers_flag_accepted(tmp_path, capsys):
    rc = main(["run", "no_default_k_scan", "--out-dir", str(tmp_path),
               "--workers", "2"])
    assert rc == EXIT_OK
    capsys.readouterr()
