"""Scenario documents: validation, defaults, overrides, and the runners."""

import json

import pytest

from portloss.errors import ScenarioError
from portloss.grids import SCHEMA_VERSION, scenario_fingerprint
from portloss.scenarios import (
    MODES,
    apply_overrides,
    bundled_scenarios,
    estimate_cost,
    resolve_scenario,
    run_scenario,
    validate_scenario,
)

EXPECTED_IDS = {
    "nosub_equal_halves_trio",
    "correlation_sweep_full",
    "subordinated_k200",
    "nosub_halves_k100",
    "limit_subordinated_ridge",
    "limit_equal_loss_curve",
    "limit_small_vs_large_r10",
    "limit_two_markets_base",
    "no_default_k_scan",
    "multimarket_split_pair",
    "calibrate_synthetic_base",
    "mc_validate_halves_k100",
}


def test_bundled_set_is_complete_and_valid():
    docs = bundled_scenarios()
    assert set(docs) == EXPECTED_IDS
    for sid, doc in docs.items():
        rep = validate_scenario(doc)
        assert rep["valid"] is True
        assert rep["id"] == sid
        assert rep["mode"] in MODES
        fp = rep["fingerprint"]
        assert len(fp) == 16 and all(ch in "0123456789abcdef" for ch in fp)
        cost = rep["cost"]
        assert cost["grid_points"] > 0 and cost["est_seconds"] > 0


def test_bundled_returns_copies():
    a = bundled_scenarios()
    a["no_default_k_scan"]["k_values"] = [1]
    assert bundled_scenarios()["no_default_k_scan"]["k_values"] != [1]


def test_defaults_are_injected():
    sc = resolve_scenario({"mode": "nosub", "portfolio": {"k_obligors": 10}})
    assert sc["id"] == "custom"
    assert sc["schema_version"] == SCHEMA_VERSION
    assert sc["market"] == {
        "mu": 0.17, "rho": 0.35, "c": 0.28, "n_fluct": 6, "t_mat": 1.0,
        "v0": 100.0,
    }
    assert sc["portfolio"]["layout"] == "halves"
    assert sc["quadrature"]["z_nodes"] == 64
    # document values win over defaults
    sc2 = resolve_scenario(
        {"mode": "nosub", "portfolio": {"k_obligors": 10}, "market": {"c": 0.5}})
    assert sc2["market"]["c"] == 0.5 and sc2["market"]["mu"] == 0.17


def test_fingerprint_stable_under_output_renames():
    doc = {"mode": "nosub", "portfolio": {"k_obligors": 10}}
    a = resolve_scenario(doc)
    b = resolve_scenario(
        dict(doc, outputs={"density": "renamed_{k}.csv"}))
    assert scenario_fingerprint(a) == scenario_fingerprint(b)
    c = resolve_scenario(
        {"mode": "nosub", "portfolio": {"k_obligors": 12}})
    assert scenario_fingerprint(a) != scenario_fingerprint(c)


@pytest.mark.parametrize(
    "doc, fragment",
    [
        ({"mode": "frobnicate"}, "/mode"),
        ({}, "/mode"),
        ({"mode": "nosub", "portfolio": {"k_obligors": 10},
          "schema_version": "v999"}, "/schema_version"),
        ({"mode": "nosub", "portfolio": {"k_obligors": 11}},
         "/portfolio/k_obligors"),
        ({"mode": "nosub", "portfolio": {"k_obligors": 10, "layout": "overlap"}},
         "/portfolio/overlap"),
        ({"mode": "nosub", "portfolio": {
            "k_obligors": 10,
            "overlap": {"r1": 0.5, "r12": 0.0, "gamma": 0.5, "f0": 75.0}}},
         "/portfolio/layout"),
        ({"mode": "subordinated", "portfolio": {"k_obligors": 10},
          "tranches": {"f_senior": 37.0, "f_junior": 38.0},
          "grid": {"lo": 0.5, "hi": 0.5}}, "/grid/hi"),
        ({"mode": "mc-validate", "portfolio": {"k_obligors": 100},
          "mc": {"antithetic": True, "n_samples": 200_001}}, "/mc/antithetic"),
        ({"mode": "calibrate", "source": {"kind": "csv"}}, "/source/path"),
    ],
)
def test_rejections_carry_a_pointer(doc, fragment):
    with pytest.raises(ScenarioError) as err:
        resolve_scenario(doc)
    assert err.value.pointer == fragment


def test_unknown_key_rejected():
    with pytest.raises(ScenarioError) as err:
        resolve_scenario(
            {"mode": "nosub", "portfolio": {"k_obligors": 10}, "bogus": 1})
    assert "bogus" in str(err.value)


def test_too_many_markets_points_at_mc_fallback():
    doc = {"mode": "nosub-multimarket",
           "markets": [{"k_obligors": 2} for _ in range(5)]}
    with pytest.raises(ScenarioError) as err:
        resolve_scenario(doc)
    assert err.value.pointer == "/markets"
    assert "mc-validate" in str(err.value)


def test_overrides_dotted_paths():
    doc = bundled_scenarios()["nosub_halves_k100"]
    out = apply_overrides(
        doc,
        ["market.mu=0.25", "portfolio.k_obligors=[10,20]",
         "outputs.density=renamed.csv"],
    )
    assert out["market"]["mu"] == 0.25
    assert out["portfolio"]["k_obligors"] == [10, 20]
    assert out["outputs"]["density"] == "renamed.csv"
    assert "market" not in doc  # original untouched


def test_overrides_list_index_and_errors():
    doc = bundled_scenarios()["multimarket_split_pair"]
    out = apply_overrides(doc, ["markets.1.k_obligors=50"])
    assert out["markets"][1]["k_obligors"] == 50
    assert out["markets"][0]["k_obligors"] == 20
    with pytest.raises(ScenarioError):
        apply_overrides(doc, ["no-equals-sign"])
    with pytest.raises(ScenarioError):
        apply_overrides(doc, ["mode.deeper=1"])


def test_estimate_cost_scales_with_samples():
    base = resolve_scenario(bundled_scenarios()["mc_validate_halves_k100"])
    more = apply_overrides(base, ["mc.n_samples=400000"])
    assert (estimate_cost(resolve_scenario(more))["mc_samples"]
            == 2 * estimate_cost(base)["mc_samples"])


def test_run_is_byte_identical(tmp_path):
    doc = bundled_scenarios()["no_default_k_scan"]
    arts1 = run_scenario(doc, out_dir=str(tmp_path / "a"))
    arts2 = run_scenario(doc, out_dir=str(tmp_path / "b"))
    assert len(arts1) == len(arts2) == 1
    assert arts1[0]["kind"] == arts2[0]["kind"]
    b1 = (tmp_path / "a" / "no_default.csv").read_bytes()
    b2 = (tmp_path / "b" / "no_default.csv").read_bytes()
    assert b1 == b2
    text = b1.decode()
    assert text.startswith("# schema_version")
    assert "fingerprint" in text


def test_no_default_table_contents(tmp_path):
    arts = run_scenario(
        bundled_scenarios()["no_default_k_scan"], out_dir=str(tmp_path))
    lines = [ln for ln in (tmp_path / "no_default.csv").read_text().splitlines()
             if not ln.startswith("#")]
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == 7 * 3
    ik = header.index("k_obligors")
    imu = header.index("mu")
    ip = header.index("p_no_default")
    by_mu = {}
    for row in rows:
        by_mu.setdefault(float(row[imu]), []).append(
            (int(row[ik]), float(row[ip])))
    for mu, pairs in by_mu.items():
        pairs.sort()
        ps = [p for _, p in pairs]
        assert all(0 < p < 1 for p in ps)
        assert all(b < a for a, b in zip(ps, ps[1:]))  # decreasing in K


def test_mc_validate_runner_agrees(tmp_path):
    arts = run_scenario(
        bundled_scenarios()["mc_validate_halves_k100"], out_dir=str(tmp_path))
    assert arts[0]["kind"] == "agreement_report"
    env = json.loads((tmp_path / "mc_validation.json").read_text())
    rep = env["report"]
    assert rep["agreement"] is True
    assert rep["max_abs_z"] <= 5.0
    assert rep["n_cells_compared"] > 0
    assert rep["subordination_violations"] == 0
    assert abs(rep["no_default"]["z"]) <= 5.0
    assert env["fingerprint"] == scenario_fingerprint(env["scenario"])


def test_calibrate_runner_report(tmp_path):
    arts = run_scenario(
        bundled_scenarios()["calibrate_synthetic_base"], out_dir=str(tmp_path))
    env = json.loads((tmp_path / "calibration_report.json").read_text())
    rep = env["report"]
    assert rep["truth"] == {"n_fluct": 6, "c": 0.28}
    assert 5.0 <= rep["n_hat"] <= 7.0
    assert abs(rep["c_hat"] - 0.28) < 0.05
    assert rep["boundary"] is False
