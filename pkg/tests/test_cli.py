import csv
from pathlib import Path

import numpy as np
import pytest
import yaml

from ensemblectl.cli import main
from ensemblectl.config import (
    DominanceProfile,
    ExperimentConfig,
    GridSettings,
    config_hash,
    load_config,
)
from ensemblectl.experiments import closed_loop_rollout, run_simulation
from ensemblectl.reporting import fit_loglog_slope, format_cell, scaling_trend_checks


# -- config ----------------------------------------------------------------


def test_config_defaults_valid():
    cfg = ExperimentConfig()
    assert cfg.n_list == (30, 60, 120, 200, 300, 400, 600)
    assert cfg.compliant.exponent == 0.25 and cfg.violating.exponent == 0.6
    assert cfg.horizon == 400 and cfg.noise_std == 0.05


def test_config_rejects_bad_values():
    with pytest.raises(ValueError, match="ascending"):
        ExperimentConfig(n_list=(60, 30))
    with pytest.raises(ValueError, match="norm"):
        ExperimentConfig(norm="h3")
    with pytest.raises(ValueError, match="horizon"):
        ExperimentConfig(horizon=0)


def test_profile_compliance_flag():
    assert DominanceProfile(1.0, 0.25).compliant
    assert not DominanceProfile(1.0, 0.6).compliant
    assert DominanceProfile(2.0, 0.25).alpha(16) == pytest.approx(4.0)


def test_config_yaml_round_trip(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(
        yaml.safe_dump(
            {
                "seed": 9,
                "n_list": [10, 20],
                "grid": {"n_points": 128},
                "compliant": {"coefficient": 1.0, "exponent": 0.2},
            }
        )
    )
    cfg = load_config(str(path))
    assert cfg.seed == 9
    assert cfg.n_list == (10, 20)
    assert cfg.grid.n_points == 128
    assert cfg.compliant.exponent == 0.2


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({"seed": 1, "bogus": 2}))
    with pytest.raises(ValueError, match="bogus"):
        load_config(str(path))
    path.write_text(yaml.safe_dump({"grid": {"n_pts": 4}}))
    with pytest.raises(ValueError, match="n_pts"):
        load_config(str(path))


def test_config_hash_stable():
    assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig())
    assert config_hash(ExperimentConfig(seed=1)) != config_hash(ExperimentConfig(seed=2))


# -- reporting ----------------------------------------------------------------


def test_format_cell_round_trip():
    assert format_cell(0.1) == "0.1"
    assert float(format_cell(np.float64(1.0) / 3.0)) == 1.0 / 3.0
    assert format_cell(7) == "7"
    assert format_cell("x") == "x"


def test_trend_checks_shapes():
    records = [
        {"n": 30, "cost_selfish": 5.0, "cost_compliant": 12.0, "cost_violating": 30.0, "error": ""},
        {"n": 600, "cost_selfish": 5.1, "cost_compliant": 8.0, "cost_violating": 50.0, "error": ""},
    ]
    checks = dict((name, ok) for name, ok, _ in scaling_trend_checks(records))
    assert checks["selfish-flat"]
    assert checks["compliant-converges"]
    assert checks["violating-grows"]
    records[1]["cost_violating"] = 31.0
    checks = dict((name, ok) for name, ok, _ in scaling_trend_checks(records))
    assert not checks["violating-grows"]


def test_fit_loglog_slope():
    n = np.array([10.0, 100.0, 1000.0])
    assert fit_loglog_slope(n, n**-0.5) == pytest.approx(-0.5, abs=1e-12)


# -- CLI end to end -------------------------------------------------------------


@pytest.fixture(scope="module")
def scaling_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("scaling")
    code = main(
        ["scaling", "--n-list", "4,8", "--seed", "11", "--out", str(out), "--deterministic", "--quiet"]
    )
    return out, code


def test_scaling_csv_layout(scaling_run):
    out, code = scaling_run
    assert code in (0, 2)  # tiny populations may fail the soft trends
    rows = list(csv.DictReader(open(out / "scaling.csv")))
    assert [r["n"] for r in rows] == ["4", "8"]
    for row in rows:
        assert row["error"] == ""
        assert float(row["cost_selfish"]) > 0
        assert float(row["wall_time_s"]) == 0.0  # deterministic mode zeroes timings


def test_scaling_manifest(scaling_run):
    out, _ = scaling_run
    manifest = yaml.safe_load(open(out / "scaling.manifest"))
    assert manifest["experiment"] == "scaling"
    assert manifest["config"]["seed"] == 11
    assert "config_hash" in manifest and "trend_checks" in manifest


def test_scaling_byte_identical(tmp_path, scaling_run):
    out, _ = scaling_run
    code = main(
        ["scaling", "--n-list", "4,8", "--seed", "11", "--out", str(tmp_path), "--deterministic", "--quiet"]
    )
    assert code in (0, 2)
    assert (tmp_path / "scaling.csv").read_bytes() == (out / "scaling.csv").read_bytes()


def test_cli_bad_config_exits_3(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_key: 1\n")
    assert main(["scaling", "--config", str(bad), "--quiet"]) == 3


def test_lemma_decay_smoke(tmp_path):
    code = main(
        [
            "lemma-decay",
            "--n-list", "6,12,24",
            "--m-list", "2,4",
            "--seed", "5",
            "--out", str(tmp_path),
            "--quiet",
        ]
    )
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "lemma_decay.csv")))
    assert len(rows) == 3 * 3 * 2  # profiles x n values x truncations
    for row in rows:
        assert float(row["measured_hinf"]) <= float(row["bound_hinf"]) + 1e-12
        assert float(row["measured_h2"]) <= float(row["bound_h2"]) + 1e-12
    manifest = yaml.safe_load(open(tmp_path / "lemma_decay.manifest"))
    assert "fitted_slopes" in manifest


def test_simulate_smoke(tmp_path):
    code = main(
        ["simulate", "--n", "3", "--horizon", "40", "--seed", "5", "--out", str(tmp_path), "--quiet"]
    )
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "trajectories.csv")))
    assert len(rows) == 3 * 40
    inputs = list(csv.DictReader(open(tmp_path / "trajectories_inputs.csv")))
    assert len(inputs) == 3 * 40
    assert {r["agent"] for r in rows} == {"0", "1", "2"}


def test_matching_report(tmp_path):
    code = main(
        ["matching", "--a", "1.1", "--b", "0.9", "--fir-order", "16", "--out", str(tmp_path), "--quiet"]
    )
    assert code == 0
    report = (tmp_path / "matching_a1.1_b0.9.txt").read_text()
    fields = dict(line.split(" = ", 1) for line in report.strip().splitlines())
    assert float(fields["cost"]) < float(fields["cost_at_zero"])
    assert len(fields["z_taps"].split(",")) == 16


def test_matching_deterministic(tmp_path):
    main(["matching", "--a", "1.2", "--b", "1.0", "--fir-order", "8", "--out", str(tmp_path / "r1"), "--quiet"])
    main(["matching", "--a", "1.2", "--b", "1.0", "--fir-order", "8", "--out", str(tmp_path / "r2"), "--quiet"])
    t1 = (tmp_path / "r1" / "matching_a1.2_b1.txt").read_text()
    t2 = (tmp_path / "r2" / "matching_a1.2_b1.txt").read_text()
    assert t1 == t2


# -- simulation behavior -----------------------------------------------------------


def test_rollout_regulation_from_nonzero_state():
    from ensemblectl.ensemble import sample_population, selfish_Q
    from ensemblectl.youla import controller_from_Q

    model = sample_population(2, seed=3)
    q = selfish_Q(model, "hinf", "two", fir_order=12)
    agent = model.agents[0]
    controller = controller_from_Q(agent.factors, q.entry(0, 0).as_statespace())
    horizon = 300
    y = closed_loop_rollout(
        agent.factors.plant,
        controller,
        np.zeros(horizon),
        np.zeros(horizon),
        x0=np.array([1.0, -0.5]),
    )
    assert abs(y[-1]) < 1e-6 * abs(y[0])


def test_rollout_identical_agents_identical_trajectories():
    from ensemblectl.ensemble import sample_population, selfish_Q
    from ensemblectl.youla import controller_from_Q, factorize_agent
    from ensemblectl.matching import agent_problem, solve

    factors = factorize_agent(1.05, 0.95)
    sol = solve(agent_problem(factors, "hinf", "two", fir_order=12))
    controller = controller_from_Q(factors, sol.Z.as_statespace())
    horizon = 120
    rng = np.random.default_rng(1)
    w = rng.normal(0.0, 0.05, horizon)
    v = np.sin(2 * np.pi * np.arange(horizon) / 50.0)
    y1 = closed_loop_rollout(factors.plant, controller, w, v)
    y2 = closed_loop_rollout(factors.plant, controller, w, v)
    np.testing.assert_allclose(y1, y2, atol=1e-10)


def test_simulation_zero_inputs_zero_output(tmp_path):
    cfg = ExperimentConfig(
        seed=2, sim_n=2, horizon=30, noise_std=0.0, sine_amplitude=0.0,
        synthesis=__import__("ensemblectl.config", fromlist=["SynthesisSettings"]).SynthesisSettings(fir_order=8),
    )
    result = run_simulation(cfg, tmp_path, verbose=False)
    rows = list(csv.DictReader(open(result["csv"])))
    assert all(float(r["y"]) == 0.0 for r in rows)


def test_simulation_reference_mode(tmp_path):
    cfg = ExperimentConfig(seed=2, sim_n=2, horizon=30, sine_mode="reference")
    result = run_simulation(cfg, tmp_path, verbose=False)
    assert result["exit_code"] == 0
