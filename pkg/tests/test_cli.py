import json

import numpy as np
import pytest

from smaplab.cli import main
from smaplab.experiments import ConfigError, ExperimentConfig, load_config, observed_orders
from smaplab.gauge import gauge_data
from smaplab.modulation import solve_scaling_pair
from smaplab.reconstruct import GaugedState, save_state
from smaplab.sphere import HarmonicParams, load_profile, log_bump, perturbed_map, save_profile


@pytest.fixture
def profile(tmp_path, grid):
    u = perturbed_map(2, lambda r: 0.04 * (1 + 0.5j) * log_bump(r, 1.2, 0.6), grid, HarmonicParams(1.3, 0.4))
    path = tmp_path / "u.txt"
    save_profile(path, u)
    return path, u


def test_config_loading(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[grid]\nn = 1024  ; inline comment\n[initial]\nkind = harmonic\nm = 3\n[run]\nT = 0.01\nclosest = no\n[converge]\ndt_ladder = 1e-3, 5e-4, 2.5e-4\n")
    cfg = load_config(path)
    assert (cfg.n, cfg.initial, cfg.m, cfg.T, cfg.closest) == (1024, "harmonic", 3, 0.01, False)
    assert cfg.dt_ladder == [1e-3, 5e-4, 2.5e-4]


@pytest.mark.parametrize(
    "text,match",
    [("[grid]\nbogus = 1\n", "unknown key"), ("[nope]\n", "unknown section"), ("[run]\ndt = -1\n", "dt")],
)
def test_config_errors(tmp_path, text, match):
    path = tmp_path / "c.ini"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(path)


def test_missing_config_is_usage_error(tmp_path, capsys):
    missing = tmp_path / "none.ini"
    assert main(["simulate", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 2


def test_observed_orders():
    out = observed_orders([1.0, 0.25, 0.0625])
    assert np.isnan(out[0]) and out[1:] == pytest.approx([2.0, 2.0])


def test_fit_reports_parameters(tmp_path, profile, capsys):
    path, u = profile
    assert main(["fit", str(path), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "fit.json").read_text())
    st = solve_scaling_pair(u)
    assert rep["s"] == pytest.approx(st.s) and rep["alpha"] == pytest.approx(st.alpha)
    assert rep["delta"] > 0 and rep["energy"] > 8 * np.pi
    assert json.loads(capsys.readouterr().out)["s_star"] == rep["s_star"]


def test_gauge_report(tmp_path, profile):
    path, _ = profile
    assert main(["--quiet", "gauge", str(path), "--out", str(tmp_path / "g")]) == 0
    rep = json.loads((tmp_path / "g" / "gauge_report.json").read_text())
    assert abs(rep["bogomolny_residual"]) < 1e-9
    assert (tmp_path / "g" / "gauge.txt").exists()


def test_gauge_on_missing_file(tmp_path):
    assert main(["gauge", str(tmp_path / "missing.txt")]) == 2


def test_reconstruct_round_trip(tmp_path, profile):
    path, u = profile
    gd = gauge_data(u)
    st = solve_scaling_pair(u)
    state_path = tmp_path / "state.txt"
    save_state(state_path, GaugedState(u.grid, gd.q, st.s, st.alpha), u.m)
    out = tmp_path / "rec.txt"
    assert main(["reconstruct", str(state_path), "-o", str(out), "--quiet"]) == 0
    back = load_profile(out)
    assert np.max(np.abs(back.v - u.v)) < 1e-7


def test_reconstruct_outside_chart_is_numerical_error(tmp_path, grid):
    q = 50.0 * log_bump(grid.r).astype(complex)
    save_state(tmp_path / "big.txt", GaugedState(grid, q, 1.0, 0.0), 2)
    assert main(["reconstruct", str(tmp_path / "big.txt"), "--quiet"]) == 1


def test_simulate_writes_outputs(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[grid]\nn = 1024\n[run]\nT = 0.002\npipeline = gauged\n")
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pipelines"]["gauged"]["halt_reason"] == "completed"
    assert len((out / "trajectory_gauged.jsonl").read_text().splitlines()) == 3


def test_converge_writes_csv(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nT = 0.002\n[converge]\nn_ladder = 256, 512, 1024\npipeline = gauged\n")
    out = tmp_path / "cv"
    assert main(["converge", "--config", str(cfg), "--out", str(out), "--ladder", "n", "--quiet"]) == 0
    rows = (out / "convergence.csv").read_text().splitlines()
    assert rows[0].startswith("ladder,rung") and len(rows) == 4


def test_default_config_is_valid():
    ExperimentConfig().validate()
