import json
import os

import numpy as np
import pytest

from fracspde.cli import dispatch, emit_plot_data, main
from fracspde.config import ConfigError, format_config, known_keys, parse_config
from fracspde.fbm import FbmPath, sample_fbm_path
from fracspde.montecarlo import ICSpec, parameter_sweep
from fracspde.simulator import GridSpec, ModelParams, discretize, make_initial_condition, simulate_realization

SMALL = """
grid.M = 30
grid.N = 200
ensemble.n_realizations = 4
bounds.n_paths = 10
bounds.T_sup = 2.0
fbmtest.n_paths = 50
"""


def test_empty_config_defaults():
    c = parse_config("")
    m, g = c.model, c.grid
    assert (m.delta, m.gamma, m.beta, m.sigma, m.p, m.q, m.alpha, m.hurst) == (1, 0.1, 1, 0.1, 2, 2, 1.2, 0.6)
    assert (g.M, g.N, g.T, g.blowup_threshold) == (101, 10_000, 1.0, 4.5036e15)
    assert c.ic.c == 0.01 and c.ic.kind == "bump_plus_eigen"


def test_hurst_rejected_with_key_and_interval():
    with pytest.raises(ConfigError) as exc:
        parse_config("model.hurst = 1.5")
    assert exc.value.key == "model.hurst"
    assert "(0, 1)" in str(exc.value)


def test_round_trip():
    c = parse_config(SMALL + "sweep.axis = H\nsweep.values = 0.5, 0.6\noutput.formats = json\n")
    again = parse_config(format_config(c))
    assert again == c
    assert format_config(again) == format_config(c)


@pytest.mark.parametrize("doc,key", [("model.foo = 1", "model.foo"), ("grid.N = ten", "grid.N"),
                                     ("grid.N = 1.5", "grid.N"), ("model.delta = x", "model.delta"),
                                     ("model.p = 1", "model.p"), ("sweep.axis = beta", "sweep.axis"),
                                     ("output.formats = xml", "output.formats"),
                                     ("grid.N = 5\ngrid.N = 6", "grid.N")])
def test_config_errors_name_key(doc, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert exc.value.key == key


def test_profiles_and_comments():
    c = parse_config("# comment\nmodel.delta = 2  # trailing\n", profile="desk")
    assert c.model.delta == 2 and c.grid.N == 2000 and c.ensemble.n_realizations == 1000
    c = parse_config("grid.N = 500", profile="full")
    assert c.grid.N == 500 and c.ensemble.n_realizations == 10_000
    assert parse_config("", overrides={"ensemble.master_seed": 9}).ensemble.master_seed == 9


def test_known_keys_cover_sections():
    keys = known_keys()
    assert "model.noise_shape" in keys and "output.trajectory_stride" in keys


def _record(params, grid, c, path=None):
    d = discretize(params, grid)
    f = make_initial_condition("bump_plus_eigen", c, d.eig, grid)
    path = path or sample_fbm_path(params.hurst, grid.T, grid.N, 1)
    return simulate_realization(params, grid, path, f, store_stride=20, disc=d)


def _read_cols(p):
    lines = p.read_text().splitlines()
    assert lines[0].startswith("#")
    return lines[0][1:].split(), np.array([[float(x) for x in ln.split()] for ln in lines[1:]])


def test_plot_data_blowup_history(tmp_path):
    g = GridSpec(M=30, N=400, T=1.0)
    rec = _record(ModelParams(delta=7.0), g, 3.0)
    assert rec.blew_up
    emit_plot_data(rec, tmp_path / "s.dat")
    header, data = _read_cols(tmp_path / "s.dat")
    assert header == ["t", "sup"]
    assert data[-1, 1] >= g.blowup_threshold


def test_plot_data_decay_history(tmp_path):
    p = ModelParams(delta=1.0, sigma=0.01, gamma=0.01, beta=2.0, p=4.0, q=2.0)
    g = GridSpec(M=30, N=1000, T=10.0)
    rec = _record(p, g, 0.01)
    emit_plot_data(rec, tmp_path / "d.dat")
    _, data = _read_cols(tmp_path / "d.dat")
    assert data[-1, 1] < data[0, 1]


def test_plot_data_trajectory_and_stride(tmp_path):
    g = GridSpec(M=30, N=100, T=0.1)
    rec = _record(ModelParams(), g, 0.1)
    emit_plot_data(rec.trajectory, tmp_path / "u.dat", stride=2)
    header, data = _read_cols(tmp_path / "u.dat")
    assert header == ["t", "x", "u"]
    assert data.shape == (3 * 29, 3)
    with pytest.raises(ValueError, match="stride"):
        emit_plot_data(rec.trajectory, tmp_path / "u.dat", stride=0)
    with pytest.raises(OSError, match="nope"):
        emit_plot_data(rec, tmp_path / "nope" / "x.dat")


def test_plot_data_sweep_rows(tmp_path):
    rows = parameter_sweep(ModelParams(), GridSpec(M=30, N=100), ICSpec(), 2, 1, "c", [0.01, 4.0])
    emit_plot_data(rows, tmp_path / "w.dat")
    header, data = _read_cols(tmp_path / "w.dat")
    assert header[:2] == ["axis_value", "p_hat"] and data.shape[0] == 2


def test_simulate_single_realization(tmp_path):
    cfg = parse_config(SMALL.replace("ensemble.n_realizations = 4", "ensemble.n_realizations = 1"))
    assert dispatch("simulate", cfg, str(tmp_path)) == 0
    lines = (tmp_path / "realizations.csv").read_text().splitlines()
    assert len(lines) == 2
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["n_realizations"] == 1
    assert not (tmp_path / "FAILED.json").exists()


def test_sweep_hurst_rows_in_order(tmp_path):
    hs = [0.5, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]
    cfg = parse_config(SMALL + "sweep.axis = H\nsweep.values = " + ", ".join(map(str, hs)) + "\n")
    assert dispatch("sweep", cfg, str(tmp_path)) == 0
    lines = (tmp_path / "sweep_H.csv").read_text().splitlines()
    assert len(lines) == 10
    assert [float(ln.split(",")[0]) for ln in lines[1:]] == hs


def test_sweep_without_axis_writes_manifest(tmp_path):
    assert dispatch("sweep", parse_config(SMALL), str(tmp_path)) == 1
    man = json.loads((tmp_path / "FAILED.json").read_text())
    assert man["command"] == "sweep" and "sweep.axis" in man["error"]
    assert "config.txt" in man["artifacts"]


def test_manifest_cleared_on_success(tmp_path):
    dispatch("sweep", parse_config(SMALL), str(tmp_path))
    assert dispatch("fbm-test", parse_config(SMALL), str(tmp_path)) == 0
    assert not (tmp_path / "FAILED.json").exists()


def test_validate_defaults_calibration(tmp_path):
    cfg = parse_config("grid.N = 400")
    assert dispatch("validate", cfg, str(tmp_path)) == 0
    items = {it["name"]: it for it in json.loads((tmp_path / "validate.json").read_text())}
    assert items["calibration"]["passed"]
    assert abs(items["calibration"]["lambda1"] - 1.3037) <= 0.01
    assert all(it["passed"] for it in items.values())


def test_bounds_command(tmp_path):
    cfg = parse_config(SMALL + "model.p = 1.5\nmodel.beta = 0.1\nic.kind = pure_eigen\nic.c = 5\n"
                       "bounds.b = 6\nbounds.n_seeds = 2\n")
    assert dispatch("bounds", cfg, str(tmp_path)) == 0
    rep = json.loads((tmp_path / "bounds_1.json").read_text())
    assert rep["exponent_regime"] == "q>p" and rep["tau_upper"] is not None
    assert len((tmp_path / "bounds.csv").read_text().splitlines()) == 3


def test_fbm_test_command(tmp_path):
    assert dispatch("fbm-test", parse_config(SMALL), str(tmp_path)) == 0
    items = json.loads((tmp_path / "fbm_test.json").read_text())
    assert {it["name"] for it in items} >= {"brownian_lag1_corr", "autocovariance_telescoping"}
    assert (tmp_path / "fbm_path_0.csv").read_text().startswith("n,t,B,dB,Bstar")


def test_main_flags(tmp_path, capsys):
    cfgfile = tmp_path / "c.txt"
    cfgfile.write_text(SMALL)
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfgfile), "--out", str(out), "--seed", "77"]) == 0
    assert json.loads((out / "stats.json").read_text())["master_seed"] == 77
    assert "ensemble.master_seed = 77" in (out / "config.txt").read_text()
    bad = tmp_path / "bad.txt"
    bad.write_text("model.hurst = 2\n")
    assert main(["simulate", "--config", str(bad), "--out", str(out)]) == 2
    assert "model.hurst" in capsys.readouterr().err
