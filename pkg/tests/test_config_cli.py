import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bloch_relax import cli
from bloch_relax.config import (ConfigError, ControlSettings, IntegratorSettings,
                                OptimizerSettings, RunConfig, thermal_control_config)
from conftest import R_FP

AD = {"kind": "amplitude_damping", "gamma": math.expm1(2.0), "beta": 2.0}


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


# ------------------------------------------------------------------ config

def test_round_trip_reference_config():
    cfg = thermal_control_config()
    assert RunConfig.loads(cfg.dumps()) == cfg


@given(st.floats(1e-3, 0.5), st.booleans(), st.integers(1, 12),
       st.sampled_from(["csv", "json"]), st.integers(0, 2**31),
       st.one_of(st.none(), st.floats(0.0, 5.0)))
def test_round_trip_property(eps, natural, n_modes, fmt, seed, omega):
    cfg = RunConfig(channel={"kind": "depolarizing", "gx": 1.0, "gy": 2.0, "gz": 5.0},
                    s0=[0.1, -0.2, 0.3], eps=eps, natural_units=natural, format=fmt,
                    control=ControlSettings(n_modes=n_modes, omega=omega),
                    optimizer=OptimizerSettings(seed=seed),
                    integrator=IntegratorSettings(max_step=0.25))
    assert RunConfig.loads(cfg.dumps()) == cfg


@pytest.mark.parametrize("bad", [
    {"channel": AD, "s0": [0, 0, 0], "bogus": 1},
    {"channel": AD, "s0": [0, 0, 0], "control": {"tua": 3}},
    {"channel": AD},
    {"channel": AD, "s0": [0, 0]},
    {"channel": AD, "s0": [0, 0, 0], "eps": 0},
    {"channel": AD, "s0": [0, 0, 0], "format": "xml"},
    {"channel": {"kind": "amplitude_damping", "gamma": -1, "beta": 2}, "s0": [0, 0, 0]},
    {"channel": {"kind": "nope"}, "s0": [0, 0, 0]},
    [1, 2, 3],
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_invalid_json_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.loads("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(str(tmp_path / "missing.json"))


def test_omega_must_be_explicit():
    cfg = RunConfig(channel=AD, s0=[0.1, 0, 0])
    with pytest.raises(ConfigError, match="omega"):
        cfg.optimize_config()
    with pytest.raises(ConfigError):
        cfg.crab()


def test_natural_units_scale_times():
    cfg = thermal_control_config(natural_units=True,
                      integrator=IntegratorSettings(t_max=2.0, max_step=0.5))
    gamma = AD["gamma"]
    assert cfg.time_scale == pytest.approx(1 / gamma)
    ic = cfg.integrator_config()
    assert ic.t_max == pytest.approx(2.0 / gamma) and ic.max_step == pytest.approx(0.5 / gamma)
    assert cfg.optimize_config().tau == pytest.approx(10.0 / gamma)
    assert thermal_control_config().integrator_config().max_step == math.inf


# ------------------------------------------------------------------ commands

def test_analytic_ad(tmp_path, capsys):
    code, out, _ = run(["analytic", "--config", write(tmp_path, thermal_control_config().to_dict())],
                       capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["r_fp"] == pytest.approx(0.76159, abs=1e-5)
    assert rep["t_fast"]["value"] <= rep["t_free"]["value"]
    assert rep["task"] == "heating" or rep["task"] == "cooling"
    assert rep["fixed_point"]["base"] == pytest.approx([0, 0, -R_FP])


def test_analytic_pd_on_axis_all_zero(tmp_path, capsys):
    cfg = {"channel": {"kind": "phase_damping", "ghat": 1.0}, "s0": [0, 0, 0.4]}
    code, out, _ = run(["analytic", "--config", write(tmp_path, cfg)], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["t_free"]["value"] == 0 and rep["t_fast"]["value"] == 0


def test_analytic_symmetric_dp_flags_control_useless(tmp_path, capsys):
    cfg = {"channel": {"kind": "depolarizing", "gx": 2, "gy": 2, "gz": 2},
           "s0": [0.3, 0.5, -0.1], "eps": 0.01}
    code, out, _ = run(["analytic", "--config", write(tmp_path, cfg)], capsys)
    rep = json.loads(out)
    assert rep["control_useless"] is True
    assert rep["t_fast"]["value"] == pytest.approx(rep["t_free"]["value"], rel=1e-12)


def test_analytic_natural_units_flag(tmp_path, capsys):
    path = write(tmp_path, thermal_control_config().to_dict())
    _, a, _ = run(["analytic", "--config", path], capsys)
    _, b, _ = run(["analytic", "--config", path, "--natural-units"], capsys)
    ta, tb = json.loads(a)["t_free"]["value"], json.loads(b)["t_free"]["value"]
    assert tb == pytest.approx(ta * AD["gamma"])


def test_sweep_grid(tmp_path, capsys):
    path = write(tmp_path, thermal_control_config().to_dict())
    out_path = tmp_path / "grid.csv"
    code, _, _ = run(["sweep-grid", "--config", path, "--resolution", "21", "--format", "csv",
                      "--out", str(out_path)], capsys)
    assert code == 0
    data = np.loadtxt(out_path, delimiter=",", skiprows=1)
    assert np.all(data[:, 0] ** 2 + data[:, 1] ** 2 <= 1 + 1e-12)
    assert np.all(data[:, 3] <= data[:, 2] + 1e-12)
    first = out_path.read_bytes()
    run(["sweep-grid", "--config", path, "--resolution", "21", "--format", "csv",
         "--out", str(out_path)], capsys)
    assert out_path.read_bytes() == first


@pytest.mark.parametrize("channel", [{"kind": "depolarizing", "gx": 1, "gy": 2, "gz": 5},
                                     {"kind": "phase_damping", "ghat": 1.0}])
def test_sweep_grid_eps_one_is_zero(tmp_path, capsys, channel):
    path = write(tmp_path, RunConfig(channel=channel, s0=[0, 0, 0], eps=1.0).to_dict())
    code, out, _ = run(["sweep-grid", "--config", path, "--resolution", "16",
                        "--format", "csv"], capsys)
    data = np.loadtxt(out.splitlines()[1:], delimiter=",")
    assert code == 0 and np.all(data[:, 2:] == 0)


def test_sweep_grid_eps_one_ad_zero_exactly_inside_ball(tmp_path, capsys):
    # the thermal fixed point is off-centre, so part of the ball stays outside radius 1
    path = write(tmp_path, thermal_control_config(eps=1.0).to_dict())
    _, out, _ = run(["sweep-grid", "--config", path, "--resolution", "16",
                     "--format", "csv"], capsys)
    data = np.loadtxt(out.splitlines()[1:], delimiter=",")
    inside = np.hypot(data[:, 0], data[:, 1] + R_FP) <= 1.0
    assert np.all(data[inside, 2:] == 0)
    assert np.all(data[~inside, 2] > 0)
    assert np.all(data[:, 3] == 0)


def test_sweep_grid_resolution_too_small(tmp_path, capsys):
    path = write(tmp_path, thermal_control_config().to_dict())
    code, _, err = run(["sweep-grid", "--config", path, "--resolution", "8"], capsys)
    assert code == 2 and json.loads(err)["error"] == "config"


def test_simulate_reaches_ball_iff_horizon_covers_free_time(tmp_path, capsys):
    s0 = [0.3, 0.1, 0.5]
    base = RunConfig(channel=AD, s0=s0)
    _, rep, _ = run(["analytic", "--config", write(tmp_path, base.to_dict())], capsys)
    T = json.loads(rep)["t_free"]["value"]
    for t_max, inside in ((T * 1.01, True), (T * 0.99, False)):
        cfg = base.with_overrides(integrator=IntegratorSettings(t_max=t_max))
        code, out, _ = run(["simulate", "--config", write(tmp_path, cfg.to_dict())], capsys)
        res = json.loads(out)
        final = np.array(res["rows"][-1][1:4])
        assert code == 0
        assert (np.linalg.norm(final - [0, 0, -R_FP]) < 0.04) == inside
        assert (res["hit_time"] is not None) == inside


def test_simulate_csv_is_byte_stable(tmp_path, capsys):
    path = write(tmp_path, thermal_control_config(format="csv").to_dict())
    _, a, _ = run(["simulate", "--config", path], capsys)
    _, b, _ = run(["simulate", "--config", path], capsys)
    assert a == b and a.startswith("t,")


def test_optimize_m_zero_is_uncontrolled(tmp_path, capsys):
    cfg = thermal_control_config(optimizer=OptimizerSettings(max_evals=20))
    path = write(tmp_path, cfg.to_dict())
    code, out, _ = run(["optimize", "--config", path, "--m", "0", "--restarts", "2",
                        "--seed", "3"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["restarts"] == 2 and rep["seed"] == 3
    assert rep["T_m"] == pytest.approx(0.5152796481201546, rel=1e-8)


def test_sweep_csv_deterministic(tmp_path, capsys):
    cfg = thermal_control_config(format="csv", optimizer=OptimizerSettings(max_evals=15, m_list=[0, 1]))
    path = write(tmp_path, cfg.to_dict())
    argv = ["sweep", "--config", path, "--restarts", "1"]
    _, a, _ = run(argv, capsys)
    _, b, _ = run(argv, capsys)
    assert a == b
    assert a.splitlines()[0] == "m,T_m,T_fast_analytic"


def test_numerical_failure_exit_code(tmp_path, capsys):
    # a control horizon far too short to reach the ball makes the slope fit impossible
    cfg = thermal_control_config(control=ControlSettings(tau=0.01, omega=1.0),
                      optimizer=OptimizerSettings(max_evals=5))
    code, _, err = run(["slope", "--config", write(tmp_path, cfg.to_dict()),
                        "--restarts", "1"], capsys)
    assert code == 3 and json.loads(err)["error"] == "numerical"


def test_config_error_exit_codes(tmp_path, capsys):
    code, _, err = run(["analytic", "--config", write(tmp_path, "{broken")], capsys)
    assert code == 2 and json.loads(err)["type"] == "ConfigError"
    code, _, _ = run(["optimize", "--config",
                      write(tmp_path, {"channel": AD, "s0": [0.1, 0, 0]})], capsys)
    assert code == 2
    code, _, _ = run(["analytic", "--config", write(tmp_path, thermal_control_config().to_dict()),
                      "--jobs", "0"], capsys)
    assert code == 2
