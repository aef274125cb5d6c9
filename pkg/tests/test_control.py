import math

import numpy as np
import pytest

from bloch_relax.analytic import AdParams, t_fast_ad, t_free
from bloch_relax.channels import depolarizing
from bloch_relax.config import thermal_control_config
from bloch_relax.control import (CrabControl, OptimizeConfig, control_field, fit_slope,
                                 hitting_time, hitting_time_objective, optimize_T_m,
                                 restart_starts, sweep_m)
from bloch_relax.dynamics import IntegratorConfig
from bloch_relax.optim import NelderMeadOptions, nelder_mead
from conftest import BETA, GAMMA, R_FP, S_REF

P = AdParams(GAMMA, BETA)
FP = P.fixed_point
QUICK = NelderMeadOptions(max_evals=150)


def ref_problem(**kw):
    return thermal_control_config().optimize_config() if not kw else OptimizeConfig(
        P.channel(), tuple(S_REF), 0.04, 10.0, 10, 1.0, **kw)


def test_field_examples():
    c = CrabControl.zeros(3, 10.0, omega=1.4, m=2.0)
    np.testing.assert_allclose(control_field(c, 0.0), [0, 0, 0.7])
    np.testing.assert_allclose(control_field(c, 2.0), [0.2, 0.2, 0.9])
    c = CrabControl(np.array([[0.5], [0.0], [0.0]]), 8.0, m=1.0, drift_ramp=False)
    np.testing.assert_allclose(c.raw_control(2.0), [0.125, 0, 0], atol=1e-16)
    np.testing.assert_allclose(control_field(c, 2.0), [0.125, 0, 0], atol=1e-16)


def test_field_matches_python_formula():
    rng = np.random.default_rng(0)
    coeffs = rng.uniform(-1, 1, (3, 5))
    c = CrabControl(coeffs, 3.0, m=0.7, omega=0.4)
    for t in np.linspace(0, 3, 13):
        hc = t / (3.0 * 5) * sum(coeffs[:, n - 1] * math.sin(2 * math.pi * n * t / 3.0)
                                 for n in range(1, 6))
        if np.linalg.norm(hc) > 1:
            hc = hc / np.linalg.norm(hc)
        expected = np.array([t / 3, t / 3, 0.2 + t / 3]) + 0.7 * hc
        np.testing.assert_allclose(control_field(c, t), expected, atol=1e-15)


def test_clamp_to_unit_norm():
    c = CrabControl(np.full((3, 1), 0.99), 1.0, drift_ramp=False, m=1.0)
    t = 0.7
    raw = c.raw_control(t)
    assert np.linalg.norm(raw) > 1
    assert np.linalg.norm(c.unit_control(t)) == pytest.approx(1.0)
    np.testing.assert_allclose(control_field(c, t), raw / np.linalg.norm(raw))


def test_envelope_bounds_every_component():
    rng = np.random.default_rng(4)
    c = CrabControl(rng.uniform(-1, 1, (3, 10)), 10.0)
    for t in np.linspace(0, 10, 101):
        assert np.abs(c.raw_control(t)).max() <= c.envelope(t) + 1e-15


def test_control_validation():
    with pytest.raises(ValueError):
        CrabControl(np.ones((3, 2)), 1.0)
    with pytest.raises(ValueError):
        CrabControl(np.zeros((2, 2)), 1.0)
    with pytest.raises(ValueError):
        CrabControl(np.zeros((3, 2)), 0.0)
    with pytest.raises(ValueError):
        CrabControl(np.zeros((3, 2)), 1.0, m=-1)
    with pytest.raises(ValueError):
        control_field(CrabControl.zeros(2, 1.0), 1.5)
    assert CrabControl(np.zeros(6), 1.0).n_modes == 2


def test_objective_examples():
    cfg = ref_problem()
    zero = cfg.control(0.0)
    T0 = hitting_time_objective(zero, cfg.channel, cfg.s0, cfg.eps, cfg.integrator)
    # frozen value of the drift-only hitting time
    assert T0 == pytest.approx(0.5152796481201546, rel=1e-8)
    rand = cfg.control(0.0, np.random.default_rng(1).uniform(-1, 1, (3, 10)))
    assert hitting_time_objective(rand, cfg.channel, cfg.s0, cfg.eps, cfg.integrator) == T0
    assert hitting_time_objective(zero, cfg.channel, FP + [0.01, 0, 0], 0.04) == 0.0


def test_objective_penalty_when_missed():
    c = CrabControl.zeros(2, 0.05, omega=1.0)
    T, final = hitting_time(c, P.channel(), S_REF, FP, 0.04)
    assert T is None
    val = hitting_time_objective(c, P.channel(), S_REF, 0.04)
    assert val == pytest.approx(0.05 + np.linalg.norm(final - FP))


def test_nelder_mead_improves_crab_hitting_time():
    cfg = ref_problem()
    template = cfg.control(1.0)

    def obj(x):
        return hitting_time_objective(template.with_coeffs(x), cfg.channel, cfg.s0, cfg.eps,
                                      cfg.integrator)

    start = obj(np.zeros(30))
    res = nelder_mead(obj, np.zeros(30), [(-1, 1)] * 30, QUICK)
    assert res.fun < start - 1e-3


def test_restart_streams_are_prefix_stable():
    a = restart_starts(30, 3, 7)
    b = restart_starts(30, 5, 7)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert all(np.all(np.abs(x) < 1) for x in b)


def test_optimize_is_deterministic_and_reproducible():
    cfg = ref_problem(nelder_mead=QUICK)
    r1 = optimize_T_m(2.0, cfg, restarts=2, seed=11)
    r2 = optimize_T_m(2.0, cfg, restarts=2, seed=11)
    assert r1.to_dict() == r2.to_dict()
    again, _ = hitting_time(cfg.control(2.0, r1.best_coeffs), cfg.channel, cfg.s0,
                            cfg.center, cfg.eps, cfg.integrator)
    assert again == pytest.approx(r1.T_m, abs=1e-8)
    assert len(r1.outcomes) == 2 and r1.evaluations == sum(o.evals for o in r1.outcomes)
    assert r1.objective == min(o.objective for o in r1.outcomes)


def test_optimize_parallel_matches_serial():
    cfg = ref_problem(nelder_mead=NelderMeadOptions(max_evals=40))
    assert (optimize_T_m(1.0, cfg, 2, 3, jobs=2).to_dict()
            == optimize_T_m(1.0, cfg, 2, 3, jobs=1).to_dict())


def test_best_of_restarts_is_monotone():
    cfg = ref_problem(nelder_mead=NelderMeadOptions(max_evals=60))
    Ts = [optimize_T_m(1.0, cfg, restarts=k, seed=5).objective for k in (1, 2, 3)]
    assert Ts[0] >= Ts[1] >= Ts[2]


def test_m_zero_is_uncontrolled():
    cfg = ref_problem(nelder_mead=NelderMeadOptions(max_evals=40))
    rep = optimize_T_m(0.0, cfg, restarts=2, seed=0)
    assert rep.T_m == pytest.approx(0.5152796481201546, rel=1e-8)


def test_optimized_time_respects_analytic_floor():
    cfg = ref_problem(nelder_mead=QUICK)
    rep = optimize_T_m(5.0, cfg, restarts=1, seed=0)
    assert rep.T_m >= t_fast_ad(S_REF, 0.04, P) - 1e-8


def test_symmetric_depolarizing_gains_nothing():
    cfg = OptimizeConfig(depolarizing(1, 1, 1), (0.5, 0.3, -0.2), 0.01, 5.0, 3, 0.5,
                         nelder_mead=QUICK)
    rep = optimize_T_m(1.0, cfg, restarts=2, seed=0)
    free = t_free(cfg.channel, cfg.s0, 0.01)
    assert free == pytest.approx(math.log(np.linalg.norm(cfg.s0) / 0.01) / 4.0)
    assert rep.T_m == pytest.approx(free, rel=1e-6)


def test_sweep_validation_and_order():
    cfg = ref_problem(nelder_mead=NelderMeadOptions(max_evals=30))
    with pytest.raises(ValueError):
        sweep_m([1.0, 0.5], cfg, restarts=1)
    reps = sweep_m([0.0, 0.5], cfg, restarts=1)
    assert [r.m for r in reps] == [0.0, 0.5]
    with pytest.raises(ValueError):
        optimize_T_m(-1.0, cfg)
    with pytest.raises(ValueError):
        optimize_T_m(1.0, cfg, restarts=0)


def test_fit_slope():
    ms = np.array([0, 0.01, 0.02, 0.03])
    fit = fit_slope(ms, 0.5 - 2.0 * ms)
    assert (fit.T_bar, fit.A, fit.r2) == pytest.approx((0.5, 2.0, 1.0))
    noisy = fit_slope(ms, 0.5 - 2.0 * ms + [0, 1e-3, -1e-3, 0])
    assert noisy.r2 < 1
    with pytest.raises(ValueError):
        fit_slope([0.0], [0.5])
    with pytest.raises(ValueError):
        fit_slope([0.1, 0.1, 0.1], [1, 2, 3])


def test_config_defaults():
    cfg = ref_problem()
    np.testing.assert_allclose(cfg.center, [0, 0, -R_FP])
    with pytest.raises(ValueError):
        OptimizeConfig(P.channel(), tuple(S_REF), 0.0, 10.0, 10, 1.0)
    with pytest.raises(ValueError):
        OptimizeConfig(P.channel(), tuple(S_REF), 0.04, 10.0, 0, 1.0)
    assert isinstance(cfg.integrator, IntegratorConfig)
