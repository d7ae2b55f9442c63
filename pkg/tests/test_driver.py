import logging

import numpy as np
import pytest

from cfmaxmin.driver import (
    BisectionConfig,
    PreparedScenario,
    bisection_maxmin,
    check_feasibility,
    normalize_scenario,
    qos_min_power,
    single_user_min_power,
    single_user_oracle,
    with_solver,
)
from cfmaxmin.lifting import achieved_rates, scenario_rates
from cfmaxmin.solvers import SolverConfig, Verdict

from conftest import make_scenario, physical_scenario, random_scenario


def independent_validity(scenario, beamformers):
    """Rates and per-AP powers recomputed with explicit loops."""
    h, v = scenario.channels, beamformers
    K, M, _ = h.shape
    rates = []
    for k in range(K):
        g = [abs(np.vdot(h[k].ravel(), v[j].ravel())) ** 2 for j in range(K)]
        rates.append(np.log2(1 + g[k] / (sum(g) - g[k] + scenario.noise_power[k])))
    powers = [sum(np.vdot(v[k, m], v[k, m]).real for k in range(K)) for m in range(M)]
    return np.array(rates), np.array(powers)


def test_oracle_examples():
    assert single_user_oracle(make_scenario(np.zeros((1, 2, 2)))) == 0.0
    assert single_user_oracle(make_scenario(np.ones((1, 1, 1)))) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        single_user_oracle(random_scenario(1, 1, 2))


def test_oracle_matches_grid_search():
    rng = np.random.default_rng(12)
    h = (rng.standard_normal((1, 2, 1)) + 1j * rng.standard_normal((1, 2, 1)))
    p = np.array([0.6, 1.3])
    sc = make_scenario(h, noise_power=0.4, per_ap_power=p)
    frac = np.linspace(0, 1, 201)
    phase = np.linspace(0, 2 * np.pi, 721)
    a = np.sqrt(frac * p[0])[:, None, None] * h[0, 0, 0]
    b = np.sqrt(frac * p[1])[None, :, None] * h[0, 1, 0] * np.exp(1j * phase)[None, None, :]
    best = np.log2(1 + np.max(np.abs(a + b) ** 2) / 0.4)
    assert abs(best - single_user_oracle(sc)) <= 1e-3


def test_single_user_min_power_formula():
    h = np.array([1.0 + 1.0j, 0.5])
    assert single_user_min_power(h, 2.0, 1.0) == pytest.approx(2.0 / 2.25)


def test_normalization_preserves_rates():
    sc = physical_scenario(2, 2, 3, seed=1)
    scaled, p_ref = normalize_scenario(sc)
    rng = np.random.default_rng(0)
    v = rng.standard_normal((3, 2, 2)) + 1j * rng.standard_normal((3, 2, 2))
    np.testing.assert_allclose(scenario_rates(scaled, v), scenario_rates(sc, np.sqrt(p_ref) * v),
                               rtol=1e-10)
    assert np.all(scaled.noise_power == 1.0) and np.max(scaled.power) == 1.0


def test_trivial_rate_is_feasible():
    sc = physical_scenario(2, 1, 2, seed=0)
    out = check_feasibility(sc, 0.0)
    assert out.verdict is Verdict.FEASIBLE and np.all(out.beamformers == 0)
    with pytest.raises(ValueError):
        check_feasibility(sc, 1.0, solver="newton")


@pytest.mark.parametrize("solver", ["standard", "randomized"])
def test_check_near_oracle(solver):
    sc = physical_scenario(2, 2, 1, seed=3)
    opt = single_user_oracle(sc)
    prep = PreparedScenario(sc)
    good = check_feasibility(prep, opt - 0.1, solver)
    assert good.verdict is Verdict.FEASIBLE
    rates, powers = independent_validity(sc, good.beamformers)
    assert rates.min() >= opt - 0.1 - good.rate_slack - 1e-9
    assert np.all(powers <= sc.power * (1 + 1e-8))
    assert check_feasibility(prep, opt + 0.1, solver).verdict is Verdict.INFEASIBLE


def test_bisection_check_counts_and_bracket():
    sc = physical_scenario(1, 2, 1, seed=2)
    res = bisection_maxmin(sc, BisectionConfig(solver="standard"))
    assert res.checks_performed == 10 == BisectionConfig().expected_checks
    lo, hi = res.rate_interval
    assert hi - lo <= 0.01 * (1 + 1e-9)
    # the bracket narrows by half at each check
    widths = [10.0 / 2 ** (i + 1) for i in range(10)]
    assert widths[-1] == pytest.approx(hi - lo)
    cfg = BisectionConfig(s_max=10.24, s_ter=0.16, solver="standard")
    assert bisection_maxmin(sc, cfg).checks_performed == 6 == cfg.expected_checks


def test_bisection_result_validity_and_json(tmp_path):
    sc = physical_scenario(2, 2, 3, seed=4, per_ap_power=0.1)
    res = bisection_maxmin(sc, BisectionConfig(solver="standard"))
    rates, powers = independent_validity(sc, res.beamformers)
    assert rates.min() >= res.certified_rate - res.rate_slack - 1e-9
    assert np.all(powers <= sc.power * (1 + 1e-8))
    np.testing.assert_allclose(res.per_user_rates, rates, rtol=1e-10)
    feas = [c for c in res.total_trace if c.verdict == "feasible"]
    assert all(c.s_c <= res.certified_rate for c in feas)
    res.save(tmp_path / "r.json")
    assert (tmp_path / "r.json").read_text().startswith("{")


def test_bisection_monotone_in_power():
    sc = physical_scenario(2, 2, 2, seed=5)
    base = bisection_maxmin(sc, BisectionConfig(solver="standard")).certified_rate
    more = bisection_maxmin(sc.replace(per_ap_power=2 * sc.power),
                            BisectionConfig(solver="standard")).certified_rate
    assert more > base


def test_saturated_bracket_warns(caplog):
    sc = make_scenario(np.full((1, 1, 1), 100.0), noise_power=1.0, per_ap_power=1.0)
    with caplog.at_level(logging.WARNING):
        res = bisection_maxmin(sc, BisectionConfig(s_max=2.0, s_ter=0.5, solver="standard"))
    assert res.saturated and "s_max" in caplog.text


def test_bisection_config_validation():
    for bad in (dict(s_min=5, s_max=1), dict(s_ter=0), dict(solver="x")):
        with pytest.raises(ValueError):
            BisectionConfig(**bad)
    cfg = with_solver(BisectionConfig(), solver="standard")
    assert cfg.solver == "standard"


def test_qos_single_user_single_ap():
    sc = physical_scenario(1, 3, 1, seed=6)
    s = 1.5
    out = qos_min_power(sc, s)
    ref = single_user_min_power(sc.joint_channels[0], sc.noise_power[0], s)
    assert out.objective == pytest.approx(ref, rel=1e-6)


def test_qos_multi_user_constraints_and_monotone():
    sc = physical_scenario(2, 2, 3, seed=7)
    a = qos_min_power(sc, 1.0)
    b = qos_min_power(sc, 2.0)
    assert a.verdict is Verdict.FEASIBLE and b.verdict is Verdict.FEASIBLE
    assert achieved_rates(sc.channels, sc.noise_power, a.beamformers).min() >= 1.0 - 1e-6
    assert b.objective > a.objective
    small = qos_min_power(sc, 1e-3)
    assert small.objective < 1e-2 * a.objective
    with pytest.raises(ValueError):
        qos_min_power(sc, 0.0)


def test_qos_zero_channel_is_infeasible():
    sc = make_scenario(np.array([[[1.0]], [[0.0]]]).astype(complex))
    assert qos_min_power(sc, 1.0).verdict is Verdict.INFEASIBLE


def test_warm_start_runs():
    sc = physical_scenario(2, 1, 2, seed=8)
    cold = bisection_maxmin(sc, BisectionConfig(solver="standard"))
    warm = bisection_maxmin(sc, BisectionConfig(solver="standard", warm_start=True,
                                                solver_config=SolverConfig()))
    assert abs(cold.certified_rate - warm.certified_rate) <= 0.01 + 1e-9
