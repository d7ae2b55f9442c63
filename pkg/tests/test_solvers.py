import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfmaxmin.cones import f_gradient
from cfmaxmin.driver import PreparedScenario, single_user_oracle
from cfmaxmin.lifting import build_problem, build_qos_problem
from cfmaxmin.solvers import (
    TRACE_HEADER,
    SolverConfig,
    SolverDivergedError,
    SolverState,
    StopReason,
    Verdict,
    ergodic_diagnostics,
    qos_admm,
    randomized_admm,
    read_trace_csv,
    standard_admm,
)

from conftest import dense_admm, random_scenario


def snap_config(**kw):
    base = dict(beta=0.5, opg_tol=0.0, record_iterates=True)
    base.update(kw)
    return SolverConfig(**base)


def test_config_validation():
    for bad in (dict(beta=0), dict(alpha=0), dict(alpha=1.5), dict(alpha_bar=-1), dict(max_iter=0),
                dict(feas_tol=0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    with pytest.raises(ValueError, match="theory_mode"):
        SolverConfig(alpha=0.5, alpha_bar=0.01, theory_mode=True)
    cfg = SolverConfig(alpha=0.5, alpha_bar=6.0, theory_mode=True)
    assert cfg.satisfies_theory_condition


@pytest.mark.parametrize("seed", [0, 1])
def test_standard_matches_dense_reference(seed):
    p = build_problem(random_scenario(2, 2, 3, seed=seed), 0.7)
    T = 40
    out = standard_admm(p, snap_config(max_iter=T))
    ref = dense_admm(p, 0.5, 1.0, 0.0, T, seed=0)
    for t in range(T):
        np.testing.assert_allclose(out.snapshots.V[t], ref[t][0], rtol=0, atol=1e-10)
        if t < T - 1:  # the stopping iteration skips its w and dual steps
            np.testing.assert_allclose(out.snapshots.w[t], ref[t][1], rtol=0, atol=1e-10)
            np.testing.assert_allclose(out.snapshots.lam[t], ref[t][2], rtol=0, atol=1e-10)


@pytest.mark.parametrize("alpha, alpha_bar", [(0.5, 0.3), (0.2, 0.0), (0.8, 2.0)])
def test_randomized_matches_dense_reference(alpha, alpha_bar):
    p = build_problem(random_scenario(2, 1, 4, seed=4), 1.2)
    T = 60
    out = randomized_admm(p, snap_config(max_iter=T, alpha=alpha, alpha_bar=alpha_bar, seed=11))
    ref = dense_admm(p, 0.5, alpha, alpha_bar, T, seed=11)
    for t in range(T - 1):
        np.testing.assert_allclose(out.snapshots.V[t], ref[t][0], rtol=0, atol=1e-10)
        np.testing.assert_allclose(out.snapshots.w[t], ref[t][1], rtol=0, atol=1e-10)
        np.testing.assert_allclose(out.snapshots.lam[t], ref[t][2], rtol=0, atol=1e-10)


def test_reduction_alpha_one():
    p = build_problem(random_scenario(2, 2, 3, seed=2), 1.0)
    cfg = snap_config(max_iter=200)
    s = standard_admm(p, cfg)
    r = randomized_admm(p, snap_config(max_iter=200, alpha=1.0, alpha_bar=0.0))
    for a, b in zip(s.snapshots.V, r.snapshots.V):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    for a, b in zip(s.snapshots.w, r.snapshots.w):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@given(st.integers(0, 1000), st.floats(0.1, 1.0), st.floats(0.0, 1.0))
@settings(max_examples=15)
def test_dual_merge_and_wstep_stationarity(seed, alpha, alpha_bar):
    p = build_problem(random_scenario(2, 1, 3, seed=seed), 1.5)
    beta = 0.3
    out = randomized_admm(p, snap_config(beta=beta, max_iter=30, alpha=alpha, alpha_bar=alpha_bar,
                                         seed=seed))
    S = out.snapshots
    w_prev = np.zeros(p.n_rows)
    lam_prev = np.zeros(p.n_rows)
    for t in range(len(S.w) - 1):
        w, lam = S.w[t], S.lam[t]
        r = p.apply(S.V[t]) + p.b - w
        scale = 1 + np.abs(lam).max()
        assert np.max(np.abs(lam - lam_prev - alpha * beta * r)) <= 1e-12 * scale
        stat = f_gradient(w, p.layout) - lam + alpha_bar * beta * (w - w_prev)
        assert np.max(np.abs(stat)) <= 1e-8 * scale
        w_prev, lam_prev = w, lam


def test_block_selection_fraction():
    K, alpha, n = 20, 0.05, 1000
    p = build_problem(random_scenario(1, 1, K, seed=0), 0.5)
    out = randomized_admm(p, SolverConfig(alpha=alpha, max_iter=n, opg_tol=0.0, seed=3))
    counts = np.array(out.trace.updated_blocks)
    assert counts.size == n
    sigma = np.sqrt(n * K * alpha * (1 - alpha))
    assert abs(counts.sum() - n * K * alpha) <= 3 * sigma


def test_running_sum_drift_and_determinism():
    p = build_problem(random_scenario(2, 2, 6, seed=5), 1.0)
    cfg = SolverConfig(alpha=0.3, max_iter=3000, opg_tol=0.0, seed=8, tau_check_every=500)
    a, b = randomized_admm(p, cfg), randomized_admm(p, cfg)
    assert a.tau_drift <= 1e-9
    assert a.state.running_sum_drift(p) <= 1e-9
    assert np.array_equal(a.V, b.V)
    assert a.trace.updated_blocks == b.trace.updated_blocks
    c = randomized_admm(p, SolverConfig(alpha=0.3, max_iter=3000, opg_tol=0.0, seed=9))
    assert not np.array_equal(a.V, c.V)


def test_single_user_feasible_and_infeasible():
    sc = random_scenario(2, 2, 1, seed=6, noise_power=0.5, per_ap_power=[0.8, 1.0])
    opt = single_user_oracle(sc)
    ch = PreparedScenario(sc).channels
    cfg = SolverConfig()
    good = standard_admm(build_problem(ch, opt - 0.3), cfg)
    assert good.verdict is Verdict.FEASIBLE and good.final_f <= good.threshold
    bad = standard_admm(build_problem(ch, opt + 1.0), cfg)
    assert bad.verdict is Verdict.INFEASIBLE and bad.final_f > 1e3 * bad.threshold
    assert bad.stop_reason is StopReason.OPG_TOL


def test_undecided_when_iterations_run_out():
    p = build_problem(random_scenario(2, 2, 3, seed=1), 3.0)
    out = standard_admm(p, SolverConfig(max_iter=5))
    assert out.verdict is Verdict.UNDECIDED and out.stop_reason is StopReason.MAX_ITER
    assert out.iterations == 5 and len(out.trace) == 5


def test_divergence_is_reported():
    p = build_problem(random_scenario(1, 1, 2), 1.0)
    st0 = SolverState.zeros(p)
    st0.V[0, 0] = np.nan
    with pytest.raises(SolverDivergedError, match="beta"):
        standard_admm(p, SolverConfig(), init=st0)


def test_trace_csv_roundtrip(tmp_path):
    p = build_problem(random_scenario(1, 2, 2), 1.0)
    out = randomized_admm(p, SolverConfig(max_iter=50, opg_tol=0.0))
    path = tmp_path / "t.csv"
    out.trace.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(TRACE_HEADER)
    back = read_trace_csv(path)
    assert back.iters == list(range(1, 51))
    np.testing.assert_allclose(back.f_value, out.trace.f_value)
    assert np.all(np.diff(back.wall_ms) >= 0)


def test_ergodic_examples():
    p = build_problem(random_scenario(1, 1, 2), 1.0)
    out = randomized_admm(p, snap_config(max_iter=20, alpha=1.0, alpha_bar=0.0))
    S = out.snapshots
    e1 = ergodic_diagnostics(S, 1.0, p, at=[1, 10])
    # alpha = 1 gives the plain running mean
    w_mean = np.mean(S.w[:10], axis=0)
    v_mean = np.mean(S.V[:10], axis=0)
    np.testing.assert_allclose(e1.residual[1], np.linalg.norm(p.apply(v_mean) + p.b - w_mean), rtol=1e-12)
    np.testing.assert_allclose(e1.residual[0], np.linalg.norm(p.apply(S.V[0]) + p.b - S.w[0]), rtol=1e-12)
    with pytest.raises(ValueError):
        ergodic_diagnostics(None, 0.5, p)
    with pytest.raises(ValueError):
        ergodic_diagnostics(S, 0.5, p, at=[21])


def test_qos_requires_soc_only_problem():
    p = build_problem(random_scenario(1, 1, 2), 1.0)
    with pytest.raises(ValueError):
        qos_admm(p)
    q = build_qos_problem(random_scenario(1, 1, 2), 1.0)
    out = qos_admm(q, SolverConfig(beta=30.0, alpha=1.0, alpha_bar=0.0, max_iter=50))
    assert np.isfinite(out.objective)


@pytest.mark.slow
@pytest.mark.parametrize("solver", [standard_admm, randomized_admm])
def test_feasible_instances_converge(solver):
    hits = 0
    for seed in range(50):
        sc = random_scenario(1 + seed % 3, 1 + (seed // 3) % 3, 1, seed=seed, noise_power=0.5)
        s = 0.9 * single_user_oracle(sc)
        out = solver(build_problem(PreparedScenario(sc).channels, s), SolverConfig())
        hits += out.verdict is Verdict.FEASIBLE
    assert hits >= 48
