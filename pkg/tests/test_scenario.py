import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfmaxmin.scenario import (
    ScenarioConfig,
    correlation_factor,
    dbm_to_watt,
    generate_scenario,
    large_scale_fading_db,
    load_scenario,
    local_scattering_correlation,
    noise_power_dbm,
    sample_channel,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)


@pytest.mark.parametrize("d, shadow, expected", [(100, 0, -110.53), (1, 0, -34.53), (10, 5, -67.53)])
def test_large_scale_fading_examples(d, shadow, expected):
    assert large_scale_fading_db(d, shadow) == pytest.approx(expected, abs=1e-12)


def test_large_scale_fading_clamps_and_rejects_nonfinite():
    assert large_scale_fading_db(0.2, 0.0) == large_scale_fading_db(1.0, 0.0)
    with pytest.raises(ValueError):
        large_scale_fading_db(np.nan, 0.0)


@pytest.mark.parametrize("bw, expected", [(2.0e7, -100.9897), (1.0, -174.0), (1e6, -114.0)])
def test_noise_power_examples(bw, expected):
    assert noise_power_dbm(bw) == pytest.approx(expected, abs=1e-4)


def test_sample_channel_zero_gain():
    rng = np.random.default_rng(0)
    assert np.all(sample_channel(0.0, np.eye(3), rng) == 0)


def test_sample_channel_second_moment_identity():
    rng = np.random.default_rng(1)
    g, N = 2.5, 4
    L = correlation_factor(np.eye(N))
    draws = np.array([sample_channel(g, None, rng, factor=L) for _ in range(10_000)])
    mean = np.mean(np.sum(np.abs(draws) ** 2, axis=1)) / N
    assert abs(mean - g) < 0.05 * g


def test_sample_channel_rank_one_correlation():
    rng = np.random.default_rng(2)
    u = np.exp(1j * np.array([0.0, 0.3, 1.1]))
    R = np.outer(u, u.conj())
    for _ in range(20):
        h = sample_channel(1.0, R, rng)
        # h must be a multiple of u
        c = np.vdot(u, h) / np.vdot(u, u)
        assert np.allclose(h, c * u, atol=1e-12)


def test_sample_channel_rejects_non_psd():
    with pytest.raises(ValueError):
        sample_channel(1.0, np.diag([1.0, -1.0]), np.random.default_rng(0))


def test_empirical_covariance_matches_R():
    rng = np.random.default_rng(3)
    R = local_scattering_correlation(3, 0.4, 15.0, rng)
    L = correlation_factor(R)
    n = 100_000
    z = (rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))) / np.sqrt(2)
    g = z @ L.T
    emp = g.T @ g.conj() / n
    # standard error of a product of unit-scale complex Gaussians
    se = np.sqrt(np.outer(np.diag(R).real, np.diag(R).real) / n)
    assert np.all(np.abs(emp - R) <= 3 * se + 1e-12)


def test_shadow_fading_variance():
    cfg = ScenarioConfig(num_aps=400, antennas_per_ap=1, num_users=250, correlation="uncorrelated",
                         seed=4)
    sc = generate_scenario(cfg)
    diff = sc.user_positions[:, None, :] - sc.ap_positions[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    shadow = sc.large_scale_db - large_scale_fading_db(dist, 0.0)
    assert shadow.size >= 100_000
    assert abs(np.var(shadow) - 100.0) < 5.0


def test_local_scattering_is_psd_hermitian():
    R = local_scattering_correlation(6, 1.0, 20.0, np.random.default_rng(0))
    assert np.allclose(R, R.conj().T)
    assert np.linalg.eigvalsh(R).min() > -1e-12
    assert np.allclose(np.diag(R), 1.0)


def test_generate_is_deterministic_and_shaped():
    cfg = ScenarioConfig(num_aps=3, antennas_per_ap=2, num_users=4, seed=9)
    a, b = generate_scenario(cfg), generate_scenario(cfg)
    assert a.equals(b)
    assert json.dumps(scenario_to_dict(a)) == json.dumps(scenario_to_dict(b))
    assert a.channels.shape == (4, 3, 2)
    assert np.allclose(a.noise_power, dbm_to_watt(noise_power_dbm(cfg.bandwidth_hz)))


def test_minimal_scenario():
    sc = generate_scenario(ScenarioConfig(num_aps=1, antennas_per_ap=1, num_users=1))
    assert sc.channels.shape == (1, 1, 1)


def test_paper_scale_shapes():
    cfg = ScenarioConfig(num_aps=16, antennas_per_ap=36, num_users=100, per_ap_power=0.01,
                         correlation="uncorrelated")
    assert generate_scenario(cfg).channels.shape == (100, 16, 36)


@pytest.mark.parametrize("field, value", [("num_users", 0), ("num_aps", -1), ("per_ap_power", 0.0),
                                          ("bandwidth_hz", 0.0), ("area_side", -5.0)])
def test_config_validation(field, value):
    kw = dict(num_aps=2, antennas_per_ap=2, num_users=2)
    kw[field] = value
    with pytest.raises(ValueError, match=field):
        ScenarioConfig(**kw)


def test_roundtrip_file(tmp_path):
    sc = generate_scenario(ScenarioConfig(num_aps=2, antennas_per_ap=3, num_users=2, seed=1))
    p = tmp_path / "s.json"
    save_scenario(sc, p)
    assert load_scenario(p).equals(sc)


def test_loader_rejects_bad_documents():
    sc = generate_scenario(ScenarioConfig(num_aps=1, antennas_per_ap=1, num_users=1))
    d = scenario_to_dict(sc)
    with pytest.raises(ValueError):
        scenario_from_dict({**d, "extra": 1})
    with pytest.raises(ValueError):
        scenario_from_dict({**d, "schema_version": 99})
    with pytest.raises(ValueError):
        scenario_from_dict({**d, "channels": [[[[1.0, 0.0]], [[1.0, 0.0]]]]})


@given(st.integers(0, 2**32), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_generated_channels_finite(seed, M, N, K):
    sc = generate_scenario(ScenarioConfig(num_aps=M, antennas_per_ap=N, num_users=K, seed=seed))
    assert np.all(np.isfinite(sc.channels))
    assert np.all(sc.noise_power > 0)
