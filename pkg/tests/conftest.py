import numpy as np
import pytest
from hypothesis import settings

from cfmaxmin.lifting import build_problem, dense_matrix
from cfmaxmin.scenario import Scenario, ScenarioConfig, generate_scenario

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_scenario(channels, noise_power=1.0, per_ap_power=1.0):
    """Scenario with hand-written channels (K, M, N); positions are dummies."""
    h = np.asarray(channels, dtype=complex)
    K, M, N = h.shape
    cfg = ScenarioConfig(num_aps=M, antennas_per_ap=N, num_users=K, per_ap_power=per_ap_power)
    return Scenario(cfg, np.zeros((M, 2)), np.zeros((K, 2)), h,
                    np.broadcast_to(np.asarray(noise_power, dtype=float), (K,)).copy())


def random_scenario(M, N, K, seed=0, noise_power=1.0, per_ap_power=1.0):
    """Unit-scale i.i.d. Rayleigh channels, convenient for solver tests."""
    rng = np.random.default_rng(seed)
    h = (rng.standard_normal((K, M, N)) + 1j * rng.standard_normal((K, M, N))) / np.sqrt(2)
    return make_scenario(h, noise_power, per_ap_power)


def physical_scenario(M, N, K, seed, **kw):
    return generate_scenario(ScenarioConfig(num_aps=M, antennas_per_ap=N, num_users=K, seed=seed, **kw))


def dense_admm(problem, beta, alpha, alpha_bar, iters, seed):
    """Plain-numpy reference ADMM on the materialized A (small instances).

    Returns per-iteration (V, w, lam) after each full iteration.
    """
    from cfmaxmin.cones import prox_D

    A = dense_matrix(problem)
    K, d = problem.K, problem.block_dim
    b = problem.b
    cols = [slice(j * d, (j + 1) * d) for j in range(K)]
    pinv = [np.linalg.solve(A[:, c].T @ A[:, c], A[:, c].T) for c in cols]
    v = np.zeros(A.shape[1])
    w = np.zeros(A.shape[0])
    lam = np.zeros(A.shape[0])
    rng = np.random.default_rng(seed)
    randomized = not (alpha == 1.0 and alpha_bar == 0.0)
    out = []
    for _ in range(iters):
        sel = rng.random(K) < alpha if randomized else np.ones(K, bool)
        rhs = b - w + lam / beta
        for j in np.flatnonzero(sel):
            v[cols[j]] = -pinv[j] @ rhs
        Av = A @ v
        dpt = Av + b + lam / (alpha * beta)
        mix = (alpha * dpt + alpha_bar * w) / (alpha + alpha_bar)
        w = prox_D(mix, (alpha + alpha_bar) * beta, problem.layout)
        lam = lam + alpha * beta * (Av + b - w)
        out.append((v.reshape(K, d).copy(), w.copy(), lam.copy()))
    return out


@pytest.fixture
def tiny_problem():
    return build_problem(random_scenario(2, 2, 3, seed=3), 1.0)
