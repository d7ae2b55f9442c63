"""Feasibility checks, max-min bisection and the min-power (QoS) mode.

Solvers run on a rescaled copy of the scenario: user k's channel becomes
h_k * sqrt(p_ref) / sigma_k, its noise becomes 1 and AP powers become
p_m / p_ref.  Rates are unchanged and physical beamformers are
sqrt(p_ref) times the solver's.  Without this the lifted rows differ in
magnitude by ~1e6 and ADMM stalls.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lifting import (
    LiftedChannels,
    build_problem,
    build_qos_problem,
    permute_to_ap_major,
    per_ap_power,
    scenario_rates,
)
from .scenario import Scenario
from .solvers import (
    SolveOutcome,
    SolverConfig,
    SolverState,
    StopReason,
    ConvergenceTrace,
    Verdict,
    qos_admm,
    randomized_admm,
    standard_admm,
)

log = logging.getLogger(__name__)

SOLVERS = ("standard", "randomized")
POWER_TOL = 1e-8
# the min-power splitting prefers a much stiffer penalty than the feasibility check
QOS_BETA = 30.0


def normalize_scenario(scenario: Scenario, power_ref: float | None = None):
    """Return (scaled scenario, power_ref); see module docstring."""
    p_ref = float(np.max(scenario.power)) if power_ref is None else float(power_ref)
    sigma = np.sqrt(scenario.noise_power)
    ch = scenario.channels * (math.sqrt(p_ref) / sigma)[:, None, None]
    scaled = scenario.replace(channels=ch, noise_power=np.ones(scenario.K),
                              per_ap_power=scenario.power / p_ref)
    return scaled, p_ref


class PreparedScenario:
    """Scaled scenario plus its lifted channels, reused across target rates."""

    def __init__(self, scenario: Scenario, normalize: bool = True, power_ref: float | None = None):
        self.scenario = scenario
        if normalize:
            self.scaled, self.p_ref = normalize_scenario(scenario, power_ref)
        else:
            self.scaled, self.p_ref = scenario, 1.0
        self.channels = LiftedChannels(self.scaled)


def _rate_slack(problem, V, final_f) -> tuple[float, float]:
    """Worst-case rate loss implied by f <= final_f, after uniform power rescaling.

    An SOC block at squared distance 2f has ||rest|| - last <= 2 sqrt(f) and
    ||rest|| >= sigma_k, so SINR >= 1/(e' - 1) with e' = e / (1 - eps)^2.
    Scaling all beamformers by rho <= 1 keeps SINR >= rho^2 / (e' - 1).
    """
    rho = 1.0
    if problem.include_power:
        blocks = permute_to_ap_major(V, problem.M, problem.N).reshape(problem.M, -1)
        norms = np.linalg.norm(blocks, axis=1)
        over = norms > problem.channels.radii
        if np.any(over):
            rho = float(np.min(problem.channels.radii[over] / norms[over]))
    eps = 2.0 * math.sqrt(max(final_f, 0.0)) / float(np.min(problem.channels.sigma))
    if eps >= 1.0:
        return math.inf, rho
    e_eff = problem.e_sc / (1.0 - eps) ** 2
    guaranteed = math.log2(1.0 + rho * rho / (e_eff - 1.0))
    return max(0.0, problem.s_c - guaranteed), rho


def check_feasibility(scenario: Scenario | PreparedScenario, s_c: float,
                      solver: str = "randomized", config: SolverConfig | None = None, *,
                      init: SolverState | None = None) -> SolveOutcome:
    """Decide whether every user can reach rate ``s_c`` under the AP power budgets.

    Feasible outcomes carry physical beamformers rescaled so that every AP
    meets its budget; ``rate_slack`` bounds how far below ``s_c`` a user's
    rate can be.
    """
    if solver not in SOLVERS:
        raise ValueError(f"solver must be one of {SOLVERS}, got {solver!r}")
    config = config or SolverConfig()
    prep = scenario if isinstance(scenario, PreparedScenario) else PreparedScenario(scenario)
    sc = prep.scenario
    if s_c <= 0:
        zeros = np.zeros((sc.K, sc.M, sc.N), dtype=complex)
        return SolveOutcome(Verdict.FEASIBLE, 0.0, 0, StopReason.OPG_TOL,
                            np.zeros((sc.K, 2 * sc.M * sc.N)), zeros, ConvergenceTrace(),
                            None, 0.0)
    problem = build_problem(prep.channels, s_c)
    run = standard_admm if solver == "standard" else randomized_admm
    out = run(problem, config, init=init)
    scale = math.sqrt(prep.p_ref)
    if out.verdict is Verdict.FEASIBLE:
        out.rate_slack, rho = _rate_slack(problem, out.V, out.final_f)
        out.beamformers = out.beamformers * (scale * min(rho, 1.0))
    else:
        out.beamformers = out.beamformers * scale
    return out


# -- bisection --------------------------------------------------------------

@dataclass
class BisectionConfig:
    s_min: float = 0.0
    s_max: float = 10.0
    s_ter: float = 0.01
    solver: str = "randomized"
    solver_config: SolverConfig = field(default_factory=SolverConfig)
    warm_start: bool = False
    normalize: bool = True

    def __post_init__(self):
        if not 0 <= self.s_min < self.s_max:
            raise ValueError("need 0 <= s_min < s_max")
        if not self.s_ter > 0:
            raise ValueError("s_ter must be > 0")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")

    @property
    def expected_checks(self) -> int:
        return max(0, math.ceil(math.log2((self.s_max - self.s_min) / self.s_ter) - 1e-9))


@dataclass
class CheckRecord:
    s_c: float
    verdict: str
    final_f: float
    iterations: int
    stop_reason: str
    setup_ms: float
    solve_ms: float
    rate_slack: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MaxMinResult:
    """Outcome of the bisection.

    ``rate_slack`` bounds certified_rate - min(per_user_rates): it comes from
    the f-threshold of the last feasible check (see ``_rate_slack``).
    """

    rate_interval: tuple
    certified_rate: float
    beamformers: np.ndarray
    per_user_rates: np.ndarray
    per_ap_power: np.ndarray
    checks_performed: int
    total_trace: list
    rate_slack: float = 0.0
    saturated: bool = False
    traces: list = field(default_factory=list, repr=False)

    @property
    def iterations_total(self) -> int:
        return sum(c.iterations for c in self.total_trace)

    def to_dict(self) -> dict:
        return {
            "rate_interval": [float(x) for x in self.rate_interval],
            "certified_rate": float(self.certified_rate),
            "rate_slack": float(self.rate_slack),
            "saturated": bool(self.saturated),
            "checks_performed": int(self.checks_performed),
            "per_user_rates": [float(x) for x in self.per_user_rates],
            "per_ap_power_w": [float(x) for x in self.per_ap_power],
            "check_log": [c.to_dict() for c in self.total_trace],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def bisection_maxmin(scenario: Scenario, bconfig: BisectionConfig | None = None,
                     keep_traces: bool = False) -> MaxMinResult:
    bconfig = bconfig or BisectionConfig()
    t0 = time.perf_counter()
    prep = PreparedScenario(scenario, normalize=bconfig.normalize)
    setup_ms = 1e3 * (time.perf_counter() - t0)
    lo, hi = float(bconfig.s_min), float(bconfig.s_max)
    best_v = np.zeros((scenario.K, scenario.M, scenario.N), dtype=complex)
    best_slack = 0.0
    records, traces = [], []
    state = None
    hi_certified = False
    # the 1e-9 relative slack keeps binary round-off from adding an extra check
    while hi - lo > bconfig.s_ter * (1.0 + 1e-9):
        s = 0.5 * (lo + hi)
        t1 = time.perf_counter()
        out = check_feasibility(prep, s, bconfig.solver, bconfig.solver_config,
                                init=state if bconfig.warm_start else None)
        solve_ms = 1e3 * out.solve_seconds
        setup_check = 1e3 * (time.perf_counter() - t1) - solve_ms
        records.append(CheckRecord(s, out.verdict.value, out.final_f, out.iterations,
                                   out.stop_reason.value, setup_check, solve_ms, out.rate_slack))
        if keep_traces:
            traces.append(out.trace)
        if out.verdict is Verdict.FEASIBLE:
            lo = s
            best_v = out.beamformers
            best_slack = out.rate_slack
        else:
            hi = s
            hi_certified = True
        if out.state is not None:
            state = out.state
            state.t = 0
    saturated = not hi_certified
    if saturated:
        log.warning("every check was feasible: the optimum may exceed s_max=%g", bconfig.s_max)
    rates = scenario_rates(scenario, best_v)
    result = MaxMinResult(
        rate_interval=(lo, hi),
        certified_rate=lo,
        beamformers=best_v,
        per_user_rates=rates,
        per_ap_power=per_ap_power(best_v),
        checks_performed=len(records),
        total_trace=records,
        rate_slack=best_slack,
        saturated=saturated,
        traces=traces,
    )
    result.setup_ms = setup_ms
    return result


# -- oracles ----------------------------------------------------------------

def single_user_oracle(scenario: Scenario) -> float:
    """Optimal rate of a one-user scenario: full power, phase-aligned MRT per AP."""
    if scenario.K != 1:
        raise ValueError("single_user_oracle needs exactly one user")
    gain = np.sum(np.sqrt(scenario.power) * np.linalg.norm(scenario.channels[0], axis=1))
    return float(np.log2(1.0 + gain ** 2 / scenario.noise_power[0]))


def single_user_min_power(h: np.ndarray, noise_power: float, s_c: float) -> float:
    """Least total power giving rate s_c to a lone user (MRT, unconstrained APs)."""
    return float(noise_power * (2.0 ** s_c - 1.0) / np.vdot(h, h).real)


# -- QoS mode ---------------------------------------------------------------

def qos_min_power(scenario: Scenario, s_c: float, config: SolverConfig | None = None, *,
                  randomized: bool = False, power_cap_factor: float = 1e6) -> SolveOutcome:
    """Minimum total power such that every user reaches rate ``s_c``.

    Reported infeasible when the power grows beyond ``power_cap_factor``
    times the interference-free requirement.
    """
    if not s_c > 0:
        raise ValueError("s_c must be > 0")
    config = config or SolverConfig(beta=QOS_BETA, alpha=1.0, alpha_bar=0.0)
    gains = np.sum(np.abs(scenario.joint_channels) ** 2, axis=1) / scenario.noise_power
    if np.any(gains <= 0):
        return _qos_infeasible(scenario)
    p_ref = 1.0 / float(np.mean(gains))
    scaled, _ = normalize_scenario(scenario, p_ref)
    problem = build_qos_problem(scaled, s_c)
    out = qos_admm(problem, config, randomized=randomized)
    out.beamformers = out.beamformers * math.sqrt(p_ref)
    out.objective = out.objective * p_ref
    cap = power_cap_factor * float(np.sum((2.0 ** s_c - 1.0) / gains))
    if out.verdict is not Verdict.FEASIBLE and out.objective > cap:
        out.verdict = Verdict.INFEASIBLE
    return out


def _qos_infeasible(scenario):
    zeros = np.zeros((scenario.K, scenario.M, scenario.N), dtype=complex)
    return SolveOutcome(Verdict.INFEASIBLE, math.inf, 0, StopReason.OPG_TOL,
                        np.zeros((scenario.K, 2 * scenario.M * scenario.N)), zeros,
                        ConvergenceTrace(), None, 0.0)


def qos_result_dict(scenario: Scenario, s_c: float, out: SolveOutcome) -> dict:
    return {
        "target_rate": float(s_c),
        "verdict": out.verdict.value,
        "total_power_w": float(out.objective),
        "iterations": int(out.iterations),
        "stop_reason": out.stop_reason.value,
        "per_user_rates": [float(x) for x in scenario_rates(scenario, out.beamformers)],
        "per_ap_power_w": [float(x) for x in per_ap_power(out.beamformers)],
        "beamformers": np.stack([out.beamformers.real, out.beamformers.imag], axis=-1).tolist(),
    }


def with_solver(bconfig: BisectionConfig, **kw) -> BisectionConfig:
    return replace(bconfig, **kw)
