"""ADMM solvers for  min f(w)  s.t.  sum_j A_j v_j + b = w.

``standard_admm`` updates every block each iteration; ``randomized_admm``
updates each block with probability alpha, damps the dual step by alpha and
adds an (alpha_bar * beta)-weighted proximal term to the w-step.  Both keep a
running sum tau = sum_j A_j v_j; the standard solver recomputes it from
scratch, the randomized one only adds the selected blocks' increments.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .cones import f_value
from .kernels import run_chunk
from .lifting import FeasibilityProblem, WoodburyFactors, build_factors, check_factors, to_complex

log = logging.getLogger(__name__)

TRACE_HEADER = ("iter", "f_value", "opg", "primal_residual", "wall_ms")


_DRAW_CHUNK = 256


class SolverDivergedError(FloatingPointError):
    def __init__(self, beta, t):
        super().__init__(f"non-finite iterate at t={t} (beta={beta}); try a different beta")
        self.beta = beta
        self.t = t


class Verdict(str, Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNDECIDED = "undecided"


class StopReason(str, Enum):
    OPG_TOL = "opg_tol"
    MAX_ITER = "max_iter"


@dataclass
class SolverConfig:
    beta: float = 1e-3
    alpha: float = 0.05
    alpha_bar: float = 0.01
    max_iter: int = 200_000
    opg_tol: float = 1e-10
    feas_tol: float = 1e-12
    seed: int = 0
    theory_mode: bool = False
    record_iterates: bool = False
    tau_check_every: int = 500

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.alpha_bar >= 0:
            raise ValueError(f"alpha_bar must be >= 0, got {self.alpha_bar}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        self.max_iter = int(self.max_iter)
        if self.opg_tol < 0 or not self.feas_tol > 0:
            raise ValueError("opg_tol must be >= 0 and feas_tol > 0")
        if self.theory_mode and not self.satisfies_theory_condition:
            raise ValueError(
                f"theory_mode: alpha*alpha_bar = {self.alpha * self.alpha_bar:.4g} "
                f"< alpha^-2 - 1 = {self.alpha ** -2 - 1:.4g}"
            )

    @property
    def satisfies_theory_condition(self) -> bool:
        return self.alpha * self.alpha_bar >= self.alpha ** -2 - 1

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class ConvergenceTrace:
    """Per-iteration records.

    ``f_value`` is f(w^t) for the feasibility solvers and the transmit-power
    objective sum ||v_i||^2 for the min-power solver.  The row of the final
    iteration reports the value at the output iterate instead, because the
    last w-step is not performed.
    """

    iters: list = field(default_factory=list)
    f_value: list = field(default_factory=list)
    opg: list = field(default_factory=list)
    primal_residual: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    updated_blocks: list = field(default_factory=list)

    def append(self, t, f, opg, res, ms, nupd):
        self.iters.append(t)
        self.f_value.append(f)
        self.opg.append(opg)
        self.primal_residual.append(res)
        self.wall_ms.append(ms)
        self.updated_blocks.append(nupd)

    def extend(self, iters, block, wall_ms):
        """Bulk append; ``block`` columns are (f, opg, residual, updated blocks)."""
        self.iters.extend(int(t) for t in iters)
        self.f_value.extend(block[:, 0].tolist())
        self.opg.extend(block[:, 1].tolist())
        self.primal_residual.extend(block[:, 2].tolist())
        self.wall_ms.extend(np.asarray(wall_ms).tolist())
        self.updated_blocks.extend(block[:, 3].astype(int).tolist())

    def __len__(self):
        return len(self.iters)

    def rows(self):
        return zip(self.iters, self.f_value, self.opg, self.primal_residual, self.wall_ms)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for t, f, o, r, ms in self.rows():
                w.writerow([t, repr(float(f)), repr(float(o)), repr(float(r)), f"{ms:.3f}"])


@dataclass
class SolverState:
    V: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    tau: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, problem: FeasibilityProblem) -> "SolverState":
        L = problem.n_rows
        return cls(np.zeros((problem.K, problem.block_dim)), np.zeros(L), np.zeros(L), np.zeros(L))

    def copy(self) -> "SolverState":
        return SolverState(self.V.copy(), self.w.copy(), self.lam.copy(), self.tau.copy(), self.t)

    def running_sum_drift(self, problem: FeasibilityProblem) -> float:
        full = problem.apply(self.V)
        return float(np.linalg.norm(self.tau - full) / (1.0 + np.linalg.norm(full)))


@dataclass
class Snapshots:
    V: list = field(default_factory=list)
    w: list = field(default_factory=list)
    lam: list = field(default_factory=list)


@dataclass
class SolveOutcome:
    verdict: Verdict
    final_f: float
    iterations: int
    stop_reason: StopReason
    V: np.ndarray
    beamformers: np.ndarray
    trace: ConvergenceTrace
    state: SolverState
    threshold: float
    objective: float = float("nan")
    tau_drift: float = 0.0
    snapshots: Snapshots | None = None
    solve_seconds: float = 0.0
    rate_slack: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.verdict is Verdict.FEASIBLE


def feasibility_threshold(problem: FeasibilityProblem, config: SolverConfig) -> float:
    return config.feas_tol * (1.0 + float(problem.b @ problem.b))


def _still_decreasing(fvals, window=100, rate=0.01) -> bool:
    if len(fvals) <= window:
        return True
    old, new = fvals[-1 - window], fvals[-1]
    return new < (1.0 - rate) * old


def _run(problem: FeasibilityProblem, config: SolverConfig, *, randomized: bool,
         qos: bool = False, factors: WoodburyFactors | None = None,
         init: SolverState | None = None) -> SolveOutcome:
    beta = config.beta
    alpha = config.alpha if randomized else 1.0
    alpha_bar = config.alpha_bar if randomized else 0.0
    if factors is None:
        factors = build_factors(problem, extra_shift=2.0 / beta if qos else 0.0)
    check_factors(problem, factors)

    K = problem.K
    b = problem.b
    layout = problem.layout
    st = SolverState.zeros(problem) if init is None else init.copy()
    if init is not None:
        st.tau = problem.apply(st.V)
    V, w, lam, tau = st.V, st.w, st.lam, st.tau
    rng = np.random.default_rng(config.seed)
    last_change = np.full(K, np.inf)
    trace = ConvergenceTrace()
    snaps = Snapshots() if config.record_iterates else None
    max_drift = 0.0
    stop = StopReason.MAX_ITER
    kernel_args = (
        V, tau, b, w, lam, 1.0 / beta, factors.hbar, factors.hbar_t, factors.htilde_rows,
        factors.cap_inv_hbar_t, factors.shift, factors.u_rows, factors.gamma, factors.e_sc,
        problem.sqrt_e, problem.M, problem.N, problem.soc_dim, problem.include_power, last_change,
        1.0 / (alpha * beta), alpha / (alpha + alpha_bar), alpha_bar / (alpha + alpha_bar),
        (alpha + alpha_bar) * beta, alpha * beta, layout.num_soc, layout.radii, layout.power_dim,
        np.empty(layout.size),
    )
    # snapshots need control after every iteration; otherwise run in chunks
    # that end on the running-sum checkpoints
    chunk = 1 if snaps is not None else _DRAW_CHUNK
    check_every = config.tau_check_every if randomized else 0
    no_draws = np.zeros((0, K), dtype=bool)
    out = np.empty((chunk, 4))

    t0 = time.perf_counter()
    t = st.t
    end = st.t + config.max_iter
    while t < end:
        n = min(chunk, end - t)
        if check_every:
            n = min(n, check_every - t % check_every)
        draws = rng.random((n, K)) < alpha if randomized else no_draws
        done, status = run_chunk(n, randomized, draws, config.opg_tol, t == st.t, t + n == end,
                                 qos, out, *kernel_args)
        ms = 1e3 * (time.perf_counter() - t0)
        prev_ms = trace.wall_ms[-1] if len(trace) else 0.0
        # wall time is measured per chunk and spread evenly over its iterations
        trace.extend(np.arange(t + 1, t + done + 1), out[:done],
                     prev_ms + (ms - prev_ms) * np.arange(1, done + 1) / n)
        t += done
        if status < 0:
            raise SolverDivergedError(beta, t)
        if snaps is not None:
            snaps.V.append(V.copy())
            snaps.w.append(w.copy())
            snaps.lam.append(lam.copy())
        if status == 1:
            stop = StopReason.OPG_TOL
            break
        if check_every and t % check_every == 0:
            full = problem.apply(V)
            drift = float(np.linalg.norm(tau - full) / (1.0 + np.linalg.norm(full)))
            max_drift = max(max_drift, drift)
            tau[:] = full
    elapsed = time.perf_counter() - t0
    st.t = t
    if len(trace):
        # the stopping iteration skips its w-step; report values at the output V
        z = tau + b
        trace.f_value[-1] = float(V.ravel() @ V.ravel()) if qos else f_value(z, layout)
        trace.primal_residual[-1] = float(np.linalg.norm(z - w))
        trace.wall_ms[-1] = 1e3 * elapsed

    z = tau + b
    final_f = f_value(z, layout)
    threshold = feasibility_threshold(problem, config)
    if final_f <= threshold:
        verdict = Verdict.FEASIBLE
    elif qos or (stop is StopReason.MAX_ITER and _still_decreasing(trace.f_value[:-1])):
        verdict = Verdict.UNDECIDED
    else:
        verdict = Verdict.INFEASIBLE
    return SolveOutcome(
        verdict=verdict,
        final_f=final_f,
        iterations=t - (0 if init is None else init.t),
        stop_reason=stop,
        V=V.copy(),
        beamformers=to_complex(V, problem.M, problem.N),
        trace=trace,
        state=st,
        threshold=threshold,
        objective=float(V.ravel() @ V.ravel()),
        tau_drift=max_drift,
        snapshots=snaps,
        solve_seconds=elapsed,
    )


def standard_admm(problem: FeasibilityProblem, config: SolverConfig | None = None, *,
                  factors: WoodburyFactors | None = None,
                  init: SolverState | None = None) -> SolveOutcome:
    """Every block is solved in closed form each iteration; prox w-step; full dual step."""
    return _run(problem, config or SolverConfig(), randomized=False, factors=factors, init=init)


def randomized_admm(problem: FeasibilityProblem, config: SolverConfig | None = None, *,
                    factors: WoodburyFactors | None = None,
                    init: SolverState | None = None) -> SolveOutcome:
    """Bernoulli(alpha) block selection, alpha-damped dual step, proximal w-step.

    With alpha = 1 and alpha_bar = 0 this reproduces :func:`standard_admm`.
    """
    return _run(problem, config or SolverConfig(), randomized=True, factors=factors, init=init)


def qos_admm(problem: FeasibilityProblem, config: SolverConfig | None = None, *,
             randomized: bool = False, factors: WoodburyFactors | None = None) -> SolveOutcome:
    """ADMM for  min sum ||v_i||^2  s.t.  G v + e in C x ... x C.

    The v-step solves ((2/beta) I + G_i^T G_i) v_i = -G_i^T D_i(e - w + lam/beta)
    and the w-step is an exact projection.
    """
    if problem.include_power:
        raise ValueError("min-power mode needs an SOC-only problem (build_qos_problem)")
    return _run(problem, config or SolverConfig(), randomized=randomized, qos=True, factors=factors)


# -- diagnostics ------------------------------------------------------------

@dataclass
class ErgodicTrace:
    t: np.ndarray
    f_value: np.ndarray  # f at the averaged w
    residual: np.ndarray  # ||A v_avg + b - w_avg||


def ergodic_diagnostics(snapshots: Snapshots | None, alpha: float,
                        problem: FeasibilityProblem, at=None) -> ErgodicTrace:
    """Weighted averages (x^T + alpha * sum_{t<T} x^t) / (1 + alpha (T-1)).

    ``at`` selects the horizons T (1-based); defaults to every iteration.
    """
    if snapshots is None or not snapshots.w:
        raise ValueError("no iterate snapshots; rerun with record_iterates=True")
    T = len(snapshots.w)
    horizons = np.arange(1, T + 1) if at is None else np.asarray(at, dtype=int)
    if horizons.min() < 1 or horizons.max() > T:
        raise ValueError(f"horizons must lie in 1..{T}")
    Ws = np.asarray(snapshots.w)
    Vs = np.asarray(snapshots.V).reshape(T, -1)
    cw = np.vstack([np.zeros(Ws.shape[1]), np.cumsum(Ws, axis=0)])
    cv = np.vstack([np.zeros(Vs.shape[1]), np.cumsum(Vs, axis=0)])
    fv, res = [], []
    for tb in horizons:
        denom = 1.0 + alpha * (tb - 1)
        w_avg = (Ws[tb - 1] + alpha * cw[tb - 1]) / denom
        v_avg = (Vs[tb - 1] + alpha * cv[tb - 1]) / denom
        fv.append(f_value(w_avg, problem.layout))
        res.append(float(np.linalg.norm(problem.apply(v_avg.reshape(problem.K, -1)) + problem.b - w_avg)))
    return ErgodicTrace(horizons, np.array(fv), np.array(res))


def read_trace_csv(path) -> ConvergenceTrace:
    tr = ConvergenceTrace()
    with open(Path(path), newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header}")
        for row in rd:
            tr.append(int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4]), -1)
    return tr
