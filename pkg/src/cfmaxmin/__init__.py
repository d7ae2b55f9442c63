"""Max-min fair downlink beamforming for cell-free massive MIMO.

A max-min rate problem is solved by bisection over second-order-cone
feasibility checks; each check is a distance-minimisation problem solved by
standard or randomized (block-sampled) ADMM.
"""

from .cones import ConeLayout, f_gradient, f_value, project_D, project_power_block, project_soc, prox_D, prox_f_block
from .driver import (
    BisectionConfig,
    MaxMinResult,
    bisection_maxmin,
    check_feasibility,
    qos_min_power,
    single_user_min_power,
    single_user_oracle,
)
from .lifting import (
    FeasibilityProblem,
    WoodburyFactors,
    achieved_rates,
    build_factors,
    build_problem,
    build_qos_problem,
    e_factor,
)
from .scenario import Scenario, ScenarioConfig, generate_scenario, load_scenario, save_scenario
from .solvers import (
    ConvergenceTrace,
    SolveOutcome,
    SolverConfig,
    SolverState,
    StopReason,
    Verdict,
    ergodic_diagnostics,
    qos_admm,
    randomized_admm,
    standard_admm,
)

__version__ = "0.1.0"
