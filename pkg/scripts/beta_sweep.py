"""Penalty tuning: bisection accuracy and cost for several beta values.

Single-user scenarios have a closed-form optimum, so each beta is scored by
its worst certified-rate error and total iteration count.
"""

import numpy as np

from cfmaxmin.driver import BisectionConfig, bisection_maxmin, single_user_oracle
from cfmaxmin.scenario import ScenarioConfig, generate_scenario
from cfmaxmin.solvers import SolverConfig

from _common import write_rows


def main():
    import argparse
    from pathlib import Path

    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--betas", type=float, nargs="+", default=[1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--solver", choices=("standard", "randomized"), default="standard")
    ap.add_argument("--max-iter", type=int, default=200_000)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    rows = []
    for beta in args.betas:
        errs, iters = [], 0
        cfg = BisectionConfig(solver=args.solver, solver_config=SolverConfig(beta=beta, max_iter=args.max_iter))
        for seed in range(args.seeds):
            sc = generate_scenario(ScenarioConfig(num_aps=1 + seed % 4, antennas_per_ap=1 + (seed // 4) % 4,
                                                  num_users=1, seed=seed))
            res = bisection_maxmin(sc, cfg)
            errs.append(res.certified_rate - single_user_oracle(sc))
            iters += res.iterations_total
        errs = np.array(errs)
        rows.append((beta, errs.min(), errs.max(), int(np.sum(np.abs(errs) > 0.011)), iters))
        print(f"beta={beta:g}: error range [{errs.min():.4f}, {errs.max():.4f}], {iters} iterations")
    write_rows(args.out, ("beta", "min_error", "max_error", "misses", "iters_total"), rows)


if __name__ == "__main__":
    main()
