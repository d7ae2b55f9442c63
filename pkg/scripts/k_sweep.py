"""Per-iteration wall time of both solvers as the number of users grows."""

import time

from cfmaxmin.driver import PreparedScenario
from cfmaxmin.lifting import build_factors, build_problem
from cfmaxmin.solvers import SolverConfig, randomized_admm, standard_admm

from _common import base_parser, scenario, write_rows


def per_iteration_us(solver, problem, factors, cfg, repeats):
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        solver(problem, cfg, factors=factors)
        best = min(best, (time.perf_counter() - t) / cfg.max_iter)
    return 1e6 * best


def main():
    ap = base_parser(__doc__)
    ap.add_argument("--users", type=int, nargs="+", default=[8, 16, 32, 64])
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rows = []
    for K in args.users:
        sc = scenario(args, num_users=K)
        problem = build_problem(PreparedScenario(sc).channels, 0.5)
        factors = build_factors(problem)
        s = per_iteration_us(standard_admm, problem, factors,
                             SolverConfig(max_iter=args.iters, opg_tol=0.0), args.repeats)
        r = per_iteration_us(randomized_admm, problem, factors,
                             SolverConfig(alpha=args.alpha, max_iter=args.iters, opg_tol=0.0), args.repeats)
        rows.append((args.M, args.N, K, args.alpha, s, r))
        print(f"K={K}: standard {s:.1f} us, randomized {r:.1f} us ({r / s:.2f}x)")
    write_rows(args.out, ("M", "N", "K", "alpha", "standard_us", "randomized_us"), rows)


if __name__ == "__main__":
    main()
