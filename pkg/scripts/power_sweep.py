"""Certified max-min rate against the per-AP power budget (both solvers)."""

from cfmaxmin.driver import BisectionConfig, bisection_maxmin

from _common import base_parser, scenario, write_rows


def main():
    ap = base_parser(__doc__)
    ap.add_argument("--powers-mw", type=float, nargs="+", default=[1, 5, 10, 50, 100])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    rows = []
    for seed in range(args.seed, args.seed + args.seeds):
        for p in args.powers_mw:
            args.p_mw = p
            sc = scenario(args, seed=seed)
            for solver in ("standard", "randomized"):
                res = bisection_maxmin(sc, BisectionConfig(solver=solver))
                solve_ms = sum(c.solve_ms for c in res.total_trace)
                rows.append((seed, p, solver, res.certified_rate, res.iterations_total, solve_ms))
                print(f"seed={seed} p={p} mW {solver}: {res.certified_rate:.3f} bit/s/Hz")
    write_rows(args.out, ("seed", "p_mw", "solver", "certified_rate", "iters_total", "solve_ms"), rows)


if __name__ == "__main__":
    main()
