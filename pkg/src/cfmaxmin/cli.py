"""Command-line interface.

Subcommands: ``generate``, ``check``, ``bisect``, ``qos``, ``bench`` and
``replay``.  Every command writes a run manifest (JSON) next to its main
output; ``replay`` re-executes a manifest and compares the outputs.

Exit codes: 0 success / feasible, 1 infeasible (or replay mismatch),
2 invalid input, 3 undecided.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .driver import (
    QOS_BETA,
    BisectionConfig,
    PreparedScenario,
    bisection_maxmin,
    check_feasibility,
    qos_min_power,
    qos_result_dict,
)
from .lifting import per_ap_power, scenario_rates
from .scenario import ScenarioConfig, generate_scenario, load_scenario, save_scenario
from .solvers import SolverConfig, Verdict

log = logging.getLogger("cfmaxmin")

CONFIG_SCHEMA = 1
MANIFEST_SCHEMA = 1
EXIT_OK, EXIT_INFEASIBLE, EXIT_INVALID, EXIT_UNDECIDED = 0, 1, 2, 3
VERDICT_EXIT = {Verdict.FEASIBLE: EXIT_OK, Verdict.INFEASIBLE: EXIT_INFEASIBLE,
                Verdict.UNDECIDED: EXIT_UNDECIDED}
BENCH_HEADER = ("M", "N", "K", "p_mw", "alpha", "solver", "seed", "certified_rate", "checks",
                "iters_total", "setup_ms", "solve_ms")
# fields that hold wall-clock measurements; replay ignores them
TIMING_FIELDS = frozenset({"wall_ms", "setup_ms", "solve_ms"})


class InputError(ValueError):
    """Invalid user input (exit code 2)."""


# -- small helpers ----------------------------------------------------------

def artifact_version() -> str:
    """Package version plus a short hash of the installed sources."""
    h = hashlib.sha1()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+src.{h.hexdigest()[:10]}"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_json_config(path, allowed: set[str]) -> dict:
    """Load a versioned JSON config, rejecting unknown keys."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise InputError(f"{path}: config must be a JSON object")
    if d.get("schema_version") != CONFIG_SCHEMA:
        raise InputError(f"{path}: schema_version must be {CONFIG_SCHEMA}, got {d.get('schema_version')!r}")
    unknown = set(d) - allowed - {"schema_version"}
    if unknown:
        raise InputError(f"{path}: unknown keys {sorted(unknown)}")
    return {k: v for k, v in d.items() if k != "schema_version"}


def _scenario_config(d: dict, where: str) -> ScenarioConfig:
    try:
        return ScenarioConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: {exc}") from exc


def _load_scenario(path):
    try:
        return load_scenario(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load scenario {path}: {exc}") from exc


def solver_config_from_args(args, **defaults) -> SolverConfig:
    kw = dict(defaults)
    for name in ("beta", "alpha", "alpha_bar", "max_iter", "opg_tol", "feas_tol", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    kw["theory_mode"] = bool(getattr(args, "theory_mode", False))
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _complex_list(v) -> list:
    return np.stack([v.real, v.imag], axis=-1).tolist()


# -- commands ---------------------------------------------------------------
# each returns (exit code, {role: output path}, extra manifest fields)

def cmd_generate(args):
    cfg = _scenario_config(read_json_config(args.config, set(ScenarioConfig.__dataclass_fields__)),
                           str(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    sc = generate_scenario(cfg)
    save_scenario(sc, args.out)
    return EXIT_OK, {"scenario": str(args.out)}, {"scenario_config": cfg.to_dict()}


def cmd_check(args):
    sc = _load_scenario(args.scenario)
    config = solver_config_from_args(args)
    prep = PreparedScenario(sc)
    out = check_feasibility(prep, args.rate, args.solver, config)
    outputs = {"result": str(args.out)}
    result = {
        "schema_version": CONFIG_SCHEMA,
        "target_rate": float(args.rate),
        "solver": args.solver,
        "verdict": out.verdict.value,
        "final_f": float(out.final_f),
        "threshold": float(out.threshold),
        "iterations": int(out.iterations),
        "stop_reason": out.stop_reason.value,
        "rate_slack": float(out.rate_slack),
        "per_user_rates": scenario_rates(sc, out.beamformers).tolist(),
        "per_ap_power_w": per_ap_power(out.beamformers).tolist(),
        "beamformers": _complex_list(out.beamformers),
        "solve_ms": 1e3 * out.solve_seconds,
    }
    _write_json(args.out, result)
    if args.trace:
        out.trace.to_csv(args.trace)
        outputs["trace"] = str(args.trace)
    print(f"{out.verdict.value}: f={out.final_f:.3e} after {out.iterations} iterations "
          f"({out.stop_reason.value})")
    return VERDICT_EXIT[out.verdict], outputs, {"solver_config": config.to_dict()}


def _bisection_config(args) -> BisectionConfig:
    try:
        return BisectionConfig(s_min=args.s_min, s_max=args.s_max, s_ter=args.s_ter,
                               solver=args.solver, solver_config=solver_config_from_args(args),
                               warm_start=args.warm_start)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def cmd_bisect(args):
    sc = _load_scenario(args.scenario)
    bcfg = _bisection_config(args)
    res = bisection_maxmin(sc, bcfg, keep_traces=args.trace_dir is not None)
    outputs = {"result": str(args.out)}
    d = res.to_dict()
    d["solver"] = bcfg.solver
    d["setup_ms"] = res.setup_ms
    d["beamformers"] = _complex_list(res.beamformers)
    _write_json(args.out, d)
    if args.trace_dir is not None:
        tdir = Path(args.trace_dir)
        tdir.mkdir(parents=True, exist_ok=True)
        for i, tr in enumerate(res.traces):
            p = tdir / f"check_{i:02d}.csv"
            tr.to_csv(p)
            outputs[f"trace_{i:02d}"] = str(p)
    lo, hi = res.rate_interval
    print(f"certified rate {res.certified_rate:.4f} bit/s/Hz, interval [{lo:.4f}, {hi:.4f}], "
          f"{res.checks_performed} checks")
    extra = {"bisection_config": {**{k: getattr(bcfg, k) for k in ("s_min", "s_max", "s_ter",
                                                                     "solver", "warm_start")},
                                  "solver_config": bcfg.solver_config.to_dict()}}
    return EXIT_OK, outputs, extra


def cmd_qos(args):
    sc = _load_scenario(args.scenario)
    if not args.rate > 0:
        raise InputError("--rate must be > 0")
    config = solver_config_from_args(args, beta=QOS_BETA, alpha=1.0, alpha_bar=0.0)
    out = qos_min_power(sc, args.rate, config, randomized=args.solver == "randomized")
    d = qos_result_dict(sc, args.rate, out)
    d["schema_version"] = CONFIG_SCHEMA
    d["solve_ms"] = 1e3 * out.solve_seconds
    _write_json(args.out, d)
    print(f"{out.verdict.value}: total power {out.objective:.6e} W after {out.iterations} iterations")
    return VERDICT_EXIT[out.verdict], {"result": str(args.out)}, {"solver_config": config.to_dict()}


BENCH_KEYS = {"M", "N", "K", "p_mw", "alpha", "seeds", "solvers", "solver", "bisection", "scenario"}


def load_sweep(path) -> dict:
    d = read_json_config(path, BENCH_KEYS)
    for key in ("M", "N", "K", "p_mw", "alpha", "seeds"):
        if key not in d:
            raise InputError(f"{path}: missing sweep list {key!r}")
        if not isinstance(d[key], list) or not d[key]:
            raise InputError(f"{path}: {key!r} must be a non-empty list")
    d.setdefault("solvers", ["standard", "randomized"])
    bad = set(d["solvers"]) - {"standard", "randomized"}
    if bad:
        raise InputError(f"{path}: unknown solvers {sorted(bad)}")
    d.setdefault("solver", {})
    d.setdefault("bisection", {})
    d.setdefault("scenario", {})
    unknown = set(d["solver"]) - set(SolverConfig.__dataclass_fields__)
    unknown |= set(d["bisection"]) - {"s_min", "s_max", "s_ter", "warm_start"}
    unknown |= set(d["scenario"]) - set(ScenarioConfig.__dataclass_fields__)
    if unknown:
        raise InputError(f"{path}: unknown keys {sorted(unknown)}")
    return d


def bench_cells(sweep: dict):
    for M in sweep["M"]:
        for N in sweep["N"]:
            for K in sweep["K"]:
                for p_mw in sweep["p_mw"]:
                    for alpha in sweep["alpha"]:
                        for seed in sweep["seeds"]:
                            for solver in sweep["solvers"]:
                                yield M, N, K, p_mw, alpha, solver, seed


def run_bench_cell(sweep, M, N, K, p_mw, alpha, solver, seed) -> dict:
    cfg = ScenarioConfig(num_aps=M, antennas_per_ap=N, num_users=K, per_ap_power=p_mw * 1e-3,
                         **{**sweep["scenario"], "seed": seed})
    sc = generate_scenario(cfg)
    scfg = SolverConfig(**{**sweep["solver"], "alpha": alpha, "seed": seed})
    bcfg = BisectionConfig(solver=solver, solver_config=scfg, **sweep["bisection"])
    res = bisection_maxmin(sc, bcfg)
    return {
        "certified_rate": res.certified_rate,
        "checks": res.checks_performed,
        "iters_total": res.iterations_total,
        "setup_ms": res.setup_ms + sum(c.setup_ms for c in res.total_trace),
        "solve_ms": sum(c.solve_ms for c in res.total_trace),
    }


def cmd_bench(args):
    sweep = load_sweep(args.sweep)
    failures = []
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(BENCH_HEADER)
        for cell in bench_cells(sweep):
            M, N, K, p_mw, alpha, solver, seed = cell
            try:
                r = run_bench_cell(sweep, *cell)
            except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
                # a failed run is recorded and the sweep continues
                log.error("bench cell %s failed: %s", cell, exc)
                failures.append({"cell": list(cell), "error": f"{type(exc).__name__}: {exc}"})
                r = dict.fromkeys(("certified_rate", "checks", "iters_total", "setup_ms",
                                   "solve_ms"), math.nan)
            wr.writerow([M, N, K, repr(float(p_mw)), repr(float(alpha)), solver, seed,
                         repr(float(r["certified_rate"])), r["checks"], r["iters_total"],
                         f"{r['setup_ms']:.3f}", f"{r['solve_ms']:.3f}"])
            fh.flush()
    print(f"wrote {args.out} ({len(failures)} failed runs)")
    return EXIT_OK, {"bench": str(args.out)}, {"sweep": sweep, "failures": failures}


# -- manifests and replay ----------------------------------------------------

INPUT_ARGS = {"generate": ("config",), "check": ("scenario",), "bisect": ("scenario",),
              "qos": ("scenario",), "bench": ("sweep",)}
OUTPUT_ARGS = {"generate": ("out",), "check": ("out", "trace"), "bisect": ("out", "trace_dir"),
               "qos": ("out",), "bench": ("out",)}


def default_manifest_path(args) -> Path:
    return Path(str(args.out) + ".manifest.json")


def write_manifest(path, args, exit_code, outputs, extra, started, finished) -> None:
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
              if k not in ("func", "manifest", "verbose")}
    inputs = {name: {"path": str(getattr(args, name)), "sha256": sha256_file(getattr(args, name))}
              for name in INPUT_ARGS[args.command]}
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "command": args.command,
        "args": params,
        "seed": getattr(args, "seed", None),
        "threads": args.threads,
        "artifact_version": artifact_version(),
        "started": started,
        "finished": finished,
        "exit_code": exit_code,
        "inputs": inputs,
        "outputs": outputs,
        **extra,
    }
    _write_json(path, manifest)


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in TIMING_FIELDS}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def comparable_content(path):
    """File content with wall-clock fields removed (JSON keys or CSV columns)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return _strip_timing(json.loads(text))
    if path.suffix == ".csv":
        rows = list(csv.reader(text.splitlines()))
        if not rows:
            return rows
        keep = [i for i, name in enumerate(rows[0]) if name not in TIMING_FIELDS]
        return [[r[i] for i in keep] for r in rows]
    return text


def cmd_replay(args):
    try:
        manifest = json.loads(Path(args.manifest_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read manifest {args.manifest_path}: {exc}") from exc
    if manifest.get("schema_version") != MANIFEST_SCHEMA:
        raise InputError("unsupported manifest schema_version")
    command = manifest["command"]
    for name, info in manifest["inputs"].items():
        if not Path(info["path"]).is_file():
            raise InputError(f"input {info['path']} is missing")
        if sha256_file(info["path"]) != info["sha256"]:
            raise InputError(f"input {info['path']} changed since the manifest was written")
    workdir = Path(args.workdir or tempfile.mkdtemp(prefix="cfmaxmin-replay-"))
    workdir.mkdir(parents=True, exist_ok=True)
    params = dict(manifest["args"])
    for role in OUTPUT_ARGS[command]:
        if params.get(role) is not None:
            params[role] = str(workdir / Path(params[role]).name)
    ns = argparse.Namespace(**params)
    ns.func = COMMANDS[command]
    ns.manifest = str(workdir / "replay.manifest.json")
    code = run_command(ns)
    if code != manifest["exit_code"]:
        print(f"exit code differs: {code} vs {manifest['exit_code']}")
        return EXIT_INFEASIBLE, {}, {}
    replayed = json.loads(Path(ns.manifest).read_text())["outputs"]
    mismatches = []
    for role, orig in manifest["outputs"].items():
        new = replayed.get(role)
        if new is None or comparable_content(orig) != comparable_content(new):
            mismatches.append(role)
    for role in manifest["outputs"]:
        print(f"{role}: {'MISMATCH' if role in mismatches else 'identical'}")
    return (EXIT_INFEASIBLE if mismatches else EXIT_OK), {}, {}


COMMANDS = {"generate": cmd_generate, "check": cmd_check, "bisect": cmd_bisect, "qos": cmd_qos,
            "bench": cmd_bench}


def run_command(args) -> int:
    """Run one subcommand under the thread limit and write its manifest."""
    started = _now()
    with threadpool_limits(limits=args.threads):
        code, outputs, extra = args.func(args)
    path = Path(args.manifest) if args.manifest else default_manifest_path(args)
    write_manifest(path, args, code, outputs, extra, started, _now())
    return code


# -- argument parsing -------------------------------------------------------

def _solver_flags(p, solver_default="randomized"):
    g = p.add_argument_group("solver")
    g.add_argument("--solver", choices=("standard", "randomized"), default=solver_default)
    g.add_argument("--beta", type=float, help="ADMM penalty")
    g.add_argument("--alpha", type=float, help="block selection probability")
    g.add_argument("--alpha-bar", dest="alpha_bar", type=float, help="proximal weight")
    g.add_argument("--max-iter", dest="max_iter", type=int)
    g.add_argument("--opg-tol", dest="opg_tol", type=float)
    g.add_argument("--feas-tol", dest="feas_tol", type=float)
    g.add_argument("--seed", type=int, help="block-selection RNG seed")
    g.add_argument("--theory-mode", dest="theory_mode", action="store_true",
                   help="reject alpha/alpha_bar outside the convergence-theory region")


def _common(p):
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (recorded in the manifest)")
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cfmaxmin", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a scenario from a JSON config")
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("check", help="feasibility check at one target rate")
    p.add_argument("scenario", type=Path)
    p.add_argument("--rate", type=float, required=True, help="target rate, bit/s/Hz")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trace", type=Path, help="per-iteration CSV")
    _solver_flags(p)
    _common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bisect", help="max-min rate by bisection")
    p.add_argument("scenario", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--s-min", dest="s_min", type=float, default=0.0)
    p.add_argument("--s-max", dest="s_max", type=float, default=10.0)
    p.add_argument("--s-ter", dest="s_ter", type=float, default=0.01)
    p.add_argument("--warm-start", dest="warm_start", action="store_true")
    p.add_argument("--trace-dir", dest="trace_dir", type=Path, help="one trace CSV per check")
    _solver_flags(p)
    _common(p)
    p.set_defaults(func=cmd_bisect)

    p = sub.add_parser("qos", help="minimum total power meeting a common rate")
    p.add_argument("scenario", type=Path)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--out", type=Path, required=True)
    _solver_flags(p, solver_default="standard")
    _common(p)
    p.set_defaults(func=cmd_qos)

    p = sub.add_parser("bench", help="parameter sweep to a CSV")
    p.add_argument("sweep", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    p.add_argument("manifest_path", type=Path)
    p.add_argument("--workdir", type=Path)
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            code, _, _ = cmd_replay(args)
            return code
        if args.threads < 1:
            raise InputError("--threads must be >= 1")
        # absolute paths keep the manifest replayable from any directory
        for role in INPUT_ARGS[args.command] + OUTPUT_ARGS[args.command]:
            if getattr(args, role) is not None:
                setattr(args, role, Path(getattr(args, role)).resolve())
        return run_command(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
