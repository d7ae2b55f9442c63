"""Shared helpers for the experiment scripts."""

import argparse
import csv
from pathlib import Path

from cfmaxmin.scenario import ScenarioConfig, generate_scenario


def base_parser(description):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--M", type=int, default=4)
    ap.add_argument("--N", type=int, default=4)
    ap.add_argument("--K", type=int, default=8)
    ap.add_argument("--p-mw", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, required=True)
    return ap


def scenario(args, **over):
    kw = dict(num_aps=args.M, antennas_per_ap=args.N, num_users=args.K,
              per_ap_power=args.p_mw * 1e-3, seed=args.seed)
    kw.update(over)
    return generate_scenario(ScenarioConfig(**kw))


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")
