"""Number of greedy atom additions across the default lambda grid.

Writes ``lambda_effort.csv`` with one row per (run, lambda) and prints the
per-lambda median, which is the data behind a lambda-vs-l plot.
"""

import argparse
from pathlib import Path

import numpy as np

from atomident.bench_cli import ExperimentConfig
from atomident.greedy_atoms import run_greedy
from atomident.lti_core import generate_dataset, write_columns


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--sigma2", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/effort"))
    args = ap.parse_args()
    cfg = ExperimentConfig(sigma2=args.sigma2)
    grid, g = cfg.grid(), cfg.g_true()
    rows = {"run": [], "lambda": [], "added": [], "terminated_by": []}
    for r in range(1, args.runs + 1):
        seed = args.seed + r
        data = generate_dataset(g, cfg.N, cfg.sigma2, seed)
        for lam in grid:
            _, trace = run_greedy(data, cfg.greedy.config(float(lam), seed))
            rows["run"].append(r)
            rows["lambda"].append(float(lam))
            rows["added"].append(trace.added)
            rows["terminated_by"].append(trace.terminated_by)
        print(f"run {r}: max added {max(rows['added'][-grid.size:])}", flush=True)
    args.out.mkdir(parents=True, exist_ok=True)
    write_columns(args.out / "lambda_effort.csv", rows)
    added = np.array(rows["added"]).reshape(args.runs, grid.size)
    for lam, med in zip(grid, np.median(added, axis=0)):
        print(f"lambda {lam:.4g}: median added {med:g}")
    print(f"max over all runs: {added.max()}")


if __name__ == "__main__":
    main()
