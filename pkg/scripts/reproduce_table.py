"""Full Monte Carlo comparison at both noise levels (long running).

Writes one report directory per noise level and prints the summary tables.
With the defaults (100 runs per level) expect a few hours on one core.
"""

import argparse
from pathlib import Path

from atomident.bench_cli import ExperimentConfig, emit_report, run_monte_carlo, summary_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/table"))
    args = ap.parse_args()
    for sigma2 in (0.1, 0.01):
        cfg = ExperimentConfig(sigma2=sigma2, n_runs=args.runs, base_seed=args.seed)
        report = run_monte_carlo(cfg, threads=args.threads,
                                 progress=lambda r: print(f"  sigma2={sigma2} run {r['run']} ok={r['ok']}", flush=True))
        emit_report(report, args.out / f"sigma2_{sigma2:g}")
        print(f"\nsigma2 = {sigma2:g} ({report.timing['seconds']:.0f}s)")
        print(summary_table(report))


if __name__ == "__main__":
    main()
