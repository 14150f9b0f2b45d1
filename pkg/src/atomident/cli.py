"""Command line front end: ``atomident {generate,identify,select,bench,report}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench_cli as bc
from .greedy_atoms import run_greedy
from .lti_core import IdentDataset, generate_dataset, write_columns
from .sparse_refine import StabilityConfig, ls_refit, stability_select


def _config(args) -> bc.ExperimentConfig:
    cfg = bc.ExperimentConfig.load(args.config) if args.config else bc.ExperimentConfig()
    return bc.with_overrides(cfg, seed=args.seed)


def _write_model(out: Path, name: str, model, horizon: int):
    if isinstance(model, bc.ARXModel):
        names = [f"a{i}" for i in range(1, len(model.a) + 1)] + [f"b{j}" for j in range(1, len(model.b) + 1)]
        write_columns(out / f"{name}_arx.csv", {"coef": names, "value": list(model.a) + list(model.b)})
    else:
        g = model.gammas.reshape(-1, 2)
        write_columns(out / f"{name}_atoms.csv", {
            "alpha": [p.alpha for p in model.poles], "beta": [p.beta for p in model.poles],
            "gamma_re": g[:, 0], "gamma_im": g[:, 1],
        })
    write_columns(out / f"{name}_impulse.csv", {"t": np.arange(1, horizon + 1), "g": bc.impulse_response(model, horizon)})


def cmd_generate(args):
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = cfg.g_true()
    write_columns(out / "g_true.csv", {"t": np.arange(1, g.size + 1), "g": g})
    for r in range(1, cfg.n_runs + 1):
        generate_dataset(g, cfg.N, cfg.sigma2, cfg.base_seed + r).to_csv(out / f"data_{r}.csv")
    print(f"wrote g_true.csv and {cfg.n_runs} datasets to {out}")


def cmd_identify(args):
    cfg = _config(args)
    data = IdentDataset.from_csv(args.data, cfg.sigma2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.base_seed
    method = args.method
    if method == "ARX":
        lam = None
    elif args.lam is not None:
        lam = args.lam
    elif method == "SS":
        lam = cfg.ss_lambda()
    else:
        lam = bc.select_lambda_cv(method, data, cfg.grid(), cfg.cv, seed, cfg, cache={})
    fit = bc.fit_method(method, data, lam, seed, cfg)
    _write_model(out, method, fit.model, data.N)
    if fit.trace is not None:
        fit.trace.to_csv(out / f"{method}_trace.csv")
    summary = {"method": method, "lambda": lam, "order": bc.model_order(fit.model),
               "poles": [[z.real, z.imag] for z in bc.model_poles(fit.model)], "stats": fit.stats}
    (out / f"{method}_summary.json").write_text(bc._json_text(summary) + "\n", encoding="utf-8")
    print(f"{method}: lambda={lam} order={summary['order']}")


def cmd_select(args):
    cfg = _config(args)
    data = IdentDataset.from_csv(args.data, cfg.sigma2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lam = args.lam if args.lam is not None else cfg.ss_lambda()
    model, trace = run_greedy(data, cfg.greedy.config(lam, cfg.base_seed))
    scfg = StabilityConfig(lambda_fixed=lam, tau=cfg.stability.tau, n_s=cfg.stability.n_s, seed=cfg.base_seed)
    selected, freqs = stability_select(data, model.poles, scfg)
    freqs.to_csv(out / "frequencies.csv")
    trace.to_csv(out / "greedy_trace.csv")
    refit = ls_refit(data, selected)
    _write_model(out, "SS", refit, data.N)
    print(f"{len(model.poles)} candidate atoms, {len(selected)} selected, order {refit.order()}")


def cmd_bench(args):
    cfg = _config(args)
    threads = args.threads if args.threads is not None else 1

    def progress(rec):
        state = "ok" if rec["ok"] else f"failed ({rec['error']})"
        print(f"run {rec['run']} seed {rec['seed']}: {state}", file=sys.stderr, flush=True)

    report = bc.run_monte_carlo(cfg, threads=threads, progress=progress)
    bc.emit_report(report, args.out)
    print(bc.summary_table(report))


def cmd_report(args):
    report = bc.load_report(args.out)
    print(bc.summary_table(report))
    if args.check:
        same = json.dumps(report.recompute(), sort_keys=True) == json.dumps(report.aggregates, sort_keys=True)
        print("aggregates recomputed from runs:", "match" if same else "MISMATCH")
        return 0 if same else 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atomident", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="results"):
        sp.add_argument("--config", help="experiment JSON")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int, help="overrides mc.base_seed")
        sp.add_argument("--threads", type=int, help="worker processes")

    sp = sub.add_parser("generate", help="write the true impulse response and Monte Carlo datasets")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("identify", help="fit one method to a t,u,y CSV")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--method", default="InfA", choices=bc.METHODS)
    sp.add_argument("--lam", type=float, help="skip cross-validation and use this lambda")
    sp.set_defaults(func=cmd_identify)

    sp = sub.add_parser("select", help="greedy atoms followed by stability selection")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--lam", type=float)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("bench", help="run a Monte Carlo study and write the report")
    common(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("report", help="print the summary of a written report")
    common(sp)
    sp.add_argument("--check", action="store_true", help="recompute aggregates from the stored runs")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (bc.InvalidConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
