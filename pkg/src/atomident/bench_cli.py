"""Monte Carlo comparison of the identification methods.

Every study is described by an ``ExperimentConfig`` (JSON on disk).  A run
draws one dataset, picks lambda per method by cross-validation on the
estimation rows, fits each method on the full data and stores everything the
aggregates need, so the report can always be recomputed from its runs.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import group_lasso as gl
from .greedy_atoms import CandidateSearchConfig, GreedyConfig, GreedyTrace, init_atoms, run_greedy
from .lti_core import (
    BENCHMARK_DEN,
    BENCHMARK_NUM,
    IdentDataset,
    SparseModel,
    bias_variance_mse,
    build_features,
    fit_metric,
    format_number,
    generate_dataset,
    model_impulse_response,
    simulate_model,
    transfer_impulse_response,
    write_columns,
)
from .sparse_refine import AdaptiveConfig, StabilityConfig, adaptive_refine, ls_refit, stability_select

METHODS = ("InfA", "AdpInfA", "SS", "Atom", "Atom2", "ARX")
ATOM_COUNTS = {"Atom": 50, "Atom2": 500}
ARX_ORDERS = (4, 2, 3)

# lambda defaults for the two documented noise levels
_NOISE_DEFAULTS = {0.1: ((0.05, 5.0), 0.5), 0.01: ((0.005, 0.5), 0.05)}


class InvalidConfigError(ValueError):
    pass


class BenchmarkAborted(RuntimeError):
    def __init__(self, message, runs=None):
        super().__init__(message)
        self.runs = runs or []


@dataclass(frozen=True)
class CVConfig:
    holdout_fraction: float = 0.25
    k_folds: int = 0

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 1.0:
            raise InvalidConfigError("holdout_fraction must lie in (0, 1)")
        if self.k_folds == 1 or self.k_folds < 0:
            raise InvalidConfigError("k_folds is 0 (tail hold-out) or >= 2")

    def splits(self, N: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """(estimation rows, validation rows) pairs, all contiguous blocks."""
        idx = np.arange(N)
        if self.k_folds:
            if self.k_folds > N:
                raise InvalidConfigError("more folds than samples")
            return [(np.setdiff1d(idx, f), f) for f in np.array_split(idx, self.k_folds)]
        n_val = max(1, int(round(self.holdout_fraction * N)))
        if n_val >= N:
            raise InvalidConfigError("hold-out leaves no estimation rows")
        return [(idx[: N - n_val], idx[N - n_val :])]


@dataclass(frozen=True)
class GreedySettings:
    p0: int = 50
    epsilon: float = 1e-5
    l_max: int = 200
    grid: tuple[int, int] = (60, 60)
    multistart: int = 8

    def config(self, lam: float, seed) -> GreedyConfig:
        search = CandidateSearchConfig(tuple(self.grid), self.multistart)
        return GreedyConfig(lam=lam, p0=self.p0, epsilon=self.epsilon, l_max=self.l_max, search=search, seed=seed)


@dataclass(frozen=True)
class AdaptiveSettings:
    m_s: int = 2
    eps_prime: float = 1e-5


@dataclass(frozen=True)
class StabilitySettings:
    tau: float = 0.9
    n_s: int = 50
    lambda_fixed: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    system: Any = "benchmark"
    N: int = 100
    sigma2: float = 0.1
    n_runs: int = 20
    base_seed: int = 0
    methods: tuple[str, ...] = METHODS
    lambda_grid: tuple[float, ...] | None = None
    lambda_fixed: float | None = None
    cv: CVConfig = field(default_factory=CVConfig)
    greedy: GreedySettings = field(default_factory=GreedySettings)
    adaptive: AdaptiveSettings = field(default_factory=AdaptiveSettings)
    stability: StabilitySettings = field(default_factory=StabilitySettings)

    def __post_init__(self):
        if self.N < 2 or self.n_runs < 1 or self.sigma2 < 0:
            raise InvalidConfigError("need N >= 2, n_runs >= 1 and sigma2 >= 0")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise InvalidConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if self.lambda_grid is not None and (len(self.lambda_grid) == 0 or min(self.lambda_grid) <= 0):
            raise InvalidConfigError("lambda grid must be non-empty and positive")
        if self.system != "benchmark" and not (isinstance(self.system, dict) and {"num", "den"} <= set(self.system)):
            raise InvalidConfigError('system is "benchmark" or {"num": [...], "den": [...]}')

    def _noise_level(self) -> float:
        # nearest documented level on a log scale
        s = max(self.sigma2, 1e-300)
        return min(_NOISE_DEFAULTS, key=lambda k: abs(math.log(s / k)))

    def grid(self) -> np.ndarray:
        if self.lambda_grid is not None:
            return np.asarray(self.lambda_grid, dtype=float)
        lo, hi = _NOISE_DEFAULTS[self._noise_level()][0]
        return np.logspace(math.log10(lo), math.log10(hi), 15)

    def ss_lambda(self) -> float:
        if self.stability.lambda_fixed is not None:
            return float(self.stability.lambda_fixed)
        return _NOISE_DEFAULTS[self._noise_level()][1]

    def g_true(self, horizon: int | None = None) -> np.ndarray:
        horizon = self.N if horizon is None else horizon
        if self.system == "benchmark":
            return transfer_impulse_response(BENCHMARK_NUM, BENCHMARK_DEN, horizon)
        return transfer_impulse_response(self.system["num"], self.system["den"], horizon)

    def to_dict(self) -> dict:
        lam = {"fixed": self.lambda_fixed} if self.lambda_fixed is not None else {}
        if self.lambda_grid is not None:
            lam["grid"] = list(self.lambda_grid)
        greedy = asdict(self.greedy)
        greedy["grid"] = list(self.greedy.grid)
        return {
            "system": self.system,
            "data": {"N": self.N, "sigma2": self.sigma2},
            "mc": {"n_runs": self.n_runs, "base_seed": self.base_seed},
            "methods": list(self.methods),
            "lambda": lam,
            "cv": asdict(self.cv),
            "greedy": greedy,
            "adaptive": asdict(self.adaptive),
            "stability": asdict(self.stability),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"system", "data", "mc", "methods", "lambda", "cv", "greedy", "adaptive", "stability"}
        extra = set(d) - known
        if extra:
            raise InvalidConfigError(f"unknown config keys {sorted(extra)}")
        try:
            data, mc, lam = d.get("data", {}), d.get("mc", {}), d.get("lambda", {})
            greedy = dict(d.get("greedy", {}))
            if "grid" in greedy:
                greedy["grid"] = tuple(greedy["grid"])
            kw = {}
            if "system" in d:
                kw["system"] = d["system"]
            if "methods" in d:
                kw["methods"] = tuple(d["methods"])
            return cls(
                N=int(data.get("N", 100)),
                sigma2=float(data.get("sigma2", 0.1)),
                n_runs=int(mc.get("n_runs", 20)),
                base_seed=int(mc.get("base_seed", 0)),
                lambda_grid=tuple(lam["grid"]) if "grid" in lam else None,
                lambda_fixed=lam.get("fixed"),
                cv=CVConfig(**d.get("cv", {})),
                greedy=GreedySettings(**greedy),
                adaptive=AdaptiveSettings(**d.get("adaptive", {})),
                stability=StabilitySettings(**d.get("stability", {})),
                **kw,
            )
        except TypeError as exc:
            raise InvalidConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------- ARX


@dataclass(frozen=True)
class ARXModel:
    """``A(q) y = B(q) u`` with ``A = 1 + a_1 q^-1 + ...`` and ``B = sum b_j q^-(nk+j-1)``."""

    a: tuple[float, ...]
    b: tuple[float, ...]
    nk: int

    def impulse_response(self, horizon: int) -> np.ndarray:
        g = np.zeros(horizon)
        for t in range(horizon):
            acc = 0.0
            j = t - self.nk
            if 0 <= j < len(self.b):
                acc += self.b[j]
            for i, ai in enumerate(self.a, start=1):
                if t - i >= 0:
                    acc -= ai * g[t - i]
            g[t] = acc
        return g

    def simulate(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.convolve(self.impulse_response(u.size), u)[: u.size]

    def pole_locations(self) -> list[complex]:
        return [complex(z) for z in np.roots(np.concatenate([[1.0], self.a]))]

    def order(self) -> int:
        return len(self.a)


def fit_arx(data: IdentDataset, orders=ARX_ORDERS, rows=None) -> ARXModel:
    """Least squares ARX fit from rest (pre-sample values are zero)."""
    na, nb, nk = orders
    N = data.N

    def lagged(x, d):
        out = np.zeros(N)
        if d < N:
            out[d:] = x[: N - d]
        return out

    cols = [-lagged(data.y, i) for i in range(1, na + 1)]
    cols += [lagged(data.u, nk + j) for j in range(nb)]
    A = np.column_stack(cols)
    y = data.y
    if rows is not None:
        A, y = A[rows], y[rows]
    theta, *_ = np.linalg.lstsq(A, y, rcond=None)
    return ARXModel(tuple(theta[:na]), tuple(theta[na:]), nk)


# ---------------------------------------------------------------- methods


@dataclass
class MethodFit:
    method: str
    lam: float | None
    model: Any
    trace: GreedyTrace | None = None
    stats: dict = field(default_factory=dict)


def impulse_response(model, horizon: int) -> np.ndarray:
    if isinstance(model, ARXModel):
        return model.impulse_response(horizon)
    return model_impulse_response(model, horizon)


def simulate(model, u) -> np.ndarray:
    if isinstance(model, ARXModel):
        return model.simulate(u)
    return simulate_model(model, u)


def model_poles(model) -> list[complex]:
    """Pole locations in the closed upper half plane (one per conjugate pair)."""
    if isinstance(model, ARXModel):
        return [z for z in model.pole_locations() if z.imag >= 0]
    return [p.value for p in model.active_poles()]


def model_order(model) -> int:
    return model.order()


def _greedy(data, lam, seed, cfg: ExperimentConfig, rows, cache):
    key = (float(lam), None if rows is None else tuple(int(i) for i in rows))
    if cache is not None and key in cache:
        return cache[key]
    out = run_greedy(data, cfg.greedy.config(lam, seed), rows=rows)
    if cache is not None:
        cache[key] = out
    return out


def fit_atoms(data: IdentDataset, poles, lam: float, rows=None) -> SparseModel:
    """Group lasso on a fixed atom set (the discretised baseline)."""
    poles = list(poles)
    z = build_features(poles, data.u)
    y = data.y
    if rows is not None:
        z, y = z[:, rows, :], y[rows]
    sol = gl.solve(gl.GroupLassoProblem(y, z, lam))
    if not sol.converged:
        raise gl.ConvergenceError(f"fixed-atom solve stopped at kkt violation {sol.kkt_violation:.3g}", solution=sol)
    return SparseModel.from_arrays(poles, sol.gammas, lam, objective=sol.objective)


def fit_method(method: str, data: IdentDataset, lam, seed, cfg: ExperimentConfig | None = None,
               rows=None, cache: dict | None = None) -> MethodFit:
    """Fit one method; ``rows`` restricts the loss to those samples."""
    cfg = cfg or ExperimentConfig()
    if method not in METHODS:
        raise InvalidConfigError(f"unknown method {method!r}")
    if method == "ARX":
        return MethodFit(method, None, fit_arx(data, rows=rows))
    if method in ATOM_COUNTS:
        return MethodFit(method, lam, fit_atoms(data, init_atoms(ATOM_COUNTS[method], seed), lam, rows))
    model, trace = _greedy(data, lam, seed, cfg, rows, cache)
    if method == "InfA":
        return MethodFit(method, lam, model, trace, {"added": trace.added})
    if method == "AdpInfA":
        acfg = AdaptiveConfig(lam, cfg.adaptive.m_s, cfg.adaptive.eps_prime)
        refined = adaptive_refine(data, model.poles, model.gammas, acfg, rows=rows)
        return MethodFit(method, lam, refined, trace,
                         {"added": trace.added, "active_counts": refined.solver_stats["active_counts"]})
    if rows is not None:
        raise InvalidConfigError("SS is always fitted on the full dataset")
    scfg = StabilityConfig(lambda_fixed=lam, tau=cfg.stability.tau, n_s=cfg.stability.n_s, seed=seed)
    selected, freqs = stability_select(data, model.poles, scfg)
    refit = ls_refit(data, selected)
    return MethodFit(method, lam, refit, trace, {
        "added": trace.added,
        "candidates": len(model.poles),
        "infa_order": model.order(),
        "max_frequency": float(freqs.frequencies.max()) if freqs.counts.size else 0.0,
        "failed_subsamples": len(freqs.failed),
    })


def run_method(method: str, data: IdentDataset, lam, seed, cfg: ExperimentConfig | None = None):
    return fit_method(method, data, lam, seed, cfg).model


def select_lambda_cv(method: str, data: IdentDataset, grid, cv_cfg: CVConfig, seed,
                     cfg: ExperimentConfig | None = None, cache: dict | None = None) -> float:
    """Grid value with the smallest validation simulation error.

    Ties go to the larger lambda.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidConfigError("empty lambda grid")
    if grid.size == 1:
        return float(grid[0])
    splits = cv_cfg.splits(data.N)
    best, best_lam = math.inf, None
    for lam in sorted(grid, reverse=True):
        score = 0.0
        for est, val in splits:
            fit = fit_method(method, data, float(lam), seed, cfg, rows=est, cache=cache)
            yhat = simulate(fit.model, data.u)
            score += float(np.sum((data.y[val] - yhat[val]) ** 2))
        if score < best:
            best, best_lam = score, float(lam)
    return best_lam


# ---------------------------------------------------------------- Monte Carlo


def run_single(cfg: ExperimentConfig, run: int) -> dict:
    """One Monte Carlo replicate as a JSON-ready record."""
    seed = cfg.base_seed + run
    rec = {"run": run, "seed": seed, "ok": True, "error": None, "methods": {}, "trace": None}
    try:
        g = cfg.g_true()
        data = generate_dataset(g, cfg.N, cfg.sigma2, seed)
        cache: dict = {}
        for method in cfg.methods:
            if method == "ARX":
                lam = None
            elif method == "SS":
                lam = cfg.ss_lambda()
            elif cfg.lambda_fixed is not None:
                lam = float(cfg.lambda_fixed)
            else:
                lam = select_lambda_cv(method, data, cfg.grid(), cfg.cv, seed, cfg, cache)
            fit = fit_method(method, data, lam, seed, cfg, cache=cache)
            g_hat = impulse_response(fit.model, cfg.N)
            lags = slice(0, cfg.N - 1)
            rec["methods"][method] = {
                "lambda": lam,
                "W": fit_metric(g[lags], g_hat[lags]),
                "order": model_order(fit.model),
                "poles": [[abs(z), math.atan2(z.imag, z.real)] for z in model_poles(fit.model)],
                "g_hat": g_hat[lags].tolist(),
                "stats": fit.stats,
            }
            if method == "InfA" and fit.trace is not None:
                rec["trace"] = [
                    [s.iteration, s.pole.alpha, s.pole.beta, s.score, s.objective, s.active_count]
                    for s in fit.trace.steps
                ]
    except Exception as exc:  # recorded, excluded from aggregates
        rec.update(ok=False, error=f"{type(exc).__name__}: {exc}", methods={}, trace=None)
    return rec


def _run_star(args):
    return run_single(*args)


def aggregate(runs: list[dict], g_true, methods) -> dict:
    """Aggregates computed only from the per-run records."""
    ok = [r for r in runs if r["ok"]]
    g = np.asarray(g_true, dtype=float)
    out = {"n_runs": len(runs), "n_failed": len(runs) - len(ok),
           "failed_runs": [r["run"] for r in runs if not r["ok"]], "methods": {}}
    for m in methods:
        recs = [r["methods"][m] for r in ok if m in r["methods"]]
        W = [x["W"] for x in recs]
        entry = {
            "median_W": float(np.median(W)) if W else None,
            "mean_W": float(np.mean(W)) if W else None,
            "orders": [x["order"] for x in recs],
            "bias2": None, "var": None, "mse": None,
        }
        if len(recs) >= 2:
            b2, var, mse = bias_variance_mse(g[: len(recs[0]["g_hat"])], [x["g_hat"] for x in recs])
            entry.update(bias2=b2, var=var, mse=mse)
        out["methods"][m] = entry
    return out


@dataclass
class BenchReport:
    config: dict
    runs: list[dict]
    aggregates: dict
    timing: dict = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        return list(self.config["methods"])

    def recompute(self) -> dict:
        cfg = ExperimentConfig.from_dict(self.config)
        return aggregate(self.runs, cfg.g_true(), cfg.methods)


def run_monte_carlo(cfg: ExperimentConfig, threads: int = 1, progress=None) -> BenchReport:
    """Runs ``1..n_runs`` with seeds ``base_seed + r``; results do not depend on ``threads``."""
    t0 = time.perf_counter()
    runs: list[dict] = []
    budget = 0.1 * cfg.n_runs
    jobs = [(cfg, r) for r in range(1, cfg.n_runs + 1)]

    def collect(rec):
        runs.append(rec)
        if progress is not None:
            progress(rec)
        if sum(not r["ok"] for r in runs) > budget:
            raise BenchmarkAborted(f"more than 10% of {cfg.n_runs} runs failed", runs)

    if threads <= 1:
        for job in jobs:
            collect(_run_star(job))
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for rec in pool.map(_run_star, jobs):
                collect(rec)
    agg = aggregate(runs, cfg.g_true(), cfg.methods)
    return BenchReport(cfg.to_dict(), runs, agg, {"seconds": time.perf_counter() - t0, "threads": threads})


# ---------------------------------------------------------------- output


def _json_text(obj) -> str:
    """JSON with every float written to 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_json_text(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json_text(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return json.dumps(obj if not isinstance(obj, np.bool_) else bool(obj))
    if isinstance(obj, (float, np.floating)):
        return format_number(float(obj)) if math.isfinite(obj) else "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def emit_report(report: BenchReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    methods = report.methods
    ok = [r for r in report.runs if r["ok"]]
    fits = {"method": [], "run": [], "W": []}
    orders = {"method": [], "run": [], "order": []}
    poles = {"method": [], "run": [], "alpha": [], "beta": []}
    for r in ok:
        for m in methods:
            rec = r["methods"].get(m)
            if rec is None:
                continue
            fits["method"].append(m), fits["run"].append(r["run"]), fits["W"].append(float(rec["W"]))
            orders["method"].append(m), orders["run"].append(r["run"]), orders["order"].append(int(rec["order"]))
            for a, b in rec["poles"]:
                poles["method"].append(m), poles["run"].append(r["run"])
                poles["alpha"].append(float(a)), poles["beta"].append(float(b))
    bv = {"method": [], "bias2": [], "var": [], "mse": []}
    for m in methods:
        e = report.aggregates["methods"].get(m, {})
        bv["method"].append(m)
        for k in ("bias2", "var", "mse"):
            v = e.get(k)
            bv[k].append(float("nan") if v is None else float(v))
    paths = []
    for name, cols in (("fits.csv", fits), ("model_orders.csv", orders), ("poles.csv", poles),
                       ("bias_variance.csv", bv)):
        write_columns(out / name, cols)
        paths.append(out / name)
    for r in ok:
        if r.get("trace") is not None:
            p = out / f"greedy_trace_{r['run']}.csv"
            t = np.array(r["trace"], dtype=float).reshape(-1, 6)
            write_columns(p, {
                "iter": t[:, 0].astype(int), "alpha": t[:, 1], "beta": t[:, 2],
                "score": t[:, 3], "objective": t[:, 4], "active_count": t[:, 5].astype(int),
            })
            paths.append(p)
    body = {"config": report.config, "runs": report.runs, "aggregates": report.aggregates}
    (out / "report.json").write_text(_json_text(body) + "\n", encoding="utf-8")
    # wall-clock numbers would break bit-identical report.json files
    (out / "timing.json").write_text(_json_text(report.timing) + "\n", encoding="utf-8")
    return paths + [out / "report.json", out / "timing.json"]


def load_report(out_dir) -> BenchReport:
    out = Path(out_dir)
    body = json.loads((out / "report.json").read_text(encoding="utf-8"))
    timing_path = out / "timing.json"
    timing = json.loads(timing_path.read_text(encoding="utf-8")) if timing_path.exists() else {}
    return BenchReport(body["config"], body["runs"], body["aggregates"], timing)


def summary_table(report: BenchReport) -> str:
    lines = [f"{'method':8s} {'median W':>9s} {'bias2':>11s} {'var':>11s} {'mse':>11s} {'order':>6s}"]
    for m in report.methods:
        e = report.aggregates["methods"][m]

        def num(v):
            return f"{v:11.4g}" if v is not None else f"{'-':>11s}"

        med = f"{e['median_W']:9.2f}" if e["median_W"] is not None else f"{'-':>9s}"
        order = f"{np.median(e['orders']):6.1f}" if e["orders"] else f"{'-':>6s}"
        lines.append(f"{m:8s} {med} {num(e['bias2'])} {num(e['var'])} {num(e['mse'])} {order}")
    agg = report.aggregates
    lines.append(f"runs: {agg['n_runs']}  failed: {agg['n_failed']}")
    return "\n".join(lines)


def with_overrides(cfg: ExperimentConfig, seed=None) -> ExperimentConfig:
    return cfg if seed is None else replace(cfg, base_seed=int(seed))
