"""Post-processing of a greedy atom set.

Reweighted group lasso shrinks the bias on dominant modes, complementary
pairs stability selection keeps only atoms that stay active across half
samples, and ``ls_refit`` fits the surviving atoms without a penalty.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import group_lasso as gl
from .lti_core import ACTIVITY_THRESHOLD, IdentDataset, Pole, SparseModel, build_features, make_rng


@dataclass(frozen=True)
class AdaptiveConfig:
    lam: float
    m_s: int = 2
    eps_prime: float = 1e-5
    tol: float = gl.DEFAULT_TOL
    max_iter: int = gl.DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.m_s < 1 or not self.eps_prime > 0 or not self.lam > 0:
            raise ValueError("need m_s >= 1, eps_prime > 0 and lam > 0")


@dataclass(frozen=True)
class StabilityConfig:
    lambda_fixed: float = 0.5
    tau: float = 0.9
    n_s: int = 50
    seed: int = 0
    tol: float = gl.DEFAULT_TOL
    max_iter: int = gl.DEFAULT_MAX_ITER
    threshold: float = ACTIVITY_THRESHOLD

    def __post_init__(self):
        if not (0.5 < self.tau <= 1.0):
            raise ValueError("tau must lie in (0.5, 1]")
        if self.n_s < 1 or not self.lambda_fixed > 0:
            raise ValueError("need n_s >= 1 and lambda_fixed > 0")


@dataclass
class SelectionFrequencies:
    poles: list[Pole]
    counts: np.ndarray
    n_s: int
    failed: list[int] = field(default_factory=list)

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / (2.0 * self.n_s)

    def selected(self, tau: float) -> list[Pole]:
        f = self.frequencies
        return [p for p, fi in zip(self.poles, f) if fi >= tau]

    def to_csv(self, path):
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", "beta", "frequency"])
            for p, f in zip(self.poles, self.frequencies):
                w.writerow([f"{p.alpha:.17g}", f"{p.beta:.17g}", f"{f:.17g}"])


def adaptive_refine(
    data: IdentDataset, atoms: Sequence[Pole], gamma0, cfg: AdaptiveConfig, rows=None
) -> SparseModel:
    """Iteratively reweighted group lasso on a fixed atom set.

    ``solver_stats["active_counts"]`` holds the support size before the first
    and after every reweighting pass.
    """
    atoms = list(atoms)
    g = np.asarray(gamma0, dtype=float).reshape(len(atoms), 2)
    z = build_features(atoms, data.u)
    y = data.y
    if rows is not None:
        rows = np.sort(np.asarray(rows))
        z, y = z[:, rows, :], y[rows]
    counts = [int(np.sum(np.hypot(g[:, 0], g[:, 1]) > ACTIVITY_THRESHOLD))]
    sol = None
    for _ in range(cfg.m_s):
        w = 1.0 / (np.hypot(g[:, 0], g[:, 1]) + cfg.eps_prime)
        problem = gl.GroupLassoProblem(y, z, cfg.lam, w)
        sol = gl.solve(problem, tol=cfg.tol, max_iter=cfg.max_iter, init=g)
        if not sol.converged:
            raise gl.ConvergenceError(
                f"reweighted solve stopped at kkt violation {sol.kkt_violation:.3g}", solution=sol
            )
        g = sol.gammas
        counts.append(int(np.sum(sol.norms > ACTIVITY_THRESHOLD)))
    return SparseModel.from_arrays(
        atoms, g, cfg.lam, active_counts=counts,
        objective=None if sol is None else sol.objective,
    )


def complementary_pairs(N: int, n_s: int, seed) -> list[tuple[np.ndarray, np.ndarray]]:
    """``n_s`` sorted half-sample index sets and their complements."""
    rng = make_rng(seed, 2)
    everyone = np.arange(N)
    pairs = []
    for _ in range(n_s):
        b = np.sort(rng.choice(N, N // 2, replace=False))
        pairs.append((b, np.setdiff1d(everyone, b)))
    return pairs


def stability_select(data: IdentDataset, atoms: Sequence[Pole], cfg: StabilityConfig):
    """Complementary pairs stability selection over a fixed atom set.

    Returns ``(selected, freqs)``.  A subsample whose solve does not converge
    counts as selecting nothing and its index is listed in ``freqs.failed``.
    """
    atoms = list(atoms)
    z = build_features(atoms, data.u)
    counts = np.zeros(len(atoms))
    failed = []
    for i, (b, bbar) in enumerate(complementary_pairs(data.N, cfg.n_s, cfg.seed)):
        for half in (b, bbar):
            if len(atoms) == 0 or half.size == 0:
                continue
            problem = gl.GroupLassoProblem(data.y[half], z[:, half, :], cfg.lambda_fixed)
            sol = gl.solve(problem, tol=cfg.tol, max_iter=cfg.max_iter)
            if not sol.converged:
                failed.append(i)
                continue
            counts += sol.norms > cfg.threshold
    freqs = SelectionFrequencies(atoms, counts, cfg.n_s, failed)
    return freqs.selected(cfg.tau), freqs


def ls_refit(data: IdentDataset, selected: Sequence[Pole], rcond: float = 1e-10) -> SparseModel:
    """Unpenalised least squares on the selected atoms (minimum-norm if rank deficient)."""
    selected = list(selected)
    if not selected:
        return SparseModel([], 0.0, {"residual_norm": float(np.linalg.norm(data.y))})
    z = build_features(selected, data.u)
    A = z.transpose(1, 0, 2).reshape(data.N, 2 * len(selected))
    coef, *_ = np.linalg.lstsq(A, data.y, rcond=rcond)
    r = data.y - A @ coef
    return SparseModel.from_arrays(selected, coef.reshape(-1, 2), 0.0, residual_norm=float(np.linalg.norm(r)))
