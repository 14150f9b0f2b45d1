"""Greedy atom generation for the infinite-dimensional group lasso.

Starting from a small random atom set, the loop repeatedly solves the finite
problem, looks over the whole upper half disk for the atom whose block
correlates most with the residual, and adds it while that correlation
exceeds ``lam + epsilon``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from . import group_lasso as gl
from .lti_core import ALPHA_MAX, IdentDataset, Pole, SparseModel, build_features, make_rng


@dataclass(frozen=True)
class CandidateSearchConfig:
    coarse_grid: tuple[int, int] = (60, 60)
    multistart_count: int = 8
    local_tol: float = 1e-7
    max_local_iter: int = 200

    def __post_init__(self):
        if min(self.coarse_grid) < 2 or self.multistart_count < 1:
            raise ValueError("grid needs >= 2 points per axis and >= 1 start")
        if not self.local_tol > 0 or self.max_local_iter < 1:
            raise ValueError("local_tol and max_local_iter must be positive")


@dataclass(frozen=True)
class GreedyConfig:
    lam: float
    p0: int = 50
    epsilon: float = 1e-5
    l_max: int = 200
    search: CandidateSearchConfig = field(default_factory=CandidateSearchConfig)
    seed: int = 0
    tol: float = gl.DEFAULT_TOL
    max_iter: int = gl.DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.p0 < 1 or self.l_max < 1 or not self.epsilon > 0 or not self.lam > 0:
            raise ValueError("need p0 >= 1, l_max >= 1, epsilon > 0 and lam > 0")


@dataclass
class GreedyStep:
    iteration: int
    pole: Pole
    score: float
    objective: float
    active_count: int


@dataclass
class GreedyTrace:
    steps: list[GreedyStep] = field(default_factory=list)
    initial_objective: float = float("nan")
    final_score: float = float("nan")
    terminated_by: str = ""

    @property
    def added(self) -> int:
        return len(self.steps)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([self.initial_objective] + [s.objective for s in self.steps])

    def to_csv(self, path):
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "alpha", "beta", "score", "objective", "active_count"])
            for s in self.steps:
                w.writerow([s.iteration, f"{s.pole.alpha:.17g}", f"{s.pole.beta:.17g}",
                            f"{s.score:.17g}", f"{s.objective:.17g}", s.active_count])


@njit(cache=True)
def _horner(coeffs, k):
    out = np.zeros(k.size, dtype=np.complex128)
    for i in range(k.size):
        acc = 0j
        for j in range(coeffs.size - 1, -1, -1):
            acc = acc * k[i] + coeffs[j]
        out[i] = acc
    return out


def init_atoms(p0: int, seed) -> list[Pole]:
    if p0 < 1:
        raise ValueError("p0 must be >= 1")
    rng = make_rng(seed, 1)
    alphas = rng.uniform(0.0, 1.0, p0)
    betas = rng.uniform(0.0, math.pi, p0)
    return [Pole(a, b) for a, b in zip(alphas, betas)]


class AtomSearcher:
    """Scores atoms against residuals for one input sequence.

    ``phi_k' R = (1 - |k|^2) sum_n c_n k^n`` where ``c_n`` is the correlation
    of ``R`` with ``u`` delayed by ``n + 1`` samples, so a score is a single
    polynomial evaluation.  Rows outside ``rows`` are treated as missing.
    """

    def __init__(self, u, cfg: CandidateSearchConfig = CandidateSearchConfig(), rows=None):
        self.u = np.asarray(u, dtype=float)
        self.cfg = cfg
        self.mask = None
        if rows is not None:
            self.mask = np.zeros(self.u.size)
            self.mask[np.asarray(rows)] = 1.0
        na, nb = cfg.coarse_grid
        self.shape = (na, nb)
        a, b = np.meshgrid(radius_grid(na), np.linspace(0.0, math.pi, nb), indexing="ij")
        self.grid_alpha = a.ravel()
        self.grid_beta = b.ravel()
        self._step = (1.0 / (na - 1), math.pi / (nb - 1))

    def correlations(self, residual) -> np.ndarray:
        r = np.asarray(residual, dtype=float)
        if self.mask is not None:
            full = np.zeros(self.u.size)
            full[self.mask > 0] = r
            r = full
        n = self.u.size
        # c[m] = sum_t r[t] u[t-1-m], m = 0..n-2
        return np.correlate(r[1:], self.u[: n - 1], mode="full")[n - 2 :] if n > 1 else np.zeros(0)

    def scores(self, coeffs, alphas, betas) -> np.ndarray:
        alphas = np.asarray(alphas, dtype=float)
        k = alphas * np.exp(1j * np.asarray(betas, dtype=float))
        acc = _horner(np.ascontiguousarray(coeffs, dtype=float), k.ravel()).reshape(k.shape)
        return 2.0 * (1.0 - alphas**2) * np.abs(acc)

    def grid_scores(self, residual) -> np.ndarray:
        return self._grid_from_coeffs(self.correlations(residual))

    def _grid_from_coeffs(self, coeffs) -> np.ndarray:
        # for a fixed radius the angle sweep is a DFT of c_n alpha^n
        na, nb = self.shape
        m = 2 * (nb - 1)
        radii = self.grid_alpha[::nb]
        v = coeffs[None, :] * radii[:, None] ** np.arange(coeffs.size)[None, :]
        if coeffs.size > m:
            folded = np.zeros((na, m))
            for start in range(0, coeffs.size, m):
                chunk = v[:, start : start + m]
                folded[:, : chunk.shape[1]] += chunk
            v = folded
        spec = np.fft.ifft(v, n=m, axis=1)[:, :nb] * m
        return (2.0 * (1.0 - radii**2)[:, None] * np.abs(spec)).ravel()

    def _peaks(self, grid) -> np.ndarray:
        """Flat indices of grid local maxima, best first; falls back to the best points."""
        g = grid.reshape(self.shape).copy()
        # the zero-radius row is a single pole
        if self.grid_alpha[0] == 0.0:
            g[0, 1:] = -np.inf
        pad = np.pad(g, 1, constant_values=-np.inf)
        peak = np.ones(g.shape, dtype=bool)
        na, nb = g.shape
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di or dj:
                    peak &= g >= pad[1 + di : 1 + di + na, 1 + dj : 1 + dj + nb]
        idx = np.flatnonzero(peak.ravel())
        idx = idx[np.argsort(-grid[idx], kind="stable")]
        if idx.size < self.cfg.multistart_count:
            rest = np.argsort(-grid, kind="stable")
            idx = np.concatenate([idx, rest[~np.isin(rest, idx)]])
        return idx

    def _refine(self, coeffs, a0, b0):
        cfg = self.cfg
        a, b = a0.copy(), b0.copy()
        best = self.scores(coeffs, a, b)
        # local spacing of the warped radius grid
        da = np.maximum(2.0 * np.sqrt(1.0 - a) * self._step[0], 4 * cfg.local_tol)
        db = np.full(a.shape, self._step[1])
        moves = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
        for _ in range(cfg.max_local_iter):
            live = (da > cfg.local_tol) | (db > cfg.local_tol)
            if not live.any():
                break
            ca = np.clip(a[:, None] + moves[None, :, 0] * da[:, None], 0.0, ALPHA_MAX)
            cb = np.clip(b[:, None] + moves[None, :, 1] * db[:, None], 0.0, math.pi)
            sc = self.scores(coeffs, ca, cb)
            j = np.argmax(sc, axis=1)
            top = sc[np.arange(a.size), j]
            better = (top > best) & live
            a = np.where(better, ca[np.arange(a.size), j], a)
            b = np.where(better, cb[np.arange(a.size), j], b)
            best = np.where(better, top, best)
            shrink = live & ~better
            da = np.where(shrink, 0.5 * da, da)
            db = np.where(shrink, 0.5 * db, db)
        return a, b, best

    def search(self, residual, exclude=()) -> tuple[Pole, float]:
        """Best pole over grid plus local refinement, and its exact score."""
        coeffs = self.correlations(residual)
        grid = self._grid_from_coeffs(coeffs)
        order = self._peaks(grid)[: self.cfg.multistart_count]
        a, b, sc = self._refine(coeffs, self.grid_alpha[order], self.grid_beta[order])
        # refinement never loses to the grid incumbent
        a = np.append(a, self.grid_alpha[order[0]])
        b = np.append(b, self.grid_beta[order[0]])
        sc = np.append(sc, grid[order[0]])
        taken = [(p.alpha, p.beta) for p in exclude]
        for i in np.argsort(-sc, kind="stable"):
            if any(abs(a[i] - ea) <= 1e-10 and abs(b[i] - eb) <= 1e-10 for ea, eb in taken):
                continue
            pole = Pole(a[i], b[i])
            return pole, self.exact_score(pole, residual)
        pole = Pole(a[-1], b[-1])
        return pole, self.exact_score(pole, residual)

    def exact_score(self, pole: Pole, residual) -> float:
        z = build_features([pole], self.u)[0]
        if self.mask is not None:
            z = z[self.mask > 0]
        return gl.violation_score(z, residual)


def radius_grid(n: int) -> np.ndarray:
    """Radii in ``[0, ALPHA_MAX]``, packed towards the unit circle where atoms
    change fastest with the radius."""
    x = np.linspace(0.0, 1.0, n)
    return np.minimum(1.0 - (1.0 - x) ** 2, ALPHA_MAX)


def search_candidate(residual, u, cfg: CandidateSearchConfig = CandidateSearchConfig()) -> tuple[Pole, float]:
    return AtomSearcher(u, cfg).search(residual)


def _solve_or_raise(problem, cfg, init, trace):
    sol = gl.solve(problem, tol=cfg.tol, max_iter=cfg.max_iter, init=init)
    if not sol.converged:
        raise gl.ConvergenceError(
            f"group lasso stopped at kkt violation {sol.kkt_violation:.3g}", solution=sol, trace=trace
        )
    return sol


def run_greedy(data: IdentDataset, cfg: GreedyConfig, rows=None, init_poles=None):
    """Greedy atom generation; returns ``(model, trace)``.

    ``rows`` restricts the loss to a subset of samples (features are still
    driven by the full input).  ``init_poles`` replaces the random start set.
    """
    rows = None if rows is None else np.sort(np.asarray(rows))
    y = data.y if rows is None else data.y[rows]
    poles = list(init_poles) if init_poles is not None else init_atoms(cfg.p0, cfg.seed)
    searcher = AtomSearcher(data.u, cfg.search, rows)

    def features(ps):
        z = build_features(ps, data.u)
        return z if rows is None else z[:, rows, :]

    zetas = features(poles)
    trace = GreedyTrace()
    sol = _solve_or_raise(gl.GroupLassoProblem(y, zetas, cfg.lam), cfg, None, trace)
    trace.initial_objective = sol.objective
    trace.terminated_by = "l_max_reached"
    for l in range(cfg.l_max):
        pole, score = searcher.search(sol.residual, exclude=poles)
        trace.final_score = score
        if score < cfg.lam + cfg.epsilon:
            trace.terminated_by = "converged"
            break
        poles.append(pole)
        zetas = np.concatenate([zetas, features([pole])], axis=0)
        warm = np.vstack([sol.gammas, np.zeros((1, 2))])
        sol = _solve_or_raise(gl.GroupLassoProblem(y, zetas, cfg.lam), cfg, warm, trace)
        trace.steps.append(GreedyStep(l + 1, pole, score, sol.objective, int(np.sum(sol.norms > 1e-8))))
    model = SparseModel.from_arrays(
        poles, sol.gammas, cfg.lam,
        iterations=trace.added, objective=sol.objective, kkt_violation=sol.kkt_violation,
    )
    return model, trace


def max_violation_on_grid(data: IdentDataset, model: SparseModel, n: int = 240, rows=None) -> tuple[Pole, float]:
    """Largest ``||zeta_k' R||`` over a dense ``n x n`` grid of the half disk."""
    searcher = AtomSearcher(data.u, CandidateSearchConfig((n, n), 1), rows)
    y = data.y if rows is None else data.y[np.asarray(rows)]
    z = build_features(model.poles, data.u)
    if rows is not None:
        z = z[:, np.asarray(rows), :]
    r = y - np.einsum("pnc,pc->n", z, model.gammas)
    sc = searcher.grid_scores(r)
    i = int(np.argmax(sc))
    pole = Pole(searcher.grid_alpha[i], searcher.grid_beta[i])
    return pole, searcher.exact_score(pole, r)
