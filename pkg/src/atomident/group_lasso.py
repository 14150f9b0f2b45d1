"""Weighted group lasso with two-dimensional groups.

Minimises ``||y - sum_i Z_i g_i||^2 + 2 lam sum_i w_i ||g_i||`` by exact
cyclic block coordinate descent.  Each block is a 2x2 problem whose minimiser
is found from the eigendecomposition of the block Gram and a scalar
bisection on the block norm, so singular blocks (real poles, whose second
column is zero) need no special treatment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .lti_core import AtomicFeature, GroupCoefficients, Pole

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000


@dataclass(frozen=True)
class GroupLassoProblem:
    y: np.ndarray
    zetas: np.ndarray  # (p, N, 2)
    lam: float
    weights: np.ndarray = None
    poles: tuple = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        z = np.ascontiguousarray(self.zetas, dtype=float)
        if z.ndim != 3 or z.shape[2] != 2 or z.shape[1] != y.size:
            raise ValueError(f"features of shape {z.shape} do not match y of length {y.size}")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        w = np.ones(z.shape[0]) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (z.shape[0],) or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite, positive and one per group")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "zetas", z)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "weights", np.ascontiguousarray(w))
        if self.poles is not None:
            object.__setattr__(self, "poles", tuple(self.poles))

    @classmethod
    def from_features(cls, y, features: Sequence[AtomicFeature], lam, weights=None):
        zetas = np.array([f.zeta for f in features]).reshape(len(features), len(y), 2)
        return cls(y, zetas, lam, weights, tuple(f.pole for f in features))

    @property
    def p(self) -> int:
        return self.zetas.shape[0]

    @property
    def features(self) -> list[AtomicFeature]:
        poles = self.poles or (None,) * self.p
        return [AtomicFeature(pl, z) for pl, z in zip(poles, self.zetas)]

    def residual(self, gammas) -> np.ndarray:
        return self.y - np.einsum("pnc,pc->n", self.zetas, np.reshape(gammas, (self.p, 2)))

    def objective(self, gammas) -> float:
        g = np.reshape(gammas, (self.p, 2))
        r = self.residual(g)
        return float(r @ r + 2.0 * self.lam * np.sum(self.weights * np.hypot(g[:, 0], g[:, 1])))

    def restrict_rows(self, rows) -> "GroupLassoProblem":
        rows = np.asarray(rows)
        return GroupLassoProblem(self.y[rows], self.zetas[:, rows, :], self.lam, self.weights, self.poles)

    def with_weights(self, weights) -> "GroupLassoProblem":
        return GroupLassoProblem(self.y, self.zetas, self.lam, weights, self.poles)


@dataclass
class GroupLassoSolution:
    gammas: np.ndarray  # (p, 2)
    objective: float
    residual: np.ndarray
    kkt_violation: float
    iterations: int
    converged: bool
    per_group: np.ndarray = None
    history: np.ndarray = field(default=None, repr=False)

    @property
    def coefficients(self) -> list[GroupCoefficients]:
        return [GroupCoefficients(tuple(g)) for g in self.gammas]

    @property
    def norms(self) -> np.ndarray:
        return np.hypot(self.gammas[:, 0], self.gammas[:, 1])


class ConvergenceError(RuntimeError):
    """Inner solver stopped at ``max_iter``; ``solution`` holds the best iterate."""

    def __init__(self, message, solution=None, trace=None):
        super().__init__(message)
        self.solution = solution
        self.trace = trace


@njit(cache=True)
def _block_minimiser(a00, a01, a11, b0, b1, t):
    """argmin_g g'Ag - 2b'g + 2t||g|| for a 2x2 PSD ``A``."""
    nb = math.hypot(b0, b1)
    if nb <= t:
        return 0.0, 0.0
    half_tr = 0.5 * (a00 + a11)
    half_d = 0.5 * (a00 - a11)
    disc = math.hypot(half_d, a01)
    e1 = half_tr + disc
    e2 = max(half_tr - disc, 0.0)
    if e1 <= 0.0:
        return 0.0, 0.0
    if disc > 0.0:
        th = 0.5 * math.atan2(a01, half_d)
        c, s = math.cos(th), math.sin(th)
    else:
        c, s = 1.0, 0.0
    bt1 = c * b0 + s * b1
    bt2 = -s * b0 + c * b1
    if e2 <= 1e-13 * e1:
        # null direction of A; b has no component there up to rounding
        bt2 = 0.0
        e2 = 0.0
    if bt2 == 0.0:
        rho = (abs(bt1) - t) / e1
        if rho <= 0.0:
            return 0.0, 0.0
    elif bt1 == 0.0:
        rho = (abs(bt2) - t) / e2
        if rho <= 0.0:
            return 0.0, 0.0
    else:
        lo = 0.0
        hi = (nb - t) / e2
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            q1 = bt1 / (e1 * mid + t)
            q2 = bt2 / (e2 * mid + t)
            if q1 * q1 + q2 * q2 > 1.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * hi:
                break
        rho = 0.5 * (lo + hi)
    g1 = bt1 * rho / (e1 * rho + t)
    g2 = bt2 * rho / (e2 * rho + t)
    return c * g1 - s * g2, s * g1 + c * g2


@njit(cache=True)
def _objective(r, gam, w, lam):
    pen = 0.0
    for i in range(gam.shape[0]):
        pen += w[i] * math.hypot(gam[i, 0], gam[i, 1])
    return r @ r + 2.0 * lam * pen


@njit(cache=True)
def _kkt(Z, r, gam, w, lam, out):
    worst = 0.0
    for i in range(Z.shape[0]):
        c0 = 0.0
        c1 = 0.0
        for n in range(Z.shape[1]):
            c0 += Z[i, n, 0] * r[n]
            c1 += Z[i, n, 1] * r[n]
        nrm = math.hypot(gam[i, 0], gam[i, 1])
        t = lam * w[i]
        if nrm == 0.0:
            v = max(0.0, math.hypot(c0, c1) - t)
        else:
            v = math.hypot(c0 - t * gam[i, 0] / nrm, c1 - t * gam[i, 1] / nrm)
        out[i] = v
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _sweep(Z, gram, r, gam, w, lam, groups):
    """One exact pass over ``groups``; returns the largest output-scale change."""
    N = Z.shape[1]
    biggest = 0.0
    for i in groups:
        g0 = gam[i, 0]
        g1 = gam[i, 1]
        b0 = 0.0
        b1 = 0.0
        for n in range(N):
            b0 += Z[i, n, 0] * r[n]
            b1 += Z[i, n, 1] * r[n]
        # correlation with the residual that excludes group i
        b0 += gram[i, 0] * g0 + gram[i, 1] * g1
        b1 += gram[i, 1] * g0 + gram[i, 2] * g1
        n0, n1 = _block_minimiser(gram[i, 0], gram[i, 1], gram[i, 2], b0, b1, lam * w[i])
        d0 = n0 - g0
        d1 = n1 - g1
        if d0 != 0.0 or d1 != 0.0:
            for n in range(N):
                r[n] -= Z[i, n, 0] * d0 + Z[i, n, 1] * d1
            gam[i, 0] = n0
            gam[i, 1] = n1
            ch = math.sqrt(gram[i, 0] * d0 * d0 + 2.0 * gram[i, 1] * d0 * d1 + gram[i, 2] * d1 * d1)
            if ch > biggest:
                biggest = ch
    return biggest


@njit(cache=True)
def _bcd(Z, y, lam, w, gam, tol, max_iter, history):
    p = Z.shape[0]
    N = Z.shape[1]
    gram = np.zeros((p, 3))
    for i in range(p):
        for n in range(N):
            gram[i, 0] += Z[i, n, 0] * Z[i, n, 0]
            gram[i, 1] += Z[i, n, 0] * Z[i, n, 1]
            gram[i, 2] += Z[i, n, 1] * Z[i, n, 1]
    r = y.copy()
    for i in range(p):
        for n in range(N):
            r[n] -= Z[i, n, 0] * gam[i, 0] + Z[i, n, 1] * gam[i, 1]
    per_group = np.zeros(p)
    everyone = np.arange(p)
    history[0] = _objective(r, gam, w, lam)
    it = 0
    worst = _kkt(Z, r, gam, w, lam, per_group)
    while worst > tol and it < max_iter:
        _sweep(Z, gram, r, gam, w, lam, everyone)
        it += 1
        history[it] = _objective(r, gam, w, lam)
        # cycle on the current support until it settles, then re-check everyone
        n_act = 0
        for i in range(p):
            if gam[i, 0] != 0.0 or gam[i, 1] != 0.0:
                n_act += 1
        active = np.empty(n_act, dtype=np.int64)
        j = 0
        for i in range(p):
            if gam[i, 0] != 0.0 or gam[i, 1] != 0.0:
                active[j] = i
                j += 1
        while n_act > 0 and it < max_iter:
            change = _sweep(Z, gram, r, gam, w, lam, active)
            it += 1
            history[it] = _objective(r, gam, w, lam)
            if change <= 0.01 * tol:
                break
            if it % 64 == 0:
                if _kkt(Z, r, gam, w, lam, per_group) <= tol:
                    break
        # recompute the residual from scratch to stop drift
        for n in range(N):
            r[n] = y[n]
        for i in range(p):
            if gam[i, 0] != 0.0 or gam[i, 1] != 0.0:
                for n in range(N):
                    r[n] -= Z[i, n, 0] * gam[i, 0] + Z[i, n, 1] * gam[i, 1]
        worst = _kkt(Z, r, gam, w, lam, per_group)
    return r, it, worst, per_group


@njit(cache=True)
def _penalised(G, b, yy, t, x):
    pen = 0.0
    for j in range(t.size):
        pen += t[j] * math.hypot(x[2 * j], x[2 * j + 1])
    return yy - 2.0 * (b @ x) + x @ (G @ x) + 2.0 * pen


@njit(cache=True)
def _newton_core(G, b, yy, t, x, tol, max_steps):
    m = t.size
    keep = np.ones(m, dtype=np.bool_)
    fx = _penalised(G, b, yy, t, x)
    taken = 0
    for _ in range(max_steps):
        corr = b - G @ x
        dropped = False
        for j in range(m):
            if not keep[j]:
                continue
            o0 = corr[2 * j] + G[2 * j, 2 * j] * x[2 * j] + G[2 * j, 2 * j + 1] * x[2 * j + 1]
            o1 = corr[2 * j + 1] + G[2 * j + 1, 2 * j] * x[2 * j] + G[2 * j + 1, 2 * j + 1] * x[2 * j + 1]
            if math.hypot(o0, o1) <= t[j]:
                x[2 * j] = 0.0
                x[2 * j + 1] = 0.0
                keep[j] = False
                dropped = True
        if dropped:
            fx = _penalised(G, b, yy, t, x)
            continue
        idx = np.flatnonzero(keep)
        k = idx.size
        if k == 0:
            break
        cols = np.empty(2 * k, dtype=np.int64)
        for j in range(k):
            cols[2 * j] = 2 * idx[j]
            cols[2 * j + 1] = 2 * idx[j] + 1
        grad = np.empty(2 * k)
        H = np.empty((2 * k, 2 * k))
        for a in range(2 * k):
            for c in range(2 * k):
                H[a, c] = 2.0 * G[cols[a], cols[c]]
        worst = 0.0
        for j in range(k):
            i = idx[j]
            nrm = math.hypot(x[2 * i], x[2 * i + 1])
            u0 = x[2 * i] / nrm
            u1 = x[2 * i + 1] / nrm
            grad[2 * j] = -2.0 * corr[2 * i] + 2.0 * t[i] * u0
            grad[2 * j + 1] = -2.0 * corr[2 * i + 1] + 2.0 * t[i] * u1
            worst = max(worst, abs(grad[2 * j]), abs(grad[2 * j + 1]))
            sc = 2.0 * t[i] / nrm
            H[2 * j, 2 * j] += sc * (1.0 - u0 * u0)
            H[2 * j, 2 * j + 1] -= sc * u0 * u1
            H[2 * j + 1, 2 * j] -= sc * u0 * u1
            H[2 * j + 1, 2 * j + 1] += sc * (1.0 - u1 * u1)
        if worst <= 0.2 * tol:
            break
        scale = 0.0
        for a in range(2 * k):
            scale = max(scale, H[a, a])
        accepted = False
        cand = x.copy()
        fc = fx
        # Levenberg-style damping: nearly collinear atoms make H close to singular
        for mu in (1e-12, 1e-9, 1e-6, 1e-3, 1.0):
            Hd = H.copy()
            for a in range(2 * k):
                Hd[a, a] += mu * scale
            step = -np.linalg.solve(Hd, grad)
            if not np.all(np.isfinite(step)):
                continue
            slope = grad @ step
            if not slope < 0:
                continue
            s = 1.0
            for _ in range(12):
                cand = x.copy()
                for a in range(2 * k):
                    cand[cols[a]] += s * step[a]
                fc = _penalised(G, b, yy, t, cand)
                if fc <= fx + 1e-4 * s * slope:
                    accepted = True
                    break
                s *= 0.5
            if accepted:
                break
        if not accepted:
            break
        x[:] = cand
        fx = fc
        taken += 1
    return taken


def _newton_polish(problem: GroupLassoProblem, gam: np.ndarray, tol: float, max_steps: int = 25) -> int:
    """Damped Newton on the current support, where the objective is smooth.

    Groups whose exact block minimiser is zero are dropped from the support
    before each step.  Steps are accepted only if they lower the objective,
    so descent stays monotone.  Returns the number of accepted steps.
    """
    act = np.flatnonzero((gam[:, 0] != 0) | (gam[:, 1] != 0))
    if act.size == 0:
        return 0
    Z = problem.zetas[act].transpose(1, 0, 2).reshape(problem.y.size, 2 * act.size)
    x = gam[act].reshape(-1).copy()
    taken = _newton_core(
        Z.T @ Z, Z.T @ problem.y, float(problem.y @ problem.y),
        problem.lam * problem.weights[act], x, float(tol), int(max_steps),
    )
    gam[act] = x.reshape(-1, 2)
    return taken


def solve(
    problem: GroupLassoProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init=None,
    track: bool = False,
    polish: bool = True,
) -> GroupLassoSolution:
    """Solve the weighted group lasso to a KKT violation of at most ``tol``.

    ``init`` warm-starts from given coefficients (shape ``(p, 2)``).  If
    ``max_iter`` sweeps pass first, the returned solution has
    ``converged=False`` and carries the last iterate.

    With ``polish`` on, block coordinate descent runs in bursts; between
    bursts a safeguarded Newton step on the support removes the slow
    zig-zag that strongly correlated atoms cause.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    p = problem.p
    gam = np.zeros((p, 2)) if init is None else np.array(init, dtype=float).reshape(p, 2)
    if p == 0:
        r = problem.y.copy()
        return GroupLassoSolution(gam, float(r @ r), r, 0.0, 0, True, np.zeros(0), np.array([r @ r]))
    burst = max_iter if not polish else 50
    hist = [np.array([problem.objective(gam)])]
    it = 0
    while True:
        n = min(burst, max_iter - it)
        buf = np.empty(n + 1)
        _, done, worst, per_group = _bcd(
            problem.zetas, problem.y, problem.lam, problem.weights, gam, float(tol), int(n), buf
        )
        it += done
        hist.append(buf[1 : done + 1])
        if worst <= tol or it >= max_iter:
            break
        if _newton_polish(problem, gam, tol):
            hist.append(np.array([problem.objective(gam)]))
    worst, per_group = kkt_violation(problem, gam)
    return GroupLassoSolution(
        gammas=gam,
        objective=problem.objective(gam),
        residual=problem.residual(gam),
        kkt_violation=float(worst),
        iterations=int(it),
        converged=bool(worst <= tol),
        per_group=per_group,
        history=np.concatenate(hist) if track else None,
    )


def kkt_violation(problem: GroupLassoProblem, gammas) -> tuple[float, np.ndarray]:
    """Per-group distance from the subgradient optimality conditions.

    Inactive groups need ``||Z_i' R|| <= lam w_i``; active groups need
    ``Z_i' R = lam w_i g_i / ||g_i||`` (the gradient of the squared loss is
    ``-2 Z_i' R``, hence the sign).
    """
    g = np.reshape(np.asarray(gammas, dtype=float), (problem.p, 2))
    if problem.p == 0:
        return 0.0, np.zeros(0)
    r = problem.residual(g)
    corr = np.einsum("pnc,n->pc", problem.zetas, r)
    t = problem.lam * problem.weights
    nrm = np.hypot(g[:, 0], g[:, 1])
    active = nrm > 0
    out = np.maximum(0.0, np.hypot(corr[:, 0], corr[:, 1]) - t)
    unit = g[active] / nrm[active, None]
    out[active] = np.linalg.norm(corr[active] - t[active, None] * unit, axis=1)
    return float(out.max()), out


def violation_score(feature, residual) -> float:
    """``||zeta' R||`` for one atom; accepts an AtomicFeature or a raw block."""
    zeta = feature.zeta if isinstance(feature, AtomicFeature) else np.asarray(feature)
    c = zeta.T @ np.asarray(residual, dtype=float)
    return float(math.hypot(c[0], c[1]))

