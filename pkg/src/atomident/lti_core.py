"""Poles, first-order atoms, impulse responses, synthetic data and fit metrics.

Time indexing follows the usual one-based convention of the identification
literature, stored in zero-based arrays: ``g[0]`` is the output at time 1 for
a unit impulse applied at time 1.  All atoms are strictly causal, so
``g[0] == 0`` for every model built here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

#: Groups whose coefficient norm exceeds this are counted as active.
ACTIVITY_THRESHOLD = 1e-8

#: Largest admissible pole radius used when clamping searched poles.
ALPHA_MAX = 1.0 - 1e-9

BENCHMARK_NUM = (0.10884, 0.19513)
BENCHMARK_DEN = (1.0, -1.41833, 1.58939, -1.31608, 0.88642)
#: Truncation horizon for the benchmark impulse response.  The slowest pole
#: has modulus ~0.976, which leaves a relative tail energy of ~1e-13 here.
BENCHMARK_HORIZON = 600


class InvalidInputError(ValueError):
    """Raised for non-finite or malformed signals."""


class DegenerateReferenceError(ValueError):
    """Raised when a fit metric is requested against a constant reference."""


def make_rng(seed, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and a stream path.

    Distinct ``stream`` tuples give statistically independent generators for
    the same base seed, so sub-tasks never share random state.
    """
    entropy = [int(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class Pole:
    alpha: float
    beta: float

    def __post_init__(self):
        a, b = float(self.alpha), float(self.beta)
        if not (0.0 <= a < 1.0):
            raise ValueError(f"pole radius must lie in [0, 1), got {a!r}")
        if not (0.0 <= b <= math.pi):
            raise ValueError(f"pole angle must lie in [0, pi], got {b!r}")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def value(self) -> complex:
        return complex(self.alpha * math.cos(self.beta), self.alpha * math.sin(self.beta))

    @property
    def is_real(self) -> bool:
        return self.beta == 0.0 or self.beta == math.pi

    def conjugate_pair(self) -> list[complex]:
        k = self.value
        if self.is_real or self.alpha == 0.0:
            return [complex(k.real, 0.0)]
        return [k, k.conjugate()]


@dataclass(frozen=True)
class GroupCoefficients:
    gamma: tuple[float, float]

    def __post_init__(self):
        g = tuple(float(x) for x in self.gamma)
        if len(g) != 2 or not all(math.isfinite(x) for x in g):
            raise ValueError(f"group coefficients must be two finite reals, got {self.gamma!r}")
        object.__setattr__(self, "gamma", g)

    @property
    def norm(self) -> float:
        return math.hypot(*self.gamma)

    @property
    def complex(self) -> complex:
        return complex(*self.gamma)


@dataclass(frozen=True)
class AtomicFeature:
    """Real ``N x 2`` regressor block ``[2 Re(phi), -2 Im(phi)]`` of one atom."""

    pole: Pole
    zeta: np.ndarray


@dataclass
class SparseModel:
    terms: list[tuple[Pole, GroupCoefficients]] = field(default_factory=list)
    lambda_used: float = 0.0
    solver_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for pole, _ in self.terms:
            key = (pole.alpha, pole.beta)
            if key in seen:
                raise ValueError(f"duplicate pole {key}")
            seen.add(key)

    @classmethod
    def from_arrays(cls, poles: Sequence[Pole], gammas, lambda_used=0.0, **stats) -> "SparseModel":
        gammas = np.asarray(gammas, dtype=float).reshape(len(poles), 2)
        terms = [(p, GroupCoefficients(tuple(g))) for p, g in zip(poles, gammas)]
        return cls(terms, float(lambda_used), dict(stats))

    @property
    def poles(self) -> list[Pole]:
        return [p for p, _ in self.terms]

    @property
    def gammas(self) -> np.ndarray:
        if not self.terms:
            return np.zeros((0, 2))
        return np.array([c.gamma for _, c in self.terms])

    def active_terms(self, threshold: float = ACTIVITY_THRESHOLD):
        return [(p, c) for p, c in self.terms if c.norm > threshold]

    def active_poles(self, threshold: float = ACTIVITY_THRESHOLD) -> list[Pole]:
        return [p for p, _ in self.active_terms(threshold)]

    def pole_locations(self, threshold: float = ACTIVITY_THRESHOLD) -> list[complex]:
        """Estimated pole set with conjugates made explicit."""
        out: list[complex] = []
        for p in self.active_poles(threshold):
            out.extend(p.conjugate_pair())
        return out

    def order(self, threshold: float = ACTIVITY_THRESHOLD) -> int:
        return len(self.pole_locations(threshold))


def _check_signal(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size < 1:
        raise InvalidInputError("input must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("input contains non-finite samples")
    return u


def atom_responses(alphas, betas, u) -> np.ndarray:
    """Responses of many atoms to one input, shape ``(P, N)`` complex.

    Each row runs ``phi(t) = k phi(t-1) + (1-|k|^2) u(t-1)`` from rest.
    """
    u = _check_signal(u)
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    k = alphas * np.exp(1j * betas)
    gain = 1.0 - alphas**2
    out = np.zeros((k.size, u.size), dtype=complex)
    for t in range(1, u.size):
        out[:, t] = k * out[:, t - 1] + gain * u[t - 1]
    return out


def atom_response(pole: Pole, u) -> np.ndarray:
    return atom_responses(pole.alpha, pole.beta, u)[0]


def zeta_from_response(phi: np.ndarray) -> np.ndarray:
    """Stack ``[2 Re(phi), -2 Im(phi)]`` along the last axis."""
    return np.stack([2.0 * phi.real, -2.0 * phi.imag], axis=-1)


def build_features(poles: Sequence[Pole], u) -> np.ndarray:
    """Regressor blocks for several poles, shape ``(p, N, 2)``."""
    u = _check_signal(u)
    if len(poles) == 0:
        return np.zeros((0, u.size, 2))
    alphas = [p.alpha for p in poles]
    betas = [p.beta for p in poles]
    z = zeta_from_response(atom_responses(alphas, betas, u))
    # exact zeros for real poles; sin(pi) is not zero in floating point
    real = np.array([p.is_real for p in poles])
    z[real, :, 1] = 0.0
    return z


def build_feature(pole: Pole, u) -> AtomicFeature:
    return AtomicFeature(pole, build_features([pole], u)[0])


def model_impulse_response(model: SparseModel, horizon: int) -> np.ndarray:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    g = np.zeros(horizon)
    lags = np.arange(horizon - 1)
    for pole, coef in model.terms:
        if horizon == 1:
            break
        # 2 Re(c a k^n) with everything in real polar form
        a, b = pole.alpha, pole.beta
        gr, gi = coef.gamma
        mag = (1.0 - a * a) * a**lags
        ang = b * lags
        g[1:] += 2.0 * mag * (gr * np.cos(ang) - gi * np.sin(ang))
    return g


def simulate_model(model: SparseModel, u) -> np.ndarray:
    """Output of the model to ``u`` from rest."""
    u = _check_signal(u)
    poles = model.poles
    if not poles:
        return np.zeros(u.size)
    z = build_features(poles, u)
    return np.einsum("pnc,pc->n", z, model.gammas)


def transfer_impulse_response(num, den, horizon: int, normalize: bool = True) -> np.ndarray:
    """Impulse response of ``num(q) / den(q)`` (descending powers of ``q``).

    The impulse enters at the first sample, so a relative degree ``d`` puts
    the first nonzero output at index ``d``.  With ``normalize`` the response
    is scaled to unit energy over ``max(horizon, BENCHMARK_HORIZON)`` samples.
    """
    num = np.trim_zeros(np.asarray(num, dtype=float), "f")
    den = np.trim_zeros(np.asarray(den, dtype=float), "f")
    if den.size == 0 or num.size > den.size:
        raise InvalidInputError("need a proper transfer function with nonzero denominator")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    b = np.concatenate([np.zeros(den.size - num.size), num]) / den[0]
    a = den / den[0]
    g = np.zeros(max(horizon, BENCHMARK_HORIZON))
    for t in range(g.size):
        acc = b[t] if t < b.size else 0.0
        for i in range(1, min(t, a.size - 1) + 1):
            acc -= a[i] * g[t - i]
        g[t] = acc
    if normalize:
        energy = math.sqrt(np.sum(g**2))
        if not energy > 0:
            raise DegenerateReferenceError("system has a zero impulse response")
        g /= energy
    return g[:horizon].copy()


def benchmark_system(horizon: int = BENCHMARK_HORIZON) -> np.ndarray:
    """Impulse response of the fourth-order benchmark, scaled to unit energy."""
    return transfer_impulse_response(BENCHMARK_NUM, BENCHMARK_DEN, horizon)


@dataclass(frozen=True)
class IdentDataset:
    u: np.ndarray
    y: np.ndarray
    sigma2: float = 0.0

    def __post_init__(self):
        u = _check_signal(self.u)
        y = _check_signal(self.y)
        if u.shape != y.shape:
            raise InvalidInputError(f"u and y lengths differ: {u.size} vs {y.size}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def N(self) -> int:
        return self.u.size

    def to_csv(self, path):
        write_columns(path, {"t": np.arange(1, self.N + 1), "u": self.u, "y": self.y})

    @classmethod
    def from_csv(cls, path, sigma2: float = 0.0) -> "IdentDataset":
        cols = read_columns(path)
        return cls(cols["u"], cols["y"], sigma2)


def convolve_causal(g, u) -> np.ndarray:
    """``y(t) = sum_s g(s) u(t-s+1)``, truncated to ``len(u)`` samples."""
    g = np.asarray(g, dtype=float)
    u = np.asarray(u, dtype=float)
    return np.convolve(g, u)[: u.size]


def generate_dataset(g_true, N: int, sigma2: float, seed) -> IdentDataset:
    if N < 1:
        raise ValueError("N must be >= 1")
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    rng = make_rng(seed, 0)
    u = rng.standard_normal(N)
    v = rng.standard_normal(N) * math.sqrt(sigma2)
    return IdentDataset(u, convolve_causal(g_true, u) + v, float(sigma2))


def fit_metric(g_true, g_hat) -> float:
    """Impulse-response fit percentage; 100 is a perfect match.

    Both vectors are taken as the full set of lags to compare.
    """
    g = np.asarray(g_true, dtype=float)
    gh = np.asarray(g_hat, dtype=float)
    if g.shape != gh.shape:
        raise ValueError(f"length mismatch: {g.shape} vs {gh.shape}")
    den = np.sum((g - g.mean()) ** 2)
    if not den > 0:
        raise DegenerateReferenceError("reference impulse response is constant")
    return 100.0 * (1.0 - math.sqrt(np.sum((g - gh) ** 2) / den))


def bias_variance_mse(g_true, g_hat_runs) -> tuple[float, float, float]:
    """Summed-over-lags squared bias, variance and MSE across runs."""
    g = np.asarray(g_true, dtype=float)
    runs = np.asarray(g_hat_runs, dtype=float)
    if runs.ndim != 2 or runs.shape[0] < 2:
        raise ValueError("need at least two runs")
    if runs.shape[1] != g.size:
        raise ValueError(f"length mismatch: {runs.shape[1]} vs {g.size}")
    m = runs.mean(axis=0)
    bias2 = float(np.sum((m - g) ** 2))
    var = float(np.mean(np.sum((runs - m) ** 2, axis=1)))
    return bias2, var, bias2 + var


def write_columns(path, columns: dict[str, Iterable]):
    names = list(columns)
    data = [list(columns[n]) for n in names]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([format_number(x) for x in row])


def read_columns(path) -> dict[str, np.ndarray]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for i, h in enumerate(header):
        col = [r[i] for r in body]
        try:
            out[h] = np.array([float(x) for x in col])
        except ValueError:
            out[h] = np.array(col)
    return out


def format_number(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)
