import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atomident import group_lasso as gl
from atomident.greedy_atoms import GreedyConfig, init_atoms, run_greedy
from atomident.lti_core import (
    ACTIVITY_THRESHOLD,
    IdentDataset,
    Pole,
    benchmark_system,
    build_features,
    generate_dataset,
    make_rng,
)
from atomident.sparse_refine import (
    AdaptiveConfig,
    SelectionFrequencies,
    StabilityConfig,
    adaptive_refine,
    complementary_pairs,
    ls_refit,
    stability_select,
)


@pytest.fixture(scope="module")
def noisy_fit():
    data = generate_dataset(benchmark_system(), 60, 0.1, 31)
    model, _ = run_greedy(data, GreedyConfig(lam=0.5, p0=10, seed=31))
    return data, model


# ---------------------------------------------------------------- adaptive


def test_zero_start_is_a_fixed_point(noisy_fit):
    data, model = noisy_fit
    out = adaptive_refine(data, model.poles, np.zeros_like(model.gammas), AdaptiveConfig(0.5))
    assert np.all(out.gammas == 0.0)


def test_dominant_group_norm_grows(monkeypatch):
    # one orthonormal group: the group lasso solution is a soft threshold
    rng = make_rng(32)
    Q, _ = np.linalg.qr(rng.standard_normal((40, 2)))
    u = rng.standard_normal(40)
    y = Q @ np.array([3.0, -4.0])
    lam = 1.0
    g0 = gl.solve(gl.GroupLassoProblem(y, Q[None], lam)).gammas
    assert math.isclose(np.linalg.norm(g0), 5.0 - lam, rel_tol=1e-9)
    # feed Q in as the only atom block
    monkeypatch.setattr("atomident.sparse_refine.build_features", lambda poles, u: Q[None])
    out = adaptive_refine(IdentDataset(u, y), [Pole(0.5, 1.0)], g0, AdaptiveConfig(lam, m_s=1))
    w = 1.0 / (np.linalg.norm(g0) + 1e-5)
    assert math.isclose(np.linalg.norm(out.gammas), 5.0 - lam * w, rel_tol=1e-9)
    assert np.linalg.norm(out.gammas) >= np.linalg.norm(g0)


def test_active_counts_never_increase(noisy_fit):
    data, model = noisy_fit
    out = adaptive_refine(data, model.poles, model.gammas, AdaptiveConfig(0.5, m_s=4))
    counts = out.solver_stats["active_counts"]
    assert len(counts) == 5
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_reweighting_settles(noisy_fit):
    data, model = noisy_fit
    cfg = AdaptiveConfig(0.5, m_s=12)
    a = adaptive_refine(data, model.poles, model.gammas, cfg)
    b = adaptive_refine(data, model.poles, a.gammas, AdaptiveConfig(0.5, m_s=1))
    assert abs(a.solver_stats["objective"] - b.solver_stats["objective"]) <= 1e-6 * a.solver_stats["objective"]


def test_adaptive_keeps_the_atom_set(noisy_fit):
    data, model = noisy_fit
    out = adaptive_refine(data, model.poles, model.gammas, AdaptiveConfig(0.5))
    assert out.poles == model.poles


def test_adaptive_config_validation():
    with pytest.raises(ValueError):
        AdaptiveConfig(0.5, m_s=0)
    with pytest.raises(ValueError):
        AdaptiveConfig(0.5, eps_prime=0.0)


# ---------------------------------------------------------------- stability


def test_complementary_pairs_partition():
    for b, bbar in complementary_pairs(11, 5, 3):
        assert b.size == 5 and bbar.size == 6
        assert np.array_equal(np.sort(np.concatenate([b, bbar])), np.arange(11))
        assert np.all(np.diff(b) > 0)


def test_tau_one_single_pair_is_intersection(noisy_fit):
    data, model = noisy_fit
    cfg = StabilityConfig(lambda_fixed=0.3, tau=1.0, n_s=1, seed=4)
    selected, freqs = stability_select(data, model.poles, cfg)
    [(b, bbar)] = complementary_pairs(data.N, 1, 4)
    z = build_features(model.poles, data.u)
    sets = []
    for rows in (b, bbar):
        sol = gl.solve(gl.GroupLassoProblem(data.y[rows], z[:, rows, :], 0.3))
        sets.append({p for p, n in zip(model.poles, sol.norms) if n > ACTIVITY_THRESHOLD})
    assert set(selected) == sets[0] & sets[1]


def test_true_atom_always_selected(first_order):
    pole, _, data = first_order
    atoms = [pole] + init_atoms(5, 8)
    selected, freqs = stability_select(data, atoms, StabilityConfig(lambda_fixed=1e-3, n_s=10, seed=1))
    assert freqs.frequencies[0] == 1.0
    assert pole in selected


def test_frequencies_are_counts_over_two_n_s(noisy_fit):
    data, model = noisy_fit
    n_s = 7
    _, freqs = stability_select(data, model.poles, StabilityConfig(n_s=n_s, seed=5))
    f = freqs.frequencies
    assert np.all((f >= 0) & (f <= 1))
    np.testing.assert_allclose(f * 2 * n_s, np.round(f * 2 * n_s), atol=1e-12)


@given(st.floats(0.51, 1.0), st.floats(0.51, 1.0))
def test_higher_threshold_selects_subset(t1, t2):
    lo, hi = sorted((t1, t2))
    freqs = SelectionFrequencies([Pole(0.1 * i, 0.2) for i in range(6)], np.array([0, 3, 5, 8, 9, 10]), 5)
    assert set(freqs.selected(hi)) <= set(freqs.selected(lo))


def test_stability_is_deterministic(noisy_fit):
    data, model = noisy_fit
    cfg = StabilityConfig(n_s=4, seed=6)
    a = stability_select(data, model.poles, cfg)[1].counts
    b = stability_select(data, model.poles, cfg)[1].counts
    np.testing.assert_array_equal(a, b)


def test_failed_subsample_counts_as_empty(noisy_fit):
    data, model = noisy_fit
    cfg = StabilityConfig(lambda_fixed=0.01, n_s=2, seed=7, max_iter=1)
    _, freqs = stability_select(data, model.poles, cfg)
    assert freqs.failed
    assert freqs.n_s == 2 and np.all(freqs.frequencies <= 1)


def test_frequencies_csv(tmp_path):
    freqs = SelectionFrequencies([Pole(0.5, 1.0)], np.array([3.0]), 2)
    freqs.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "alpha,beta,frequency"
    assert lines[1] == "0.5,1,0.75"


def test_stability_config_validation():
    with pytest.raises(ValueError):
        StabilityConfig(tau=0.5)
    with pytest.raises(ValueError):
        StabilityConfig(n_s=0)


# ---------------------------------------------------------------- least squares


def test_refit_exact_for_true_atoms():
    rng = make_rng(40)
    poles = [Pole(0.9, 0.5), Pole(0.6, 0.0)]
    u = rng.standard_normal(70)
    y = np.einsum("pnc,pc->n", build_features(poles, u), np.array([[0.7, -0.2], [0.4, 0.0]]))
    m = ls_refit(IdentDataset(u, y), poles)
    assert m.solver_stats["residual_norm"] <= 1e-8


def test_refit_empty_selection():
    y = make_rng(41).standard_normal(10)
    m = ls_refit(IdentDataset(np.ones(10), y), [])
    assert m.poles == [] and math.isclose(m.solver_stats["residual_norm"], np.linalg.norm(y))


def test_refit_matches_normal_equations():
    rng = make_rng(42)
    u, y = rng.standard_normal((2, 50))
    while True:
        # the oracle is only meaningful on a well conditioned design
        poles = [Pole(rng.uniform(0, 0.9), rng.uniform(0.1, 3.0)) for _ in range(4)]
        A = build_features(poles, u).transpose(1, 0, 2).reshape(50, 8)
        if np.linalg.cond(A) < 1e3:
            break
    m = ls_refit(IdentDataset(u, y), poles)
    coef = np.linalg.solve(A.T @ A, A.T @ y)
    np.testing.assert_allclose(m.gammas.ravel(), coef, rtol=1e-8, atol=1e-8)
    r = y - A @ m.gammas.ravel()
    assert np.linalg.norm(A.T @ r) <= 1e-8 * np.linalg.norm(A) * np.linalg.norm(y)


def test_refit_rank_deficient_real_pole_is_minimum_norm():
    rng = make_rng(43)
    u, y = rng.standard_normal((2, 30))
    m = ls_refit(IdentDataset(u, y), [Pole(0.4, 0.0)])
    assert m.gammas[0, 1] == 0.0
