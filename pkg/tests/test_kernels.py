import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln

from propercal.errors import BandwidthNonPositive, DimensionMismatch, EmptyGrid, EmptyRow
from propercal.kernels import (
    DEFAULT_GRID,
    Binning,
    Dirichlet,
    LogWeightMatrix,
    bandwidth_loo_mle,
    bin_ids,
    build_log_weights,
    log_dirichlet_kernel,
    loo_log_likelihood,
)
from propercal.simplex import LabeledPredictions


def naive_dirichlet_density(x, center, h):
    a = np.asarray(center) / h + 1
    log_b = np.sum(gammaln(a)) - gammaln(np.sum(a))
    return math.exp(np.sum((a - 1) * np.log(x)) - log_b)


@pytest.mark.parametrize(
    "x, center, h, expected",
    [
        ((0.5, 0.5), (0.5, 0.5), 0.5, math.log(1.5)),
        ((1 / 3,) * 3, (1 / 3,) * 3, 1 / 3, math.log(120 / 27)),
    ],
)
def test_log_kernel_examples(x, center, h, expected):
    assert log_dirichlet_kernel(x, center, h) == pytest.approx(expected, abs=1e-12)


def test_log_kernel_matches_naive_density():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, c = rng.dirichlet(np.ones(4), size=2)
        h = rng.uniform(0.2, 2)
        assert math.exp(log_dirichlet_kernel(x, c, h)) == pytest.approx(
            naive_dirichlet_density(x, c, h), rel=1e-10)


def test_log_kernel_rejects_bad_input():
    with pytest.raises(BandwidthNonPositive):
        log_dirichlet_kernel((0.5, 0.5), (0.5, 0.5), 0.0)
    with pytest.raises(DimensionMismatch):
        log_dirichlet_kernel((0.5, 0.5), (0.2, 0.3, 0.5), 0.1)
    with pytest.raises(BandwidthNonPositive):
        Dirichlet(-1.0)


def test_log_kernel_finite_near_vertex():
    c = np.array([1 - 1e-9, 5e-10, 5e-10])
    for x in (c, np.array([0.0, 0.5, 0.5]), np.array([1.0, 0.0, 0.0])):
        assert np.isfinite(log_dirichlet_kernel(x, c, 1e-4))


@pytest.mark.parametrize("h", [0.1, 0.5])
def test_kernel_integrates_to_one(h):
    # uniform simplex samples have density 1 / vol = Gamma(K) = 2 for K = 3
    rng = np.random.default_rng(11)
    x = rng.dirichlet(np.ones(3), size=10**6)
    center = np.array([0.5, 0.3, 0.2])
    logk = (gammaln(3 + 1 / h) - gammaln(center / h + 1).sum()) + np.log(np.clip(x, 1e-300, 1)) @ center / h
    assert log_dirichlet_kernel(x[0], center, h) == pytest.approx(logk[0], abs=1e-9)
    mass = np.mean(np.exp(logk)) / 2.0
    assert abs(mass - 1) < 0.02


def test_weight_matrix_pairwise():
    probs = np.array([[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]])
    W = build_log_weights(probs, Dirichlet(0.5), exclude_diagonal=False).to_array()
    for h in range(3):
        for j in range(3):
            assert W[h, j] == pytest.approx(log_dirichlet_kernel(probs[h], probs[j], 0.5), abs=1e-12)


def test_weight_matrix_identical_points_symmetric():
    probs = np.array([[0.3, 0.7], [0.3, 0.7]])
    W = build_log_weights(probs, Dirichlet(0.1)).to_array()
    assert W[0, 1] == W[1, 0]
    assert np.all(np.isneginf(np.diag(W)))


def test_single_bin_weights_are_zero():
    probs = np.random.default_rng(0).dirichlet(np.ones(3), size=6)
    W = build_log_weights(probs, Binning(1), exclude_diagonal=False).to_array()
    np.testing.assert_array_equal(W, 0.0)


@pytest.mark.parametrize("kernel", [Dirichlet(0.05), Binning(4)], ids=["dirichlet", "binning"])
def test_excluded_diagonal_only_changes_diagonal(kernel):
    probs = np.random.default_rng(1).dirichlet(np.ones(3), size=40)
    probs[1] = probs[0]  # keep every bin populated twice at least for this pair
    full = LogWeightMatrix(probs, kernel, exclude_diagonal=False).to_array()
    loo = LogWeightMatrix(probs, kernel, exclude_diagonal=True).to_array()
    assert np.all(np.isneginf(np.diag(loo)))
    off = ~np.eye(40, dtype=bool)
    np.testing.assert_array_equal(full[off], loo[off])


def test_blocks_equal_full_matrix():
    probs = np.random.default_rng(2).dirichlet(np.ones(4), size=50)
    W = LogWeightMatrix(probs, Dirichlet(0.03), exclude_diagonal=True)
    stacked = np.vstack([b for _, _, b in W.blocks(rows=7)])
    np.testing.assert_allclose(stacked, W.to_array(), rtol=1e-13)


def test_materialisation_cap():
    probs = np.full((30, 2), 0.5)
    with pytest.raises(MemoryError):
        LogWeightMatrix(probs, Dirichlet(0.1), True, cap=10).to_array()


@settings(max_examples=50)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_binning_is_equivalence_relation(seed, bins):
    probs = np.random.default_rng(seed).dirichlet(np.ones(3), size=25)
    ids = bin_ids(probs, bins)
    same = ids[:, None] == ids[None, :]
    cells = np.minimum(np.floor(probs * bins), bins - 1)
    np.testing.assert_array_equal(same, (cells[:, None, :] == cells[None, :, :]).all(axis=2))
    assert np.all(np.diag(same)) and np.array_equal(same, same.T)
    # transitivity
    assert np.array_equal((same.astype(int) @ same.astype(int) > 0), same)


def test_value_one_goes_to_last_bin():
    assert np.array_equal(bin_ids(np.array([[1.0, 0.0], [0.99, 0.01]]), 10), [0, 0])


def test_binning_singleton_row_raises():
    probs = np.array([[0.05, 0.95], [0.06, 0.94], [0.9, 0.1]])
    with pytest.raises(EmptyRow) as info:
        build_log_weights(probs, Binning(10))
    assert info.value.row == 2


def naive_loo_loglik(probs, h):
    n = probs.shape[0]
    total = 0.0
    for a in range(n):
        dens = [naive_dirichlet_density(probs[a], probs[b], h) for b in range(n) if b != a]
        total += math.log(sum(dens) / (n - 1))
    return total


def test_loo_likelihood_matches_naive():
    probs = np.random.default_rng(4).dirichlet(np.ones(3) * 2, size=12)
    grid = [0.1, 0.3, 1.0]
    np.testing.assert_allclose(loo_log_likelihood(probs, grid),
                               [naive_loo_loglik(probs, h) for h in grid], rtol=1e-10)


def test_bandwidth_selection_examples():
    probs = np.random.default_rng(5).dirichlet(np.ones(3), size=30)
    assert bandwidth_loo_mle(probs, [0.01]) == 0.01
    assert bandwidth_loo_mle(probs, [0.02, 0.02]) == 0.02
    tight = np.array([0.3, 0.3, 0.4]) + np.random.default_rng(6).normal(0, 1e-7, (40, 3))
    tight /= tight.sum(axis=1, keepdims=True)
    assert bandwidth_loo_mle(tight) == min(DEFAULT_GRID)


def test_bandwidth_tie_prefers_smaller(monkeypatch):
    import propercal.kernels as K
    monkeypatch.setattr(K, "loo_log_likelihood", lambda data, grid: np.zeros(len(grid)))
    assert K.bandwidth_loo_mle(np.ones((3, 2)) / 2, [0.3, 0.1, 0.2]) == 0.1


def test_bandwidth_rejects_bad_grid():
    probs = np.full((4, 2), 0.5)
    with pytest.raises(EmptyGrid):
        bandwidth_loo_mle(probs, [])
    with pytest.raises(BandwidthNonPositive):
        bandwidth_loo_mle(probs, [0.1, -1.0])


def test_bandwidth_accepts_dataset():
    d = LabeledPredictions(np.random.default_rng(7).dirichlet(np.ones(2), size=20), np.arange(20) % 2)
    assert bandwidth_loo_mle(d) in DEFAULT_GRID
