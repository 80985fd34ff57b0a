from __future__ import annotations

from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gistkit.deepcluster.cluster import _lloyd, _plusplus, ari, assign, kmeans, silhouette

from oracles import ari_oracle


def _brute_force_2(X):
    """Minimum-inertia 2-partition by enumerating every labelling."""
    best, best_lab = np.inf, None
    for bits in product((0, 1), repeat=len(X)):
        lab = np.array(bits)
        if lab.min() == lab.max():
            continue
        inertia = sum(((X[lab == c] - X[lab == c].mean(axis=0)) ** 2).sum() for c in (0, 1))
        if inertia < best - 1e-12:
            best, best_lab = inertia, lab
    return best, best_lab


def test_two_point_masses():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 0.01, (5, 2)), rng.normal(10, 0.01, (5, 2))])
    res = kmeans(X, 2, seed=1)
    best, lab = _brute_force_2(X)
    assert ari(res.labels, lab) == 1.0
    assert res.inertia == pytest.approx(best, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_matches_brute_force_on_small_sets(seed):
    X = np.random.default_rng(seed).normal(size=(9, 2))
    best, _ = _brute_force_2(X)
    assert kmeans(X, 2, seed=seed).inertia == pytest.approx(best, rel=1e-9)


def test_k_equals_n_zero_inertia():
    X = np.random.default_rng(3).normal(size=(6, 3))
    assert kmeans(X, 6).inertia == pytest.approx(0.0, abs=1e-20)


def test_duplicates_k1():
    X = np.tile([1.5, -2.0], (7, 1))
    res = kmeans(X, 1)
    assert np.array_equal(res.centroids[0], [1.5, -2.0])
    assert res.inertia == 0.0


def test_invalid_k():
    X = np.zeros((3, 2))
    with pytest.raises(ValueError):
        kmeans(X, 0)
    with pytest.raises(ValueError):
        kmeans(X, 4)


def test_every_cluster_non_empty():
    X = np.vstack([np.zeros((20, 2)), np.ones((1, 2)) * 5])
    res = kmeans(X, 3, seed=0)
    assert len(np.unique(res.labels)) == 3


def test_empty_cluster_repair():
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    res = _lloyd(X, np.array([[0.05], [5.0], [100.0]]), 100)
    assert sorted(np.bincount(res.labels, minlength=3)) == [1, 1, 2]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_lloyd_monotone(seed, k):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 3))
    res = _lloyd(X, _plusplus(X, k, rng), 300)
    h = np.array(res.history)
    assert (np.diff(h) <= 1e-9 * max(1.0, h[0])).all()


def test_seed_determinism():
    X = np.random.default_rng(5).normal(size=(200, 4))
    a, b = kmeans(X, 4, seed=11), kmeans(X, 4, seed=11)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.centroids, b.centroids)


def test_assign_first_on_ties():
    assert assign(np.array([[0.5]]), np.array([[0.0], [1.0]]))[0] == 0


def test_silhouette_two_masses():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 0.05, (20, 2)), rng.normal(20, 0.05, (20, 2))])
    assert silhouette(X, np.repeat([0, 1], 20)) >= 0.9


def test_silhouette_identical_points():
    assert silhouette(np.zeros((6, 2)), np.array([0, 0, 0, 1, 1, 1])) == 0.0


def test_silhouette_single_cluster_error():
    with pytest.raises(ValueError):
        silhouette(np.zeros((4, 2)), np.zeros(4, dtype=int))


def test_silhouette_hand_value():
    X = np.array([[0.0], [1.0], [4.0], [5.0]])
    lab = np.array([0, 0, 1, 1])
    # a = 1 for every point; b = mean distance to the other pair
    b = np.array([4.5, 3.5, 3.5, 4.5])
    assert silhouette(X, lab) == pytest.approx(np.mean((b - 1) / b))


def test_fast_equals_full_below_cap():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 3))
    lab = kmeans(X, 3, seed=0).labels
    assert silhouette(X, lab, fast=True, cap=5000) == silhouette(X, lab)
    assert silhouette(X, lab, fast=True, cap=100, seed=1) != silhouette(X, lab)


def test_ari_examples():
    assert ari([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert ari([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        ari([0, 1], [0, 1, 1])


labelings = st.lists(st.integers(0, 4), min_size=2, max_size=40)


@settings(max_examples=100)
@given(labelings, st.data())
def test_ari_matches_oracle_and_permutation(a, data):
    b = data.draw(st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
    perm = data.draw(st.permutations(range(5)))
    assert ari(a, b) == pytest.approx(ari_oracle(a, b), abs=1e-12)
    assert ari([perm[x] for x in a], b) == pytest.approx(ari(a, b), abs=1e-12)
