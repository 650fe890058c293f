"""K-means, center agglomeration, and unit assignment."""

import itertools

import numpy as np
import pytest

from syllabion.clusterer import (ClustererError, Codebook, UnitSequence,
                                 agglomerate, assign_units, fit_codebook,
                                 kmeans, kmeans_inertia, _lloyd)
from syllabion.segmenter import PooledSegments, Segmentation


def brute_force_inertia(x: np.ndarray, k: int) -> float:
    """Global optimum by enumerating every assignment (tiny inputs only)."""
    best = np.inf
    for assign in itertools.product(range(k), repeat=x.shape[0]):
        a = np.array(assign)
        total = 0.0
        for c in range(k):
            pts = x[a == c]
            if len(pts):
                total += float(((pts - pts.mean(axis=0)) ** 2).sum())
        best = min(best, total)
    return best


def blobs(rng, means, n_per=20, scale=0.05):
    pts = np.vstack([m + rng.normal(0, scale, (n_per, len(m))) for m in means])
    labels = np.repeat(np.arange(len(means)), n_per)
    return pts, labels


# -- types ------------------------------------------------------------------------


def test_codebook_validation(rng):
    cb = Codebook(centers=rng.normal(size=(3, 2)), center_to_unit=[0, 1, 0])
    assert cb.n_units == 2
    with pytest.raises(ClustererError, match="one entry per center"):
        Codebook(centers=rng.normal(size=(3, 2)), center_to_unit=[0, 1])
    with pytest.raises(ClustererError, match="out of range"):
        Codebook(centers=rng.normal(size=(2, 2)), center_to_unit=[0, 2])
    with pytest.raises(ClustererError, match="out of range"):
        Codebook(centers=rng.normal(size=(2, 2)), center_to_unit=[-1, 0])


def test_unit_sequence_validation():
    seq = UnitSequence(tokens=((0, 4, 7), (4, 9, 2)))
    assert list(seq.units()) == [7, 2]
    with pytest.raises(ClustererError, match="empty"):
        UnitSequence(tokens=((0, 0, 1),))
    with pytest.raises(ClustererError, match="contiguous"):
        UnitSequence(tokens=((0, 4, 1), (5, 9, 2)))


# -- k-means ------------------------------------------------------------------------


def test_kmeans_k_equals_n_is_exact(rng):
    x = rng.normal(size=(6, 3))
    centers, assign = kmeans(x, 6, seed=0, n_init=3)
    assert kmeans_inertia(x, centers, assign) < 1e-20
    assert sorted(assign) == list(range(6))


def test_kmeans_recovers_separated_blobs(rng):
    means = [np.array([0.0, 0.0]), np.array([5.0, 5.0]), np.array([-5.0, 5.0])]
    x, labels = blobs(rng, means)
    centers, assign = kmeans(x, 3, seed=0)
    # every blob maps to exactly one cluster
    for b in range(3):
        assert len(set(assign[labels == b])) == 1
    got = sorted(tuple(np.round(c, 1)) for c in centers)
    want = sorted(tuple(np.round(m, 1)) for m in means)
    assert np.allclose(got, want, atol=0.1)


def test_kmeans_matches_brute_force_on_tiny_inputs(rng):
    for _ in range(10):
        n = int(rng.integers(4, 9))
        k = int(rng.integers(2, 4))
        x = rng.normal(size=(n, 2))
        centers, assign = kmeans(x, k, seed=0, n_init=20, rel_tol=0.0)
        got = kmeans_inertia(x, centers, assign)
        best = brute_force_inertia(x, k)
        assert got <= best * (1 + 1e-9) + 1e-12


def test_lloyd_inertia_never_increases(rng):
    # rel_tol=0 disables early stopping so every iteration count is exercised
    for _ in range(50):
        n = int(rng.integers(8, 25))
        x = rng.normal(size=(n, int(rng.integers(2, 5))))
        k = int(rng.integers(2, 5))
        init = x[rng.choice(n, size=k, replace=False)].copy()
        seq = [_lloyd(x, init.copy(), it, rel_tol=0.0)[2] for it in range(1, 7)]
        for a, b in zip(seq, seq[1:]):
            assert b <= a + 1e-9 * max(1.0, abs(a))


def test_kmeans_deterministic(rng):
    x = rng.normal(size=(40, 3))
    a = kmeans(x, 5, seed=7)
    b = kmeans(x, 5, seed=7)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_kmeans_handles_duplicate_points():
    x = np.zeros((10, 2))
    x[5:] = 1.0
    centers, assign = kmeans(x, 4, seed=0, n_init=2)
    assert kmeans_inertia(x, centers, assign) < 1e-20


def test_kmeans_input_validation(rng):
    with pytest.raises(ClustererError, match="2-D"):
        kmeans(rng.normal(size=10), 2)
    with pytest.raises(ClustererError, match="at least"):
        kmeans(rng.normal(size=(3, 2)), 5)
    with pytest.raises(ClustererError, match="k1"):
        kmeans(rng.normal(size=(3, 2)), 0)


# -- agglomeration ---------------------------------------------------------------------


def test_agglomerate_identity_and_collapse(rng):
    centers = rng.normal(size=(5, 3))
    assert np.array_equal(agglomerate(centers, 5), np.arange(5))
    assert np.array_equal(agglomerate(centers, 1), np.zeros(5, dtype=np.int64))


def test_agglomerate_pairs_on_a_line():
    centers = np.array([[0.0], [0.1], [10.0], [10.2]])
    assert list(agglomerate(centers, 2)) == [0, 0, 1, 1]


def test_agglomerate_tie_prefers_lowest_pair():
    centers = np.array([[0.0], [1.0], [2.0]])
    assert list(agglomerate(centers, 2)) == [0, 0, 1]


def test_agglomerate_units_ordered_by_lowest_member():
    # groups form around indices (0,) (1, 3) (2,): ids follow lowest members
    centers = np.array([[0.0], [5.0], [-9.0], [5.1]])
    mapping = agglomerate(centers, 3)
    assert list(mapping) == [0, 1, 2, 1]


def test_agglomerate_average_linkage_uses_cluster_sizes():
    # trace: {0,1} merge at 1, then {0,1}+{5} at 4.5; the size-weighted
    # distance from {0,1,5} to 12 is the mean pairwise 10 (> 9.6), so the
    # last merge pairs 12 with 21.6; an unweighted update (9.25 < 9.6)
    # would absorb 12 into the left cluster instead
    centers = np.array([[0.0], [1.0], [5.0], [12.0], [21.6]])
    assert list(agglomerate(centers, 2)) == [0, 0, 0, 1, 1]


def test_agglomerate_k2_bounds(rng):
    centers = rng.normal(size=(4, 2))
    with pytest.raises(ClustererError, match="1..4"):
        agglomerate(centers, 0)
    with pytest.raises(ClustererError, match="1..4"):
        agglomerate(centers, 5)


# -- unit assignment --------------------------------------------------------------------


def _pooled(features):
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    bounds = np.arange(0, 3 * (n + 1), 3)
    seg = Segmentation(boundaries=bounds, n_frames=int(bounds[-1]))
    return PooledSegments(features=features, segmentation=seg)


def test_assign_units_nearest_center(rng):
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    cb = Codebook(centers=centers, center_to_unit=[1, 0, 1])
    pooled = _pooled([[0.1, 0.2], [9.8, 0.1], [0.0, 9.7], [0.2, 0.0]])
    seq = assign_units(pooled, cb)
    assert list(seq.units()) == [1, 0, 1, 1]
    assert seq.tokens[0] == (0, 3, 1)
    assert seq.tokens[3] == (9, 12, 1)


def test_assign_units_tie_goes_to_lowest_center():
    cb = Codebook(centers=np.array([[1.0], [-1.0]]), center_to_unit=[0, 1])
    seq = assign_units(_pooled([[0.0]]), cb)
    assert list(seq.units()) == [0]


def test_assign_units_dim_mismatch(rng):
    cb = Codebook(centers=rng.normal(size=(2, 3)), center_to_unit=[0, 1])
    with pytest.raises(ClustererError, match="dim"):
        assign_units(_pooled(rng.normal(size=(2, 4))), cb)


def test_fit_codebook_planted_units(rng):
    protos = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0]])
    x, labels = blobs(rng, list(protos), n_per=15, scale=0.1)
    cb = fit_codebook(x, k1=8, k2=4, seed=0, n_init=5)
    assert cb.n_units == 4
    units = cb.center_to_unit[np.argmin(
        ((x[:, None, :] - cb.centers[None]) ** 2).sum(axis=2), axis=1)]
    # each planted blob lands in exactly one unit, and units do not collide
    blob_units = [set(units[labels == b]) for b in range(4)]
    assert all(len(s) == 1 for s in blob_units)
    assert len(set.union(*blob_units)) == 4
