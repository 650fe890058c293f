"""Two-step discretization of pooled segment features.

K-means compresses segment vectors to K1 centers; average-linkage
agglomeration then groups the centers into K2 units. Segments are labeled
by nearest center, mapped through the center-to-unit table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .segmenter import PooledSegments, Segmentation


class ClustererError(ValueError):
    pass


@dataclass(frozen=True)
class Codebook:
    """K1 x D centers plus the center-to-unit map produced by agglomeration."""

    centers: np.ndarray
    center_to_unit: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        m = np.asarray(self.center_to_unit, dtype=np.int64)
        if c.ndim != 2 or m.ndim != 1 or m.size != c.shape[0]:
            raise ClustererError("center-to-unit map must have one entry per center")
        if m.size and (m.min() < 0 or m.max() >= m.size):
            raise ClustererError("unit ids out of range")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "center_to_unit", m)

    @property
    def n_units(self) -> int:
        return int(self.center_to_unit.max()) + 1 if self.center_to_unit.size else 0


@dataclass(frozen=True)
class UnitSequence:
    """Ordered, contiguous (start_frame, end_frame, unit_id) tokens."""

    tokens: tuple

    def __post_init__(self):
        toks = tuple((int(s), int(e), int(u)) for s, e, u in self.tokens)
        for i, (s, e, _) in enumerate(toks):
            if e <= s:
                raise ClustererError(f"token {i} is empty")
            if i and s != toks[i - 1][1]:
                raise ClustererError(f"token {i} is not contiguous with its predecessor")
        object.__setattr__(self, "tokens", toks)

    def units(self) -> np.ndarray:
        return np.array([u for _, _, u in self.tokens], dtype=np.int64)


def _squared_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = x[rng.integers(n)]
            continue
        centers[i] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int,
           rel_tol: float) -> tuple[np.ndarray, np.ndarray, float]:
    k = centers.shape[0]
    prev_inertia = np.inf
    assign = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        d2 = _squared_distances(x, centers)
        assign = np.argmin(d2, axis=1)
        own = d2[np.arange(x.shape[0]), assign].copy()
        for empty in range(k):
            if np.any(assign == empty):
                continue
            # only points whose departure leaves their cluster nonempty
            counts = np.bincount(assign, minlength=k)
            candidates = np.where(counts[assign] > 1, own, -np.inf)
            far = int(np.argmax(candidates))
            centers[empty] = x[far]
            assign[far] = empty
            own[far] = -np.inf
        for c in range(k):
            centers[c] = x[assign == c].mean(axis=0)
        inertia = float(((x - centers[assign]) ** 2).sum())
        assert inertia <= prev_inertia + 1e-9 * max(1.0, abs(prev_inertia)), \
            "inertia increased across a Lloyd iteration"
        if prev_inertia - inertia < rel_tol * max(prev_inertia, 1e-12):
            prev_inertia = inertia
            break
        prev_inertia = inertia
    return centers, assign, prev_inertia


def kmeans(x: np.ndarray, k1: int, seed: int = 0, max_iter: int = 100,
           rel_tol: float = 1e-4, n_init: int = 10):
    """Seeded k-means: k-means++ initialization, Lloyd iterations until the
    relative inertia improvement drops below rel_tol, empty clusters reseeded
    with the point farthest from its center. The best of n_init restarts
    (lowest inertia, first wins ties) is returned as (centers, assignments).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ClustererError("kmeans input must be 2-D")
    if x.shape[0] < k1:
        raise ClustererError(f"need at least {k1} points, got {x.shape[0]}")
    if k1 < 1:
        raise ClustererError("k1 must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        init = _kmeans_pp_init(x, k1, rng)
        centers, assign, inertia = _lloyd(x, init, max_iter, rel_tol)
        if best is None or inertia < best[2]:
            best = (centers, assign, inertia)
    return best[0], best[1]


def kmeans_inertia(x: np.ndarray, centers: np.ndarray,
                   assign: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(((x - np.asarray(centers)[assign]) ** 2).sum())


def agglomerate(centers: np.ndarray, k2: int) -> np.ndarray:
    """Average-linkage (Euclidean) agglomeration of the centers down to k2
    clusters; returns the center-to-unit map.

    Each step merges the active pair at minimum average distance, ties broken
    by the lowest index pair; linkage updated by the size-weighted mean.
    Final unit ids follow ascending order of each cluster's lowest member.
    """
    centers = np.asarray(centers, dtype=np.float64)
    k1 = centers.shape[0]
    if not (1 <= k2 <= k1):
        raise ClustererError(f"k2 must be in 1..{k1}")
    d = np.sqrt(_squared_distances(centers, centers))
    np.fill_diagonal(d, np.inf)
    sizes = np.ones(k1)
    members: list[list[int] | None] = [[i] for i in range(k1)]
    for _ in range(k1 - k2):
        flat = int(np.argmin(d))
        i, j = sorted(divmod(flat, k1))
        merged = (sizes[i] * d[i] + sizes[j] * d[j]) / (sizes[i] + sizes[j])
        d[i] = merged
        d[:, i] = merged
        d[i, i] = np.inf
        d[j] = np.inf
        d[:, j] = np.inf
        sizes[i] += sizes[j]
        members[i].extend(members[j])
        members[j] = None
    mapping = np.full(k1, -1, dtype=np.int64)
    unit = 0
    for group in members:
        if group is None:
            continue
        for idx in group:
            mapping[idx] = unit
        unit += 1
    return mapping


def fit_codebook(x: np.ndarray, k1: int, k2: int, seed: int = 0,
                 max_iter: int = 100, rel_tol: float = 1e-4,
                 n_init: int = 10) -> Codebook:
    centers, _ = kmeans(x, k1, seed=seed, max_iter=max_iter, rel_tol=rel_tol,
                        n_init=n_init)
    return Codebook(centers=centers, center_to_unit=agglomerate(centers, k2))


def assign_units(pooled: PooledSegments, codebook: Codebook) -> UnitSequence:
    """Label each pooled segment with the unit of its nearest center
    (Euclidean; ties go to the lowest center index)."""
    x = pooled.features
    if x.shape[1] != codebook.centers.shape[1]:
        raise ClustererError(
            f"feature dim {x.shape[1]} does not match centers {codebook.centers.shape[1]}")
    nearest = np.argmin(_squared_distances(x, codebook.centers), axis=1)
    units = codebook.center_to_unit[nearest]
    bounds = pooled.segmentation.boundaries
    return UnitSequence(tokens=tuple(
        (int(bounds[i]), int(bounds[i + 1]), int(units[i]))
        for i in range(len(units))))
