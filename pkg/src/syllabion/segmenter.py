"""Boundary discovery on frame representations.

Pipeline: dot-product self-similarity matrix, exact dynamic program for the
normalized min-cut objective over contiguous partitions, similarity-driven
merging of adjacent segments, and per-segment mean pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import FrameFeatures


class SegmenterError(ValueError):
    pass


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric nonnegative frame-affinity matrix W = Z Z^T - min(Z Z^T).

    nonneg_shift records the offset added to every entry (-min of the raw
    dot-product matrix), making the normalized-cut objective well defined.
    """

    matrix: np.ndarray
    nonneg_shift: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise SegmenterError("similarity matrix must be square and nonempty")
        if not np.allclose(m, m.T, atol=1e-5):
            raise SegmenterError("similarity matrix must be symmetric within 1e-5")
        if m.min() < -1e-9:
            raise SegmenterError("similarity entries must be nonnegative after shift")
        object.__setattr__(self, "matrix", m)

    @property
    def n_frames(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Segmentation:
    """Contiguous partition of [0, T) as boundary frames 0 = b_0 < ... < b_S = T."""

    boundaries: np.ndarray
    n_frames: int

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.int64)
        if b.size < 2 or b[0] != 0 or b[-1] != self.n_frames:
            raise SegmenterError("boundaries must start at 0 and end at n_frames")
        if np.any(np.diff(b) < 1):
            raise SegmenterError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def n_segments(self) -> int:
        return self.boundaries.size - 1

    def segments(self) -> list[tuple[int, int]]:
        b = self.boundaries
        return [(int(b[i]), int(b[i + 1])) for i in range(self.n_segments)]


@dataclass(frozen=True)
class PooledSegments:
    """Per-segment mean feature rows aligned with a Segmentation."""

    features: np.ndarray
    segmentation: Segmentation

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] != self.segmentation.n_segments:
            raise SegmenterError("pooled rows must match segment count")
        object.__setattr__(self, "features", f)


def self_similarity(z: FrameFeatures | np.ndarray) -> SimilarityMatrix:
    """A = Z Z^T shifted by -min(A) so every weight is nonnegative."""
    data = z.data if isinstance(z, FrameFeatures) else np.asarray(z)
    a = np.asarray(data, dtype=np.float64) @ np.asarray(data, dtype=np.float64).T
    a = 0.5 * (a + a.T)
    shift = -float(a.min())
    return SimilarityMatrix(matrix=a + shift, nonneg_shift=shift)


def num_segments(duration: float, second_per_syllable: float = 0.2) -> int:
    """Initial segment budget: duration / second-per-syllable, round half up,
    floored at one segment."""
    if duration <= 0:
        raise SegmenterError("duration must be positive")
    ratio = duration / second_per_syllable
    return max(1, int(np.floor(ratio + 0.5)))


def segment_cost_table(w: np.ndarray) -> np.ndarray:
    """K[a, b] = cut([a,b)) / vol([a,b)) for every frame span a < b, from 2-D
    prefix sums (O(T^2) total).

    cut(A_k) = sum of weights leaving the span, vol(A_k) = sum of all weights
    incident to it. Zero-volume spans cost 0 (they also cut nothing). Entries
    with a >= b are +inf.
    """
    w = np.asarray(w, dtype=np.float64)
    t = w.shape[0]
    p2 = np.zeros((t + 1, t + 1))
    p2[1:, 1:] = w.cumsum(axis=0).cumsum(axis=1)
    row_prefix = np.concatenate([[0.0], w.sum(axis=1).cumsum()])
    diag = np.diag(p2)
    a_idx = np.arange(t + 1)[:, None]
    b_idx = np.arange(t + 1)[None, :]
    vol = row_prefix[None, :] - row_prefix[:, None]
    within = (diag[None, :] + diag[:, None]) - 2.0 * p2
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = (vol - within) / vol
    cost[vol == 0.0] = 0.0
    cost[a_idx >= b_idx] = np.inf
    return cost


def mincut_segment(a: SimilarityMatrix, s: int) -> Segmentation:
    """Exact minimizer of sum_k cut(A_k)/vol(A_k) over contiguous partitions
    into s segments, by dynamic programming in O(s T^2).

    Ties resolved toward earlier boundaries: each argmin takes the first
    (smallest) split point, so backtracking yields the optimal partition
    whose rightmost differing boundary is earliest.
    """
    t = a.n_frames
    if not (1 <= s <= t):
        raise SegmenterError(f"segment count {s} must be in 1..{t}")
    k = segment_cost_table(a.matrix)
    best = k[0, :].copy()
    choices = []
    for _ in range(1, s):
        stacked = best[:, None] + k
        choice = np.argmin(stacked, axis=0)
        choices.append(choice)
        best = stacked[choice, np.arange(t + 1)]
    boundaries = [t]
    pos = t
    for choice in reversed(choices):
        pos = int(choice[pos])
        boundaries.append(pos)
    boundaries.append(0)
    return Segmentation(boundaries=np.array(boundaries[::-1]), n_frames=t)


def partition_objective(a: SimilarityMatrix | np.ndarray, boundaries) -> float:
    """Left-to-right sum of normalized-cut costs for the given partition.
    Uses the same cost table as the DP, so objectives compare exactly."""
    w = a.matrix if isinstance(a, SimilarityMatrix) else np.asarray(a)
    k = segment_cost_table(w)
    b = np.asarray(boundaries, dtype=np.int64)
    total = 0.0
    for lo, hi in zip(b[:-1], b[1:]):
        total = total + k[lo, hi]
    return float(total)


_COS_EPS = 1e-12


def _segment_means(z: np.ndarray, boundaries: np.ndarray) -> np.ndarray:
    return np.stack([z[lo:hi].mean(axis=0)
                     for lo, hi in zip(boundaries[:-1], boundaries[1:])])


def merge_adjacent(seg: Segmentation, z: FrameFeatures | np.ndarray,
                   threshold: float = 0.3) -> Segmentation:
    """Repeatedly merge the adjacent pair whose mean features have the highest
    cosine similarity, while that similarity exceeds the threshold. Means are
    recomputed after every merge."""
    data = np.asarray(z.data if isinstance(z, FrameFeatures) else z, dtype=np.float64)
    if seg.n_frames != data.shape[0]:
        raise SegmenterError("segmentation does not match feature length")
    bounds = list(seg.boundaries)
    means = list(_segment_means(data, seg.boundaries))
    while len(means) > 1:
        m = np.stack(means)
        norms = np.sqrt((m**2).sum(axis=1)) + _COS_EPS
        cos = (m[:-1] * m[1:]).sum(axis=1) / (norms[:-1] * norms[1:])
        pick = int(np.argmax(cos))
        if cos[pick] <= threshold:
            break
        lo, hi = bounds[pick], bounds[pick + 2]
        del bounds[pick + 1]
        means[pick] = data[lo:hi].mean(axis=0)
        del means[pick + 1]
    return Segmentation(boundaries=np.array(bounds), n_frames=seg.n_frames)


def pool_segments(seg: Segmentation, z: FrameFeatures | np.ndarray) -> PooledSegments:
    """Arithmetic mean of the frames inside each segment."""
    data = np.asarray(z.data if isinstance(z, FrameFeatures) else z, dtype=np.float64)
    if seg.n_frames != data.shape[0]:
        raise SegmenterError("segmentation does not match feature length")
    return PooledSegments(features=_segment_means(data, seg.boundaries),
                          segmentation=seg)


def boundaries_to_seconds(seg: Segmentation, frame_rate: float) -> np.ndarray:
    if frame_rate <= 0:
        raise SegmenterError("frame_rate must be positive")
    return seg.boundaries / float(frame_rate)


def segment_features(z: FrameFeatures, second_per_syllable: float = 0.2,
                     merge_threshold: float = 0.3) -> Segmentation:
    """Full boundary pass for one utterance: similarity, duration-budgeted
    min-cut, then adjacent merging."""
    duration = z.data.shape[0] / z.frame_rate
    s = min(num_segments(duration, second_per_syllable), z.data.shape[0])
    seg = mincut_segment(self_similarity(z), s)
    return merge_adjacent(seg, z, merge_threshold)
