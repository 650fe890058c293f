"""Evaluation suite: boundary detection scores with tolerance matching,
IoU-matched unit quality (purities and mutual information), speaker-normalized
mutual information, a linear speaker probe, and the per-layer sweep.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clusterer import UnitSequence, assign_units, fit_codebook
from .io import AlignmentEntry, FrameFeatures
from .neural import EncoderConfig, ParamStore, encoder_forward
from .segmenter import boundaries_to_seconds, pool_segments, segment_features


class EvaluatorError(ValueError):
    pass


# -- boundary metrics ----------------------------------------------------------


@dataclass(frozen=True)
class BoundaryScores:
    """Precision/recall/F1 and the R-value, all as fractions (reported x100).

    The R-value penalizes over-segmentation through OS = R/P - 1; it can go
    negative under extreme over-segmentation and is deliberately not clamped.
    """

    precision: float
    recall: float
    f1: float
    r_value: float

    def __post_init__(self):
        for name in ("precision", "recall", "f1"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise EvaluatorError(f"{name} must be in [0, 1], got {v}")


def match_boundaries(ref: list[float], hyp: list[float],
                     tol: float = 0.05) -> int:
    """One-to-one greedy matching of boundary times by increasing distance;
    pairs farther apart than tol never match. Returns the hit count.
    Callers exclude utterance-initial and final boundaries."""
    candidates = sorted(
        (abs(r - h), i, j)
        for i, r in enumerate(ref)
        for j, h in enumerate(hyp)
        if abs(r - h) <= tol
    )
    used_ref: set[int] = set()
    used_hyp: set[int] = set()
    hits = 0
    for _, i, j in candidates:
        if i in used_ref or j in used_hyp:
            continue
        used_ref.add(i)
        used_hyp.add(j)
        hits += 1
    return hits


def scores_from_pr(precision: float, recall: float) -> BoundaryScores:
    """Derived scores from precision and recall:
    F1 harmonic mean; R-value via OS = R/P - 1,
    r1 = sqrt((1-R)^2 + OS^2), r2 = (-OS + R - 1)/sqrt(2),
    Rval = 1 - (|r1| + |r2|)/2.
    """
    p, r = float(precision), float(recall)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    os_ratio = r / p - 1.0 if p > 0 else 0.0
    r1 = np.sqrt((1.0 - r) ** 2 + os_ratio**2)
    r2 = (-os_ratio + r - 1.0) / np.sqrt(2.0)
    r_value = 1.0 - (abs(r1) + abs(r2)) / 2.0
    return BoundaryScores(precision=p, recall=r, f1=f1, r_value=float(r_value))


def boundary_scores(hits: int, n_ref: int, n_hyp: int) -> BoundaryScores:
    if hits < 0 or n_ref < 0 or n_hyp < 0 or hits > n_ref or hits > n_hyp:
        raise EvaluatorError("need 0 <= hits <= n_ref, n_hyp")
    precision = hits / n_hyp if n_hyp > 0 else 0.0
    recall = hits / n_ref if n_ref > 0 else 0.0
    return scores_from_pr(precision, recall)


# -- unit quality ---------------------------------------------------------------


def iou_match(ref: list[tuple], hyp: list[tuple]) -> list[tuple]:
    """Maximum-weight matching between reference segments (start, end, label)
    and hypothesis segments (start, end, unit) under temporal IoU weights.
    Returns the matched (label, unit) pairs with IoU > 0."""
    if not ref or not hyp:
        return []
    iou = np.zeros((len(ref), len(hyp)))
    for i, (rs, re, _) in enumerate(ref):
        for j, (hs, he, _) in enumerate(hyp):
            inter = min(re, he) - max(rs, hs)
            if inter <= 0:
                continue
            union = max(re, he) - min(rs, hs)
            iou[i, j] = inter / union
    rows, cols = linear_sum_assignment(iou, maximize=True)
    return [(ref[i][2], hyp[j][2]) for i, j in zip(rows, cols) if iou[i, j] > 0]


class JointCounts:
    """Cooccurrence counts n(label, unit) over matched segment pairs."""

    def __init__(self):
        self.counts: Counter = Counter()
        self.total = 0

    def add(self, label, unit, count: int = 1) -> None:
        self.counts[(label, unit)] += count
        self.total += count

    def merge(self, other: "JointCounts") -> None:
        self.counts.update(other.counts)
        self.total += other.total

    def matrix(self) -> tuple[np.ndarray, list, list]:
        labels = sorted({s for s, _ in self.counts})
        units = sorted({u for _, u in self.counts})
        n = np.zeros((len(labels), len(units)))
        li = {s: i for i, s in enumerate(labels)}
        ui = {u: j for j, u in enumerate(units)}
        for (s, u), c in self.counts.items():
            n[li[s], ui[u]] = c
        return n, labels, units


def accumulate_joint(pairs) -> JointCounts:
    joint = JointCounts()
    for label, unit in pairs:
        joint.add(label, unit)
    if joint.total == 0:
        raise EvaluatorError("no matched pairs to accumulate")
    return joint


@dataclass(frozen=True)
class UnitQualityScores:
    """Syllable purity, cluster purity (fractions), mutual information (nats)."""

    syllable_purity: float
    cluster_purity: float
    mutual_info: float

    def __post_init__(self):
        if not (0.0 <= self.syllable_purity <= 1.0 + 1e-12):
            raise EvaluatorError("syllable_purity out of [0, 1]")
        if not (0.0 <= self.cluster_purity <= 1.0 + 1e-12):
            raise EvaluatorError("cluster_purity out of [0, 1]")
        if self.mutual_info < -1e-12:
            raise EvaluatorError("mutual information must be nonnegative")


def unit_quality(joint: JointCounts | np.ndarray) -> UnitQualityScores:
    """From the joint distribution p(s, u) of matched (syllable, unit) pairs:
    syllable purity = sum_u max_s p(s, u), cluster purity = sum_s max_u p(s, u),
    MI = sum p(s,u) log(p(s,u) / (p(s) p(u))) in nats with 0 log 0 := 0."""
    n = joint.matrix()[0] if isinstance(joint, JointCounts) else np.asarray(joint, dtype=np.float64)
    total = n.sum()
    if total <= 0:
        raise EvaluatorError("joint counts are empty")
    p = n / total
    syllable_purity = p.max(axis=0).sum()
    cluster_purity = p.max(axis=1).sum()
    ps = p.sum(axis=1, keepdims=True)
    pu = p.sum(axis=0, keepdims=True)
    mask = p > 0
    mi = float((p[mask] * np.log(p[mask] / (ps @ pu)[mask])).sum())
    return UnitQualityScores(syllable_purity=float(syllable_purity),
                             cluster_purity=float(cluster_purity),
                             mutual_info=max(0.0, mi))


# -- speaker metrics --------------------------------------------------------------


def _entropy(counts: np.ndarray) -> float:
    p = counts / counts.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def speaker_nmi(speakers, categories) -> float:
    """Speaker-normalized mutual information I(X; Y) / H(X): the fraction of
    speaker-identity uncertainty removed by knowing the category. Plug-in
    estimate in nats; 0 means speaker-free categories, 1 fully identifying."""
    x = list(speakers)
    y = list(categories)
    if len(x) != len(y) or not x:
        raise EvaluatorError("speakers and categories must be equal-length and nonempty")
    if len(set(x)) < 2:
        raise EvaluatorError("need at least 2 distinct speakers (H(X) = 0)")
    joint = JointCounts()
    for s, c in zip(x, y):
        joint.add(s, c)
    n = joint.matrix()[0]
    hx = _entropy(n.sum(axis=1))
    p = n / n.sum()
    ps = p.sum(axis=1, keepdims=True)
    pu = p.sum(axis=0, keepdims=True)
    mask = p > 0
    mi = float((p[mask] * np.log(p[mask] / (ps @ pu)[mask])).sum())
    return max(0.0, mi) / hx


def speaker_probe(train_x: np.ndarray, train_y, test_x: np.ndarray, test_y,
                  epochs: int = 300, lr: float = 0.5) -> float:
    """Linear speaker identification probe: multinomial logistic regression on
    (typically mean-pooled) utterance features, trained by full-batch gradient
    descent on standardized inputs. Returns test accuracy."""
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = list(train_y)
    test_y = list(test_y)
    if train_x.ndim != 2 or test_x.ndim != 2 or not train_y or not test_y:
        raise EvaluatorError("degenerate split: empty train or test set")
    if len(train_y) != train_x.shape[0] or len(test_y) != test_x.shape[0]:
        raise EvaluatorError("labels must match feature rows")
    classes = sorted(set(train_y))
    if len(classes) < 2:
        raise EvaluatorError("degenerate split: need >= 2 training classes")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[c] for c in train_y])
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0) + 1e-8
    xtr = (train_x - mu) / sd
    xte = (test_x - mu) / sd
    n, d = xtr.shape
    k = len(classes)
    w = np.zeros((d, k))
    b = np.zeros(k)
    onehot = np.eye(k)[y]
    for _ in range(epochs):
        logits = xtr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        grad = (probs - onehot) / n
        w -= lr * (xtr.T @ grad)
        b -= lr * grad.sum(axis=0)
    pred = np.argmax(xte @ w + b, axis=1)
    truth = np.array([index.get(c, -1) for c in test_y])
    return float((pred == truth).mean())


# -- corpus-level helpers -----------------------------------------------------------


def reference_boundaries(alignments: list[AlignmentEntry]) -> tuple[list[float], float]:
    """Interior boundary times from alignment entries: the union of entry
    starts and ends, excluding the utterance start (0) and the last end."""
    if not alignments:
        return [], 0.0
    end_time = max(a.end for a in alignments)
    points = sorted({t for a in alignments for t in (a.start, a.end)})
    return [t for t in points if 0.0 < t < end_time], end_time


def reference_segments(alignments: list[AlignmentEntry]) -> list[tuple]:
    return [(a.start, a.end, a.label) for a in alignments]


def unit_tokens_seconds(units: UnitSequence, frame_rate: float) -> list[tuple]:
    return [(s / frame_rate, e / frame_rate, u) for s, e, u in units.tokens]


@dataclass(frozen=True)
class UtteranceEval:
    """Per-utterance bundle handed to corpus scoring."""

    alignments: list
    units: UnitSequence
    frame_rate: float
    speaker_id: str = ""


def corpus_boundary_scores(utts: list[UtteranceEval],
                           tol: float = 0.05) -> BoundaryScores:
    """Micro-averaged boundary scores: hits and boundary counts accumulate
    over utterances before the precision/recall division."""
    hits = n_ref = n_hyp = 0
    for u in utts:
        ref, _ = reference_boundaries(u.alignments)
        bounds = [s for s, _, _ in u.units.tokens[1:]]
        hyp = [f / u.frame_rate for f in bounds]
        hits += match_boundaries(ref, hyp, tol)
        n_ref += len(ref)
        n_hyp += len(hyp)
    return boundary_scores(hits, n_ref, n_hyp)


def corpus_unit_quality(utts: list[UtteranceEval]) -> UnitQualityScores:
    joint = JointCounts()
    for u in utts:
        pairs = iou_match(reference_segments(u.alignments),
                          unit_tokens_seconds(u.units, u.frame_rate))
        for label, unit in pairs:
            joint.add(label, unit)
    return unit_quality(joint)


def corpus_speaker_nmi(utts: list[UtteranceEval]) -> float:
    speakers = []
    cats = []
    for u in utts:
        for _, _, unit in u.units.tokens:
            speakers.append(u.speaker_id)
            cats.append(unit)
    return speaker_nmi(speakers, cats)


def discover_units(features: list[FrameFeatures], k1: int, k2: int,
                   second_per_syllable: float = 0.2,
                   merge_threshold: float = 0.3, seed: int = 0,
                   n_init: int = 10) -> list[UnitSequence]:
    """Segment every utterance, fit one codebook on all pooled segments, and
    label each utterance's segments with discovered units."""
    pooled = []
    for z in features:
        seg = segment_features(z, second_per_syllable, merge_threshold)
        pooled.append(pool_segments(seg, z))
    stacked = np.concatenate([p.features for p in pooled], axis=0)
    k1 = min(k1, stacked.shape[0])
    k2 = min(k2, k1)
    codebook = fit_codebook(stacked, k1, k2, seed=seed, n_init=n_init)
    return [assign_units(p, codebook) for p in pooled]


def layer_sweep(store: ParamStore, encoder_cfg: EncoderConfig,
                features: list[FrameFeatures], alignments: list[list],
                speakers: list[str], layers: list[int], k1: int, k2: int,
                second_per_syllable: float = 0.2, merge_threshold: float = 0.3,
                tol: float = 0.05, seed: int = 0, n_init: int = 10,
                out_csv: str | Path | None = None) -> list[dict]:
    """Segment, cluster, and evaluate at each requested encoder depth; one
    result row per layer, optionally written as CSV."""
    rows = []
    for layer in layers:
        encoded = [FrameFeatures(
            data=encoder_forward(store, z.data, encoder_cfg, layer=layer),
            frame_rate=z.frame_rate) for z in features]
        units = discover_units(encoded, k1, k2, second_per_syllable,
                               merge_threshold, seed=seed, n_init=n_init)
        utts = [UtteranceEval(alignments=a, units=u, frame_rate=z.frame_rate,
                              speaker_id=s)
                for a, u, z, s in zip(alignments, units, encoded, speakers)]
        b = corpus_boundary_scores(utts, tol)
        q = corpus_unit_quality(utts)
        rows.append({
            "layer": layer,
            "precision": b.precision,
            "recall": b.recall,
            "f1": b.f1,
            "r_value": b.r_value,
            "syllable_purity": q.syllable_purity,
            "cluster_purity": q.cluster_purity,
            "mutual_info_nats": q.mutual_info,
        })
    if out_csv is not None:
        fields = list(rows[0].keys()) if rows else ["layer"]
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
    return rows
