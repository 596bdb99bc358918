"""Verification and retrieval quality measures over labeled distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidInputError
from .knn import pairwise_distances


@dataclass(frozen=True)
class LabeledDistance:
    """One scored pair: its descriptor distance and whether it truly matches."""

    distance: float
    is_match: bool


@dataclass(frozen=True)
class MetricReport:
    fpr95: float
    mAP: float
    n_pos: int
    n_neg: int


def fpr95(samples: list[LabeledDistance]) -> float:
    """Fraction of non-matches at or below the 95%-recall distance threshold.

    The threshold is the smallest distance t such that at least 95% of the
    matching pairs satisfy d <= t; equal distances all count, on both sides
    of the comparison. Requires at least one match and one non-match.
    """
    match = np.sort([s.distance for s in samples if s.is_match])
    non = np.asarray([s.distance for s in samples if not s.is_match])
    if match.size == 0 or non.size == 0:
        raise InvalidInputError(
            f"need both classes, got {match.size} matches and {non.size} non-matches"
        )
    # smallest m with m / n_pos >= 19/20, in exact integer arithmetic
    m = -((-19 * match.size) // 20)
    threshold = match[m - 1]
    return float(np.count_nonzero(non <= threshold)) / non.size


def retrieval_map(
    queries: np.ndarray, gallery: np.ndarray, ground_truth: np.ndarray
) -> float:
    """Mean of 1/rank of each query's single true gallery match.

    The gallery is sorted by ascending descriptor distance with ties broken
    toward the lower gallery index; the true match's 1-based position gives
    the query's average precision.
    """
    queries = np.asarray(queries)
    gallery = np.asarray(gallery)
    gt = np.asarray(ground_truth)
    if gt.ndim != 1 or gt.shape[0] != queries.shape[0]:
        raise InvalidInputError(
            f"need one ground-truth index per query, got {gt.shape} for {queries.shape[0]} queries"
        )
    if gt.size == 0:
        raise InvalidInputError("need at least one query")
    if gt.min() < 0 or gt.max() >= gallery.shape[0]:
        bad = int(np.flatnonzero((gt < 0) | (gt >= gallery.shape[0]))[0])
        raise InvalidInputError(
            f"query {bad} has ground-truth index {gt[bad]} outside the gallery"
        )
    dist = pairwise_distances(queries, gallery)
    ap = np.empty(gt.shape[0])
    for i in range(gt.shape[0]):
        order = np.argsort(dist[i], kind="stable")
        rank = int(np.flatnonzero(order == gt[i])[0]) + 1
        ap[i] = 1.0 / rank
    return float(ap.mean())


def verification_pairs(
    desc_a: np.ndarray,
    desc_p: np.ndarray,
    negatives_per_positive: int,
    rng: np.random.Generator,
) -> list[LabeledDistance]:
    """Matched pairs by index plus seeded random non-matching pairs.

    For each index i the pair (a_i, p_i) is a match; negatives_per_positive
    draws of j != i give non-matching (a_i, p_j) pairs.
    """
    desc_a = np.asarray(desc_a)
    desc_p = np.asarray(desc_p)
    if desc_a.shape != desc_p.shape:
        raise InvalidInputError(
            f"descriptor sets must match, got {desc_a.shape} vs {desc_p.shape}"
        )
    n = desc_a.shape[0]
    if n < 2:
        raise InvalidInputError(f"need at least 2 pairs to draw non-matches, got {n}")
    if negatives_per_positive < 1:
        raise InvalidArgumentError(
            f"negatives_per_positive must be >= 1, got {negatives_per_positive}"
        )
    dist = pairwise_distances(desc_a, desc_p)
    out = [LabeledDistance(float(dist[i, i]), True) for i in range(n)]
    for i in range(n):
        draws = rng.integers(0, n - 1, size=negatives_per_positive)
        draws = draws + (draws >= i)
        for j in draws:
            out.append(LabeledDistance(float(dist[i, int(j)]), False))
    return out


def evaluate_descriptors(
    desc_a: np.ndarray,
    desc_p: np.ndarray,
    negatives_per_positive: int,
    rng: np.random.Generator,
) -> MetricReport:
    """Bundle the verification and retrieval measures for one descriptor set.

    Retrieval uses each anchor descriptor as a query against the full
    positive-view gallery, with the same index as the single true match.
    """
    samples = verification_pairs(desc_a, desc_p, negatives_per_positive, rng)
    n_pos = sum(1 for s in samples if s.is_match)
    return MetricReport(
        fpr95=fpr95(samples),
        mAP=retrieval_map(desc_a, desc_p, np.arange(desc_a.shape[0])),
        n_pos=n_pos,
        n_neg=len(samples) - n_pos,
    )
