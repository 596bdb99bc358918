"""Locally linear topology vectors and the l1 topology distance.

Each descriptor is fitted as the best affine (sum-to-one) combination of its
k nearest neighbors; the fitted weights, scattered to the neighbors' batch
positions, form a sparse length-n topology vector. A quarter of the l1
distance between two such vectors is the topology distance.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DegenerateFitError, InvalidInputError
from .knn import top_k_within

# Fits whose normalizer 1' S^-1 1 is smaller than this are rejected.
NORMALIZER_FLOOR = 1e-300


@dataclass(frozen=True)
class LleWeights:
    """Affine-fit weights of one anchor over its k neighbors.

    Weights sum to one but are not sign-constrained; negative entries are
    legal and meaningful downstream.
    """

    anchor_index: int
    weights: np.ndarray
    residual: float


@dataclass(frozen=True)
class TopologyVector:
    """Sparse length-n vector holding fit weights at the neighbors' indices."""

    length: int
    support: np.ndarray
    values: np.ndarray

    def densify(self) -> np.ndarray:
        dense = np.zeros(self.length)
        dense[self.support] = self.values
        return dense


def fit_weights(
    anchor: np.ndarray,
    neighbors: np.ndarray,
    eps: float = linalg.DEFAULT_EPS,
    anchor_index: int = 0,
) -> LleWeights:
    """Best affine combination of the neighbors reconstructing the anchor.

    Minimizes ||anchor - sum_j w_j neighbor_j||^2 subject to sum_j w_j = 1,
    through the closed form w = S^-1 1 / (1' S^-1 1) where S is the Gram
    matrix of (anchor - neighbor_j) differences, conditioned per linalg.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    neighbors = np.asarray(neighbors, dtype=np.float64)
    if neighbors.ndim != 2 or anchor.ndim != 1 or neighbors.shape[1] != anchor.shape[0]:
        raise InvalidInputError(
            f"anchor of dim {anchor.shape} does not match neighbors {neighbors.shape}"
        )
    k = neighbors.shape[0]
    if k < 1:
        raise InvalidInputError("at least one neighbor is required")

    diffs = anchor[None, :] - neighbors
    s = linalg.gram(diffs)
    ones = np.ones(k)
    y = linalg.solve_spd_regularized(s, ones, eps).solution
    denom = float(ones @ y)
    if not np.isfinite(denom) or abs(denom) < NORMALIZER_FLOOR:
        raise DegenerateFitError(
            f"weight normalizer 1'S^-1'1 = {denom} for anchor {anchor_index}"
        )
    w = y / denom
    residual = linalg.l2_norm(anchor - w @ neighbors)
    return LleWeights(anchor_index=anchor_index, weights=w, residual=residual)


def topology_vector(
    weights: LleWeights, neighbor_indices: np.ndarray, n: int
) -> TopologyVector:
    """Scatter fit weights to their neighbors' batch positions."""
    idx = np.asarray(neighbor_indices)
    if idx.shape != weights.weights.shape:
        raise InvalidInputError(
            f"{idx.shape[0]} neighbor indices for {weights.weights.shape[0]} weights"
        )
    if len(np.unique(idx)) != idx.shape[0]:
        raise InvalidInputError(f"duplicate neighbor index in {idx.tolist()}")
    if idx.min() < 0 or idx.max() >= n:
        raise InvalidInputError(f"neighbor index out of range for batch size {n}")
    if np.any(idx == weights.anchor_index):
        raise InvalidInputError(
            f"anchor {weights.anchor_index} appears in its own neighbor list"
        )
    return TopologyVector(length=n, support=idx.copy(), values=weights.weights.copy())


def topology_distance(ta: TopologyVector, tp: TopologyVector) -> float:
    """Quarter of the l1 distance between two topology vectors.

    Evaluated over the union of the two supports, O(k) per pair; all
    off-support entries are zero by construction.
    """
    if ta.length != tp.length:
        raise InvalidInputError(
            f"topology vector lengths differ: {ta.length} vs {tp.length}"
        )
    union = np.union1d(ta.support, tp.support)
    a = np.zeros(union.shape[0])
    p = np.zeros(union.shape[0])
    a[np.searchsorted(union, ta.support)] = ta.values
    p[np.searchsorted(union, tp.support)] = tp.values
    return 0.25 * float(np.sum(np.abs(a - p)))


def batch_topology_vectors(
    x: np.ndarray, k: int, eps: float = linalg.DEFAULT_EPS, workers: int = 1
) -> list[TopologyVector]:
    """Topology vector of every descriptor within one set.

    Per-anchor fits are independent; with workers > 1 they run on a thread
    pool and are merged back by index, so the result does not depend on the
    worker count.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    neighbor_sets = top_k_within(x, k)

    def fit_one(i: int) -> TopologyVector:
        idx = neighbor_sets[i].neighbor_indices
        w = fit_weights(x[i], x[idx], eps, anchor_index=i)
        return topology_vector(w, idx, n)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fit_one, range(n)))
    return [fit_one(i) for i in range(n)]
