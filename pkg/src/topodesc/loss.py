"""Triplet margin loss with hardest-in-batch negatives and a topology term.

The positive distance blends the Euclidean descriptor distance with a
neighborhood-structure distance under a batch-count schedule lambda; the
negative side is always plain Euclidean. Everything differentiable is built
on the autodiff tape so training and reporting share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import knn, linalg, topology
from .errors import DegenerateFitError, InvalidArgumentError, InvalidBatchError

GRADIENT_MODES = ("through-weights", "detached", "off")


@dataclass(frozen=True)
class LossConfig:
    """Margin, neighborhood size, schedule constants, and gradient routing.

    lambda_n0 is the sample count where the schedule starts decaying,
    lambda_N the decay interval, lambda_r the per-interval decrement, and
    lambda_floor the smallest blend value. topology_gradient_mode selects
    whether gradients flow through the affine fit ("through-weights"), treat
    the fitted weights as constants ("detached"), or skip the topology term
    entirely ("off").
    """

    margin: float = 1.0
    k: int = 20
    lambda_n0: int = 50_000
    lambda_N: int = 10_000
    lambda_r: float = 0.025
    lambda_floor: float = 0.5
    topology_gradient_mode: str = "through-weights"

    def __post_init__(self):
        if not self.margin > 0:
            raise InvalidArgumentError(f"margin must be positive, got {self.margin}")
        if self.k < 1:
            raise InvalidArgumentError(f"k must be >= 1, got {self.k}")
        if self.lambda_n0 < 0 or self.lambda_N < 1:
            raise InvalidArgumentError(
                f"schedule needs lambda_n0 >= 0 and lambda_N >= 1, got {self.lambda_n0}, {self.lambda_N}"
            )
        if not self.lambda_r > 0:
            raise InvalidArgumentError(f"lambda_r must be positive, got {self.lambda_r}")
        if not 0 < self.lambda_floor <= 1:
            raise InvalidArgumentError(f"lambda_floor must be in (0, 1], got {self.lambda_floor}")
        if self.topology_gradient_mode not in GRADIENT_MODES:
            raise InvalidArgumentError(
                f"topology_gradient_mode must be one of {GRADIENT_MODES}, "
                f"got {self.topology_gradient_mode!r}"
            )


@dataclass(frozen=True)
class LossReport:
    """Per-batch scalars logged at every iteration."""

    loss: float
    lam: float
    mean_d_pos_euclid: float
    mean_d_pos_topo: float
    mean_d_neg: float
    active_triplets: int


def lambda_schedule(iteration: int, cfg: LossConfig) -> float:
    """Piecewise-constant decay from 1.0 toward the floor.

    The blend stays at 1.0 for the first lambda_n0 iterations, then loses
    lambda_r for each further lambda_N iterations (rounded up), never going
    below lambda_floor. The step count is computed in exact integer
    arithmetic so schedule values are reproducible to the last bit.
    """
    if iteration < 0:
        raise InvalidArgumentError(f"iteration must be >= 0, got {iteration}")
    over = max(0, int(iteration) - int(cfg.lambda_n0))
    steps = -(-over // int(cfg.lambda_N))
    return max(1.0 - steps * cfg.lambda_r, cfg.lambda_floor)


def positive_distance(d_euclid: float, d_topo: float, lam: float) -> float:
    """Blend lam * d_euclid + (1 - lam) * d_topo; lam must lie in [0, 1]."""
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgumentError(f"lambda must be in [0, 1], got {lam}")
    return lam * d_euclid + (1.0 - lam) * d_topo


def hardest_negative(i: int, cross: np.ndarray) -> tuple[float, int, int]:
    """Smallest cross-set distance involving index i, excluding the match.

    cross[i, j] is the distance between anchor i and positive j. Returns
    (distance, anchor_row, positive_row) of the winning non-matching pair.
    Ties break toward the anchor's own row, then the lower index.
    """
    n = cross.shape[0]
    if n < 2:
        raise InvalidBatchError(f"need a batch of >= 2 to mine negatives, got {n}")
    if not 0 <= i < n:
        raise InvalidArgumentError(f"index {i} out of range for batch of {n}")
    row = cross[i].copy()
    row[i] = np.inf
    col = cross[:, i].copy()
    col[i] = np.inf
    j = int(np.argmin(row))
    m = int(np.argmin(col))
    if row[j] <= col[m]:
        return float(row[j]), i, j
    return float(col[m]), m, i


@dataclass
class LossStructure:
    """Discrete selections frozen before the differentiable pass.

    Holds the neighbor index matrices for both views, the mined negative
    pair per anchor, and the padded support-union gather matrices used to
    compare sparse topology vectors without indexing inside the graph.
    frozen_wa / frozen_wp, when set, replace the affine solve entirely (used
    by the finite-difference oracle for the detached mode).
    """

    n: int
    k: int
    neg_u: np.ndarray
    neg_v: np.ndarray
    idx_a: np.ndarray | None = None
    idx_p: np.ndarray | None = None
    gather_a: np.ndarray | None = None
    gather_p: np.ndarray | None = None
    frozen_wa: np.ndarray | None = None
    frozen_wp: np.ndarray | None = None


def _union_gathers(idx_a: np.ndarray, idx_p: np.ndarray, n: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Selection tensors mapping weight vectors onto each anchor's support union.

    Row m of gather_a[i] is the indicator of which neighbor slot of anchor i
    lands at union position m; unions shorter than 2k are padded with the
    out-of-range index n, whose indicator row is all zero on both sides.
    """
    m, k = idx_a.shape
    width = 2 * k
    unions = np.full((m, width), n, dtype=np.int64)
    for i in range(m):
        u = np.unique(np.concatenate([idx_a[i], idx_p[i]]))
        unions[i, : u.size] = u
    gather_a = (unions[:, :, None] == idx_a[:, None, :]).astype(dtype)
    gather_p = (unions[:, :, None] == idx_p[:, None, :]).astype(dtype)
    return gather_a, gather_p


def select_structure(va: np.ndarray, vp: np.ndarray, cfg: LossConfig) -> LossStructure:
    """Run the discrete parts of the loss: kNN supports and negative mining.

    These selections are treated as constant during differentiation; the
    backward pass only sees the arithmetic conditioned on them.
    """
    va = np.asarray(va)
    vp = np.asarray(vp)
    if va.shape != vp.shape:
        raise InvalidBatchError(f"descriptor sets must match, got {va.shape} vs {vp.shape}")
    n = va.shape[0]
    if n < 2:
        raise InvalidBatchError(f"need a batch of >= 2, got {n}")
    cross = knn.pairwise_distances(va, vp)
    masked = cross.copy()
    np.fill_diagonal(masked, np.inf)
    row_j = np.argmin(masked, axis=1)
    col_m = np.argmin(masked, axis=0)
    rows = np.arange(n)
    row_val = masked[rows, row_j]
    col_val = masked[col_m, rows]
    use_row = row_val <= col_val
    neg_u = np.where(use_row, rows, col_m)
    neg_v = np.where(use_row, row_j, rows)
    st = LossStructure(n=n, k=cfg.k, neg_u=neg_u, neg_v=neg_v)
    if cfg.topology_gradient_mode != "off":
        if not cfg.k <= n - 1:
            raise InvalidBatchError(f"k={cfg.k} needs a batch of at least {cfg.k + 1}, got {n}")
        st.idx_a = knn.neighbor_index_matrix(va, cfg.k)
        st.idx_p = knn.neighbor_index_matrix(vp, cfg.k)
        st.gather_a, st.gather_p = _union_gathers(st.idx_a, st.idx_p, n, va.dtype)
    return st


def _affine_weights_graph(
    x: ad.Tensor, idx: np.ndarray, tape: ad.Tape, eps: float, workers: int
) -> ad.Tensor:
    """Constrained affine reconstruction weights for every anchor at once.

    Mirrors the scalar fit: S = D D^T from anchor-minus-neighbor differences,
    Tikhonov term eps * trace(S) / k (plain eps where the trace vanishes),
    solve against the all-ones vector, then normalize to sum one.
    """
    n, k = idx.shape
    dim = x.value.shape[1]
    dtype = x.value.dtype
    nb = ad.take(x, idx)
    anchors = ad.reshape(x, (n, 1, dim))
    diffs = ad.sub(anchors, nb)
    s = ad.gram_batched(diffs)
    if eps > 0:
        tr = ad.trace_batched(s)
        scaled = ad.mul(tr, ad.constant(tape, np.asarray(eps / k, dtype=dtype)))
        flat_eps = ad.constant(tape, np.full(n, eps, dtype=dtype))
        scale = ad.where_mask(tr.value != 0, scaled, flat_eps)
        eye = ad.constant(tape, np.eye(k, dtype=dtype))
        m = ad.add(s, ad.mul(ad.reshape(scale, (n, 1, 1)), eye))
    else:
        m = s
    y = ad.solve_chol_batched(m, np.ones(k, dtype=dtype), workers=workers)
    ysum = ad.sum_(y, axis=1, keepdims=True)
    denom = ysum.value.ravel()
    if not np.all(np.isfinite(denom)) or np.any(np.abs(denom) < topology.NORMALIZER_FLOOR):
        bad = int(
            np.flatnonzero(~np.isfinite(denom) | (np.abs(denom) < topology.NORMALIZER_FLOOR))[0]
        )
        raise DegenerateFitError(f"weight normalizer vanished for anchor {bad}")
    return ad.div(y, ysum)


def affine_weight_values(x: np.ndarray, idx: np.ndarray, eps: float = linalg.DEFAULT_EPS) -> np.ndarray:
    """Value-only batched affine weights (no gradient tracking)."""
    tape = ad.Tape()
    xt = ad.constant(tape, x)
    return _affine_weights_graph(xt, idx, tape, eps, workers=1).value


def _row_euclidean(a: ad.Tensor, b: ad.Tensor, tape: ad.Tape) -> ad.Tensor:
    """Unit-descriptor distance per row: sqrt(max(0, 2 - 2 a.b)), dot clamped."""
    dots = ad.clip(ad.sum_(ad.mul(a, b), axis=1), -1.0, 1.0)
    two = ad.constant(tape, np.asarray(2.0, dtype=a.value.dtype))
    return ad.sqrt_(ad.relu(ad.sub(two, ad.mul(two, dots))))


@dataclass
class LossGraph:
    loss: ad.Tensor
    report: LossReport
    weights_a: ad.Tensor | None = None
    weights_p: ad.Tensor | None = None


def build_loss_graph(
    desc_a: ad.Tensor,
    desc_p: ad.Tensor,
    lam: float,
    cfg: LossConfig,
    structure: LossStructure,
    tape: ad.Tape,
    eps: float = linalg.DEFAULT_EPS,
    workers: int = 1,
) -> LossGraph:
    """Assemble the full batch objective on the tape.

    mean over i of max(0, margin + blended positive distance - hardest
    negative distance). With topology_gradient_mode "off" the positive side
    is purely Euclidean; "detached" computes the affine weights but stops
    their gradient; frozen weights in the structure short-circuit the solve.
    """
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgumentError(f"lambda must be in [0, 1], got {lam}")
    n = structure.n
    dtype = desc_a.value.dtype
    d_pos = _row_euclidean(desc_a, desc_p, tape)
    neg_a = ad.take(desc_a, structure.neg_u)
    neg_p = ad.take(desc_p, structure.neg_v)
    d_neg = _row_euclidean(neg_a, neg_p, tape)

    weights_a = weights_p = None
    if cfg.topology_gradient_mode == "off":
        gamma_pos = d_pos
        topo_mean = 0.0
    else:
        if structure.frozen_wa is not None:
            weights_a = ad.constant(tape, structure.frozen_wa)
            weights_p = ad.constant(tape, structure.frozen_wp)
        else:
            weights_a = _affine_weights_graph(desc_a, structure.idx_a, tape, eps, workers)
            weights_p = _affine_weights_graph(desc_p, structure.idx_p, tape, eps, workers)
            if cfg.topology_gradient_mode == "detached":
                weights_a = ad.detach(weights_a)
                weights_p = ad.detach(weights_p)
        ta = ad.matmul(ad.constant(tape, structure.gather_a), ad.reshape(weights_a, (n, cfg.k, 1)))
        tp = ad.matmul(ad.constant(tape, structure.gather_p), ad.reshape(weights_p, (n, cfg.k, 1)))
        l1 = ad.sum_(ad.abs_(ad.sub(ta, tp)), axis=(1, 2))
        quarter = ad.constant(tape, np.asarray(0.25, dtype=dtype))
        d_topo = ad.mul(quarter, l1)
        topo_mean = float(d_topo.value.mean())
        lam_c = ad.constant(tape, np.asarray(lam, dtype=dtype))
        lam_rest = ad.constant(tape, np.asarray(1.0 - lam, dtype=dtype))
        gamma_pos = ad.add(ad.mul(lam_c, d_pos), ad.mul(lam_rest, d_topo))

    margin = ad.constant(tape, np.asarray(cfg.margin, dtype=dtype))
    hinge = ad.relu(ad.add(margin, ad.sub(gamma_pos, d_neg)))
    inv_n = ad.constant(tape, np.asarray(1.0 / n, dtype=dtype))
    loss = ad.mul(inv_n, ad.sum_(hinge))

    report = LossReport(
        loss=float(loss.value),
        lam=float(lam),
        mean_d_pos_euclid=float(d_pos.value.mean()),
        mean_d_pos_topo=topo_mean,
        mean_d_neg=float(d_neg.value.mean()),
        active_triplets=int(np.count_nonzero(hinge.value > 0)),
    )
    return LossGraph(loss=loss, report=report, weights_a=weights_a, weights_p=weights_p)


def batch_loss(
    va: np.ndarray,
    vp: np.ndarray,
    iteration: int,
    cfg: LossConfig,
    eps: float = linalg.DEFAULT_EPS,
    workers: int = 1,
) -> LossReport:
    """Loss and diagnostics for fixed descriptor arrays (no training state)."""
    lam = 1.0 if cfg.topology_gradient_mode == "off" else lambda_schedule(iteration, cfg)
    structure = select_structure(va, vp, cfg)
    tape = ad.Tape()
    graph = build_loss_graph(
        ad.constant(tape, va),
        ad.constant(tape, vp),
        lam,
        cfg,
        structure,
        tape,
        eps=eps,
        workers=workers,
    )
    return graph.report
