"""Small dense linear algebra for the local affine fits.

Everything here runs in double precision regardless of the caller's
training precision: the systems are k-by-k for small k, so the cost is
negligible and the conditioning behaviour stays uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InvalidInputError, SingularSystemError

# Trace-relative Tikhonov term used when a caller does not pick its own.
DEFAULT_EPS = 1e-3


@dataclass(frozen=True)
class SymmetricSolveResult:
    """Solution of a conditioned symmetric system.

    ``conditioning_applied`` is True when the system actually solved was a
    regularized copy of the input, either because eps > 0 or because the
    plain factorization failed and a regularized retry was needed.
    """

    solution: np.ndarray
    conditioning_applied: bool
    regularizer_eps: float


def gram(diffs: np.ndarray) -> np.ndarray:
    """Gram matrix S = diffs @ diffs.T of the k row differences.

    The result is bitwise symmetric: the lower triangle is computed and
    mirrored, so downstream symmetric factorizations never see rounding
    asymmetry from the matrix product.
    """
    diffs = np.asarray(diffs, dtype=np.float64)
    if diffs.ndim != 2:
        raise InvalidInputError(f"gram expects a 2-d matrix, got ndim={diffs.ndim}")
    if not np.isfinite(diffs).all():
        raise InvalidInputError("gram input contains non-finite entries")
    full = diffs @ diffs.T
    lower = np.tril(full)
    return lower + np.tril(full, -1).T


def regularized_system(s: np.ndarray, eps: float) -> np.ndarray:
    """Return S + eps*(trace(S)/k)*I, or S + eps*I when trace(S) == 0.

    The trace-relative scaling keeps the conditioning scale-free: scaling
    S by c scales the regularizer by c as well.
    """
    k = s.shape[0]
    if eps == 0.0:
        return s
    tr = float(np.trace(s))
    scale = eps * (tr / k) if tr > 0.0 else eps
    return s + scale * np.eye(k)


def solve_spd_regularized(
    s: np.ndarray, rhs: np.ndarray, eps: float
) -> SymmetricSolveResult:
    """Solve (S + eps*(trace(S)/k)*I) x = rhs via Cholesky.

    With eps == 0 the plain system is attempted first; if its factorization
    fails, one retry with the default trace-relative regularizer is made.
    A failure after regularization raises SingularSystemError.
    """
    s = np.asarray(s, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise InvalidInputError(f"solve expects a square matrix, got shape {s.shape}")
    if rhs.shape != (s.shape[0],):
        raise InvalidInputError(
            f"rhs length {rhs.shape} does not match system dimension {s.shape[0]}"
        )
    if not np.isfinite(s).all() or not np.isfinite(rhs).all():
        raise InvalidInputError("solve input contains non-finite entries")
    if eps < 0.0:
        raise InvalidInputError(f"eps must be >= 0, got {eps}")

    m = regularized_system(s, eps)
    try:
        factor = cho_factor(m, lower=True)
    except np.linalg.LinAlgError:
        if eps > 0.0:
            raise SingularSystemError(
                f"factorization failed for eps={eps} on a {s.shape[0]}x{s.shape[0]} system"
            ) from None
        m = regularized_system(s, DEFAULT_EPS)
        try:
            factor = cho_factor(m, lower=True)
        except np.linalg.LinAlgError:
            raise SingularSystemError(
                f"factorization failed even after eps={DEFAULT_EPS} regularization"
            ) from None
        return SymmetricSolveResult(cho_solve(factor, rhs), True, DEFAULT_EPS)

    return SymmetricSolveResult(cho_solve(factor, rhs), eps > 0.0, eps)


def l2_norm(v: np.ndarray) -> float:
    """Euclidean norm of a vector; exactly 0 only for the zero vector."""
    v = np.asarray(v, dtype=np.float64)
    return float(np.sqrt(np.dot(v, v)))
