"""Hilbert projective metric, Birkhoff contraction and Perron power iteration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import BoundaryError, ModelValidationError, NotPrimitiveError


def hilbert_distance_orthant(x, y) -> float:
    """``log(max(x/y) / min(x/y))`` for strictly positive vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if not (np.all(x > 0) and np.all(y > 0)):
        raise BoundaryError("Hilbert distance is undefined on the boundary of the orthant")
    r = np.log(x) - np.log(y)
    return float(r.max() - r.min())


def projective_gap(x, y) -> float:
    """Hilbert distance restricted to the common support; ``inf`` if supports differ.

    Messages with structural zeros live on a face of the orthant, where the
    metric is well defined between points of the same face.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sx, sy = x > 0, y > 0
    if not np.array_equal(sx, sy) or not np.any(sx):
        return math.inf
    return hilbert_distance_orthant(x[sx], y[sy])


def _require_spd(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ModelValidationError(f"{name} must be square")
    if not np.array_equal(X, X.T):
        raise ModelValidationError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        raise BoundaryError(f"{name} is not positive definite") from None
    return X


def hilbert_distance_psd(X, Y) -> float:
    """``log(lambda_max / lambda_min)`` of the pencil ``X v = lambda Y v``."""
    X = _require_spd(X, "X")
    Y = _require_spd(Y, "Y")
    w = scipy.linalg.eigh(X, Y, eigvals_only=True)
    return float(math.log(w[-1]) - math.log(w[0]))


def projective_diameter(A) -> float:
    """Birkhoff's closed form: max of ``log(a_ij a_pq / (a_iq a_pj))``.

    For fixed rows ``i, p`` the quadruple maximum reduces to the spread of the
    log-ratio row ``log a_i. - log a_p.``, so the scan is O(D^3).
    """
    A = np.asarray(A, dtype=np.float64)
    if not np.all(A > 0):
        raise BoundaryError("projective diameter formula requires a strictly positive matrix")
    logA = np.log(A)
    diff = logA[:, None, :] - logA[None, :, :]
    return float(np.max(diff.max(axis=2) - diff.min(axis=2)))


@dataclass(frozen=True)
class ContractionCertificate:
    projective_diameter: float
    contraction_ratio: float
    primitivity_index: int | None = None

    def to_dict(self):
        return {
            "projective_diameter": self.projective_diameter if math.isfinite(self.projective_diameter) else "inf",
            "contraction_ratio": self.contraction_ratio,
            "primitivity_index": self.primitivity_index,
        }


def birkhoff_ratio(diameter) -> float:
    """``tanh(diameter / 4)``, written as ``(e^(d/2) - 1) / (e^(d/2) + 1)``."""
    if not math.isfinite(diameter):
        return 1.0
    s = math.exp(diameter / 2.0)
    return (s - 1.0) / (s + 1.0)


def contraction_ratio(A) -> ContractionCertificate:
    A = np.asarray(A, dtype=np.float64)
    if np.any(A < 0):
        raise ModelValidationError("contraction ratio needs a nonnegative matrix")
    h = primitivity_index(A)
    if np.all(A > 0):
        d = projective_diameter(A)
        return ContractionCertificate(d, birkhoff_ratio(d), h)
    return ContractionCertificate(math.inf, 1.0, h)


def _bool_matmul(P, Q):
    return (P.astype(np.int64) @ Q.astype(np.int64)) > 0


def primitivity_index(A) -> int | None:
    """Smallest ``h`` with ``A^h > 0`` entrywise, or ``None`` if A is not primitive.

    Works on the zero pattern only.  Positivity of ``A^h`` is monotone in ``h``
    for primitive A, so the exponent is found by binary lifting over the
    repeated squares, searched up to the Wielandt bound ``(D-1)^2 + 1``.
    """
    P = np.asarray(A) > 0
    D = P.shape[0]
    if P.ndim != 2 or P.shape[1] != D:
        raise ModelValidationError("primitivity_index needs a square matrix")
    if np.any(np.asarray(A) < 0):
        raise ModelValidationError("primitivity_index needs a nonnegative matrix")
    bound = (D - 1) ** 2 + 1
    # a zero row or column can never fill in
    if not (P.any(axis=0).all() and P.any(axis=1).all()):
        return None
    squares = [P]
    while (1 << len(squares)) <= bound:
        squares.append(_bool_matmul(squares[-1], squares[-1]))
    # find the largest h <= bound with A^h not positive
    h, acc = 0, None
    for i in range(len(squares) - 1, -1, -1):
        step = 1 << i
        if h + step > bound:
            continue
        cand = squares[i] if acc is None else _bool_matmul(acc, squares[i])
        if not cand.all():
            h, acc = h + step, cand
    return h + 1 if h < bound else None


@dataclass
class PowerIterationResult:
    vector: np.ndarray
    value: float
    trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def power_iteration_hilbert(A, x0=None, tol=1e-12, max_iters=10_000) -> PowerIterationResult:
    """Iterate ``x <- A x / |A x|`` until successive iterates are ``tol``-close
    in the Hilbert metric.

    Returns the unit-norm Perron direction, the Rayleigh quotient estimate of
    the Perron value, and the per-step distance trace (``inf`` while iterates
    still sit on different faces of the orthant).
    """
    A = np.asarray(A, dtype=np.float64)
    if primitivity_index(A) is None:
        raise NotPrimitiveError("power iteration needs a primitive matrix")
    x = np.ones(A.shape[0]) if x0 is None else np.asarray(x0, dtype=np.float64)
    if np.any(x < 0) or not np.any(x > 0):
        raise ModelValidationError("x0 must be nonnegative and nonzero")
    x = x / np.linalg.norm(x)
    trace = []
    for it in range(1, max_iters + 1):
        y = A @ x
        y /= np.linalg.norm(y)
        d = projective_gap(y, x)
        trace.append(d)
        x = y
        if d < tol:
            value = float(x @ (A @ x) / (x @ x))
            return PowerIterationResult(x, value, trace, True, it)
    value = float(x @ (A @ x) / (x @ x))
    return PowerIterationResult(x, value, trace, False, max_iters)
