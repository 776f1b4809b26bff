"""Second-order cyclic models of Gaussian reciprocal processes.

The model ``M0_k X_k - Mp_k X_{k+1} - Mm_k X_{k-1} = E_k`` with cyclic
boundary conditions has precision matrix

    [ M0_0  -Mp_0    0   ...   0   -Mm_0 ]
    [-Mm_1   M0_1  -Mp_1  0  ...     0   ]
    [  ...                         ...   ]
    [-Mp_N    0  ...   0  -Mm_N   M0_N   ]

which is symmetric when ``M0_k`` is symmetric and ``Mp_k = Mm_{k+1}^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegeneracyError, ModelValidationError, SchemaError

BLOCK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SecondOrderBlocks:
    """``center[k] = M0_k``, ``plus[k] = Mp_k``, ``minus[k] = Mm_k``, each ``(L, n, n)``."""

    center: np.ndarray
    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self):
        arrs = []
        for name in ("center", "plus", "minus"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.ndim == 1:  # scalar blocks
                a = a[:, None, None]
            if a.ndim != 3 or a.shape[1] != a.shape[2]:
                raise ModelValidationError(f"{name} blocks must have shape (L, n, n), got {a.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrs.append(a)
        if not arrs[0].shape == arrs[1].shape == arrs[2].shape:
            raise ModelValidationError("center, plus and minus blocks must share one shape")
        if arrs[0].shape[0] < 3:
            raise ModelValidationError("a cyclic model needs at least three blocks")

    @property
    def num_blocks(self):
        return self.center.shape[0]

    @property
    def block_dim(self):
        return self.center.shape[1]

    @classmethod
    def stationary(cls, L, center, plus, minus=None):
        c = np.atleast_2d(np.asarray(center, dtype=np.float64))
        p = np.atleast_2d(np.asarray(plus, dtype=np.float64))
        m = p.T if minus is None else np.atleast_2d(np.asarray(minus, dtype=np.float64))
        return cls(np.repeat(c[None], L, 0), np.repeat(p[None], L, 0), np.repeat(m[None], L, 0))

    def to_dict(self):
        return {
            "block_dim": self.block_dim,
            "blocks": [
                [self.center[k].tolist(), self.plus[k].tolist(), self.minus[k].tolist()]
                for k in range(self.num_blocks)
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        """Accept ``{"blocks": [[M0, Mp, Mm], ...]}`` or the bare list of triples."""
        triples = doc.get("blocks") if isinstance(doc, dict) else doc
        if not isinstance(triples, list):
            raise SchemaError("expected a list of [M0, M+, M-] triples", "$.blocks")
        c, p, m = [], [], []
        for k, t in enumerate(triples):
            if not isinstance(t, list) or len(t) != 3:
                raise SchemaError("expected a triple [M0, M+, M-]", f"$.blocks[{k}]")
            for dst, item, name in zip((c, p, m), t, ("0", "1", "2")):
                try:
                    a = np.atleast_2d(np.array(item, dtype=np.float64))
                except (TypeError, ValueError):
                    raise SchemaError("expected a numeric matrix", f"$.blocks[{k}][{name}]") from None
                if a.ndim != 2:
                    raise SchemaError("expected a matrix", f"$.blocks[{k}][{name}]")
                dst.append(a)
        try:
            return cls(np.array(c), np.array(p), np.array(m))
        except ValueError as exc:
            raise SchemaError(str(exc), "$.blocks") from None


def constraint_violations(blocks: SecondOrderBlocks, tol=BLOCK_TOL):
    out = []
    L = blocks.num_blocks
    for k in range(L):
        if np.max(np.abs(blocks.center[k] - blocks.center[k].T)) > tol:
            out.append(f"M0_{k} is not symmetric")
        nxt = (k + 1) % L
        if np.max(np.abs(blocks.plus[k] - blocks.minus[nxt].T)) > tol:
            out.append(f"adjointness violated: M+_{k} != (M-_{nxt})^T")
    return out


def assemble_precision(blocks: SecondOrderBlocks, check=True) -> np.ndarray:
    if check:
        bad = constraint_violations(blocks)
        if bad:
            raise ModelValidationError("; ".join(bad), bad)
    L, n = blocks.num_blocks, blocks.block_dim
    P = np.zeros((L * n, L * n))

    def put(i, j, B):
        P[i * n : (i + 1) * n, j * n : (j + 1) * n] = B

    for k in range(L):
        put(k, k, blocks.center[k])
        put(k, (k + 1) % L, -blocks.plus[k])
        put(k, (k - 1) % L, -blocks.minus[k])
    if check:
        # the constraints make the two triangles copies of each other
        P = np.triu(P) + np.triu(P, 1).T
    return P


def noise_covariance(blocks: SecondOrderBlocks) -> np.ndarray:
    """Driving-noise covariance built from ``M0_k`` and ``-Mp_k`` at lag +1 only;
    lag -1 blocks are the transposes."""
    L, n = blocks.num_blocks, blocks.block_dim
    S = np.zeros((L * n, L * n))
    for k in range(L):
        j = (k + 1) % L
        S[k * n : (k + 1) * n, k * n : (k + 1) * n] = blocks.center[k]
        S[k * n : (k + 1) * n, j * n : (j + 1) * n] = -blocks.plus[k]
        S[j * n : (j + 1) * n, k * n : (k + 1) * n] = -blocks.plus[k].T
    return S


def is_positive_definite(P) -> bool:
    try:
        np.linalg.cholesky(P)
        return True
    except np.linalg.LinAlgError:
        return False


def validate_blocks(blocks: SecondOrderBlocks, require_pd=True) -> dict:
    """Constraint report; ``well_posed`` means constraints hold and the precision is PD."""
    bad = constraint_violations(blocks)
    report = {"violations": bad, "constraints_ok": not bad, "positive_definite": None}
    if require_pd:
        report["positive_definite"] = is_positive_definite(assemble_precision(blocks, check=False))
    report["well_posed"] = not bad and (report["positive_definite"] is not False)
    return report


def cyclic_band_mask(L, n=1):
    """Boolean ``(L n, L n)`` mask of the cyclic block-tridiagonal band."""
    idx = np.arange(L)
    d = np.abs(idx[:, None] - idx[None, :])
    blk = np.minimum(d, L - d) <= 1
    return np.kron(blk, np.ones((n, n), dtype=bool))


def ci_pattern(P, block_dim=1, tol=BLOCK_TOL):
    """Unordered block pairs ``(i, j)``, ``i < j``, whose precision block vanishes."""
    P = np.asarray(P, dtype=np.float64)
    n = block_dim
    L = P.shape[0] // n
    out = set()
    for i in range(L):
        for j in range(i + 1, L):
            if np.max(np.abs(P[i * n : (i + 1) * n, j * n : (j + 1) * n])) <= tol:
                out.add((i, j))
    return out


def markov_subclass_check(blocks: SecondOrderBlocks, tol=BLOCK_TOL) -> bool:
    """True when both corner blocks vanish, i.e. the model is Markov."""
    N = blocks.num_blocks - 1
    return bool(np.max(np.abs(blocks.plus[N])) <= tol and np.max(np.abs(blocks.minus[0])) <= tol)


SAMPLE_BATCH = 100_000


def sample_from_precision(P, n_samples, seed=None) -> np.ndarray:
    """Zero-mean draws with covariance ``P^{-1}``: solve ``R^T x = z`` with ``P = R R^T``."""
    try:
        R = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise DegeneracyError("precision matrix is not positive definite") from None
    dim = P.shape[0]
    n_batches = max(1, math.ceil(n_samples / SAMPLE_BATCH))
    children = np.random.SeedSequence(seed).spawn(n_batches)
    out = np.empty((n_samples, dim))
    for b, ss in enumerate(children):
        lo, hi = b * SAMPLE_BATCH, min(n_samples, (b + 1) * SAMPLE_BATCH)
        z = np.random.default_rng(ss).standard_normal((dim, hi - lo))
        out[lo:hi] = scipy.linalg.solve_triangular(R, z, lower=True, trans="T").T
    return out


def sample_gaussian_rp(blocks: SecondOrderBlocks, n_samples, seed=None) -> np.ndarray:
    return sample_from_precision(assemble_precision(blocks), n_samples, seed)


def empirical_precision_check(samples, blocks=None, band_tolerance=5.0, precision=None, covariance=None) -> dict:
    """Compare the inverse sample covariance with the cyclic band structure.

    Off-band entries are zero in the true precision, where the estimate has
    asymptotic standard error ``sqrt(P_ii P_jj / n)``; the check passes when
    every off-band entry is within ``band_tolerance`` standard errors.  Passing
    ``covariance`` instead of samples checks an exact covariance; off-band
    entries must then vanish up to inversion rounding.
    """
    if covariance is not None:
        cov = np.asarray(covariance, dtype=np.float64)
        n = None
    else:
        X = np.asarray(samples, dtype=np.float64)
        n, dim = X.shape
        if n <= dim:
            raise DegeneracyError("need more samples than dimensions")
        cov = X.T @ X / n
    try:
        est = np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        raise DegeneracyError("empirical covariance is singular") from None
    dim = cov.shape[0]
    block_dim = blocks.block_dim if blocks is not None else 1
    mask = cyclic_band_mask(dim // block_dim, block_dim)
    off = np.where(mask, 0.0, np.abs(est))
    d = np.sqrt(np.abs(np.diag(est)))
    true = assemble_precision(blocks) if blocks is not None else precision
    report = {
        "n_samples": n,
        "max_off_band": float(off.max()),
        "band_tolerance": band_tolerance,
        "max_abs_error": float(np.max(np.abs(est - true))) if true is not None else None,
    }
    if n is None:
        # rounding floor of one inversion
        floor = 1e3 * np.finfo(float).eps * np.linalg.cond(cov) * float(np.max(d) ** 2)
        report["max_off_band_z"] = None
        report["passed"] = bool(report["max_off_band"] <= floor)
    else:
        se = np.outer(d, d) / math.sqrt(n)
        z = float(np.max(np.where(mask, 0.0, off / se)))
        report["max_off_band_z"] = z
        report["passed"] = bool(z <= band_tolerance)
    return report
