"""Spectral diagnostics of loop transfer matrices.

Covers the eigen-structure report (beta, subdominant ratio), the four
equivalent stability conditions for the positive system ``m <- C m``, the
belief/posterior decomposition and the exact binary correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .bp import loop_transfer_matrices, perron_vector, steady_state_beliefs_eigen
from .errors import DegeneracyError, ModelValidationError
from .exact import exact_marginals_transfer
from .hilbert import primitivity_index
from .model import check_model

DEFECTIVE_COND = 1e12
IMAG_TOL = 1e-10


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    inverse_eigenvectors: np.ndarray | None
    beta: complex | float
    subdominant_ratio: float
    primitive: bool
    defective: bool
    flags: list = field(default_factory=list)

    def to_dict(self):
        def cplx(z):
            z = complex(z)
            return z.real if z.imag == 0 else [z.real, z.imag]

        return {
            "eigenvalues": [cplx(z) for z in self.eigenvalues],
            "beta": cplx(self.beta),
            "subdominant_ratio": self.subdominant_ratio,
            "primitive": self.primitive,
            "defective": self.defective,
            "flags": list(self.flags),
        }


def _sorted_eig(C):
    w, S = np.linalg.eig(C)
    # decreasing magnitude; ties broken by decreasing real part
    order = np.lexsort((-w.real, -np.abs(w)))
    return w[order], S[:, order]


def spectral_report(C) -> SpectralReport:
    C = np.asarray(C, dtype=np.float64)
    w, S = _sorted_eig(C)
    flags = []
    primitive = bool(np.all(C >= 0)) and primitivity_index(C) is not None
    if not primitive:
        flags.append("not primitive: Perron guarantees do not apply")
    defective = bool(np.linalg.cond(S) > DEFECTIVE_COND)
    S_inv = None
    if defective:
        flags.append("eigenvector matrix is ill-conditioned (defective within tolerance)")
        S = None
    else:
        S_inv = np.linalg.inv(S)
    total = complex(w.sum())
    if abs(total.imag) > IMAG_TOL * max(1.0, abs(total)):
        flags.append("eigenvalue sum has a non-negligible imaginary part")
    beta = complex(w[0]) / total if total != 0 else complex(math.nan)
    if abs(beta.imag) <= IMAG_TOL:
        beta = beta.real
    r = float(abs(w[1]) / abs(w[0])) if w.size > 1 and w[0] != 0 else 0.0
    return SpectralReport(w, S, S_inv, beta, r, primitive, defective, flags)


# -- stability -------------------------------------------------------------------


def charpoly_coefficients(A):
    """Coefficients of ``det(sI - A)`` in descending powers, via Faddeev-LeVerrier."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    coeffs = [1.0]
    M = np.zeros_like(A)
    I = np.eye(n)
    for k in range(1, n + 1):
        M = A @ M + coeffs[-1] * I
        coeffs.append(-np.trace(A @ M) / k)
    return np.array(coeffs)


def leading_principal_minors(A):
    A = np.asarray(A, dtype=np.float64)
    return np.array([np.linalg.det(A[:k, :k]) for k in range(1, A.shape[0] + 1)])


def _positive_certificate_vectors(C):
    """Right/left vectors ``xi, z > 0`` with ``C xi < xi`` and ``C^T z < z``.

    Perron vectors work when they are strictly positive; otherwise the resolvent
    vectors ``(I - C)^{-1} 1`` and ``(I - C^T)^{-1} 1`` do whenever rho(C) < 1.
    """
    n = C.shape[0]
    candidates = []
    v, lam = perron_vector(C)
    u, _ = perron_vector(C.T)
    candidates.append(("perron", v, u))
    try:
        xi = np.linalg.solve(np.eye(n) - C, np.ones(n))
        z = np.linalg.solve(np.eye(n) - C.T, np.ones(n))
        candidates.append(("resolvent", xi, z))
    except np.linalg.LinAlgError:
        pass
    return candidates


def diagonal_lyapunov(C):
    """Try to certify ``C^T P C - P < 0`` with ``P = diag(z / xi)``.

    Returns ``(verdict, info)``: True with the certificate, False with a
    nonnegative eigenvector witness of ``|lambda| >= 1`` (for which
    ``v^T (C^T P C - P) v >= 0`` for every diagonal ``P > 0``), or None when no
    certificate was found.
    """
    C = np.asarray(C, dtype=np.float64)
    for name, xi, z in _positive_certificate_vectors(C):
        if not (np.all(xi > 0) and np.all(z > 0)):
            continue
        P = np.diag(z / xi)
        Q = C.T @ P @ C - P
        top = float(np.linalg.eigvalsh((Q + Q.T) / 2)[-1])
        if top < 0:
            return True, {"construction": name, "P_diagonal": np.diag(P).tolist(), "lambda_max": top}
    v, lam = perron_vector(C)
    if lam >= 1.0 and np.allclose(C @ v, lam * v, rtol=1e-9, atol=1e-12):
        return False, {"witness_vector": v.tolist(), "eigenvalue": lam}
    return None, {"note": "certificate not found"}


@dataclass
class StabilityReport:
    spectral_radius: float
    spectral: bool
    minors: bool
    charpoly: bool
    lyapunov: bool | None
    minors_values: list
    charpoly_coefficients: list
    lyapunov_info: dict
    agree: bool
    note: str

    @property
    def verdicts(self):
        return (self.spectral, self.minors, self.charpoly, self.lyapunov)

    def to_dict(self):
        return {
            "spectral_radius": self.spectral_radius,
            "conditions": {
                "spectral_radius_below_one": self.spectral,
                "leading_minors_positive": self.minors,
                "charpoly_coefficients_positive": self.charpoly,
                "diagonal_lyapunov": self.lyapunov if self.lyapunov is not None else "certificate not found",
            },
            "leading_minors": self.minors_values,
            "charpoly_coefficients": self.charpoly_coefficients,
            "lyapunov": self.lyapunov_info,
            "agree": self.agree,
            "numerical_degeneracy": not self.agree,
            "note": self.note,
        }


def stability_report(C) -> StabilityReport:
    """Evaluate the four equivalent convergence conditions for ``m <- C m``.

    (i) spectral radius < 1; (ii) leading principal minors of ``I - C`` positive;
    (iii) coefficients of ``det(sI - (C - I))`` positive; (iv) diagonal Lyapunov
    certificate.  A missing certificate in (iv) is not counted as disagreement.
    """
    C = np.asarray(C, dtype=np.float64)
    if np.any(C < 0):
        raise ModelValidationError("stability conditions apply to nonnegative matrices")
    n = C.shape[0]
    rho = float(np.max(np.abs(np.linalg.eigvals(C))))
    minors = leading_principal_minors(np.eye(n) - C)
    coeffs = charpoly_coefficients(C - np.eye(n))
    lyap, info = diagonal_lyapunov(C)
    verdicts = [rho < 1.0, bool(np.all(minors > 0)), bool(np.all(coeffs[1:] > 0))]
    if lyap is not None:
        verdicts.append(lyap)
    agree = len(set(verdicts)) == 1
    return StabilityReport(
        spectral_radius=rho,
        spectral=verdicts[0],
        minors=verdicts[1],
        charpoly=verdicts[2],
        lyapunov=lyap,
        minors_values=minors.tolist(),
        charpoly_coefficients=coeffs.tolist(),
        lyapunov_info=info,
        agree=agree,
        note=(
            "conditions concern the un-normalized iteration; normalized BP converges in "
            "direction whenever C is primitive, whatever its spectral radius"
        ),
    )


# -- accuracy --------------------------------------------------------------------


@dataclass
class AccuracyDecomposition:
    node: int
    beta: float
    belief: np.ndarray
    exact: np.ndarray
    q_printed: np.ndarray
    q_residual: np.ndarray
    residual: float
    discrepancy: float
    q_swapped: np.ndarray | None = None

    def to_dict(self):
        return {
            "node": self.node,
            "beta": self.beta,
            "belief": self.belief.tolist(),
            "exact": self.exact.tolist(),
            "q_printed": self.q_printed.tolist(),
            "q_residual": self.q_residual.tolist(),
            "reconstruction_residual": self.residual,
            "q_discrepancy": self.discrepancy,
            "q_swapped_roles": None if self.q_swapped is None else self.q_swapped.tolist(),
        }


def _real_beta(rep):
    beta = rep.beta
    if isinstance(beta, complex):
        raise DegeneracyError("beta has a non-negligible imaginary part")
    return float(beta)


def printed_q(S, S_inv, w):
    """``q(i) = sum_{j>=2} S(i,j) l_j S^-1(j,i) / sum_{j>=2} S(i,j) l_j``.

    The value depends on the column scaling of ``S``.  Columns are put in a
    canonical form first: unit 2-norm, largest-magnitude entry real positive.
    """
    S = np.asarray(S, dtype=complex)
    S_inv = np.asarray(S_inv, dtype=complex)
    w = np.asarray(w, dtype=complex)
    piv = S[np.argmax(np.abs(S), axis=0), np.arange(S.shape[1])]
    c = np.linalg.norm(S, axis=0) * piv / np.abs(piv)
    S, S_inv = S / c, S_inv * c[:, None]
    num = np.einsum("ij,j,ji->i", S[:, 1:], w[1:], S_inv[1:, :])
    den = S[:, 1:] @ w[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = num / den
    return np.real_if_close(q, tol=1e6)


def decompose_transfer(C):
    """Belief, exact marginal and beta straight from one loop transfer matrix.

    With ``C = S diag(l) S^-1``: ``b(i) = S(i,1) S^-1(1,i)`` (the normalized product
    of right and left Perron vectors), ``p = diag(C) / trace(C)``, and
    ``p = beta b + (1 - beta) q`` defines ``q``.
    """
    C = np.asarray(C, dtype=np.float64)
    v, _ = perron_vector(C)
    u, _ = perron_vector(C.T)
    b = u * v / (u @ v)
    p = np.diag(C) / np.trace(C)
    rep = spectral_report(C)
    beta = _real_beta(rep)
    w = rep.eigenvalues
    one_minus_beta = complex(w[1:].sum() / w.sum()).real
    # q is undefined when beta = 1 (rank-one C); report nan rather than dividing by zero
    if abs(one_minus_beta) < 1e-14:
        return b, p, beta, np.full_like(p, np.nan)
    return b, p, beta, (p - b) / one_minus_beta + b


def _mp_perron(A):
    """Perron vector (L1-normalized) and sorted spectrum of an mpmath matrix."""
    w, V = mpmath.eig(A)
    order = sorted(range(len(w)), key=lambda i: (-abs(w[i]), -mpmath.re(w[i])))
    cols = [[V[r, i] for r in range(A.rows)] for i in order]
    return [w[i] for i in order], cols


def _mp_loop_product(model, k, forward, dps):
    E, psi = model.edge_potentials, model.node_potentials
    L, D = model.num_nodes, model.alphabet_size
    with mpmath.workdps(dps):
        C = mpmath.eye(D)
        for s in range(L):
            if forward:
                j = (k - 1 - s) % L
                F = mpmath.matrix(E[j].T.tolist()) * mpmath.diag(psi[j].tolist())
            else:
                j = (k + s) % L
                F = mpmath.matrix(E[j].tolist()) * mpmath.diag(psi[(j + 1) % L].tolist())
            C = C * F
        return C


def _mp_decomposition(model, k, dps):
    D = model.alphabet_size
    with mpmath.workdps(dps):
        Cf = _mp_loop_product(model, k, True, dps)
        Cb = _mp_loop_product(model, k, False, dps)
        wf, Sf = _mp_perron(Cf)
        wb, Sb = _mp_perron(Cb)
        total = mpmath.fsum(wf)
        beta = wf[0] / total
        one_minus_beta = mpmath.fsum(wf[1:]) / total
        if abs(mpmath.im(beta)) > IMAG_TOL or abs(mpmath.im(one_minus_beta)) > IMAG_TOL:
            raise DegeneracyError("beta has a non-negligible imaginary part")
        beta, one_minus_beta = mpmath.re(beta), mpmath.re(one_minus_beta)
        if abs(one_minus_beta) < mpmath.mpf(10) ** (-(dps - 10)):
            raise DegeneracyError("beta = 1: a single nonzero eigenvalue, decomposition degenerate")
        tr = mpmath.fsum(Cf[i, i] for i in range(D))
        p = [Cf[i, i] / tr for i in range(D)]
        v = [abs(mpmath.re(x)) for x in Sf[0]]
        w = [abs(mpmath.re(x)) for x in Sb[0]]
        prod = [model.node_potentials[k][i] * v[i] * w[i] for i in range(D)]
        z = mpmath.fsum(prod)
        b = [x / z for x in prod]
        q = [(p[i] - beta * b[i]) / one_minus_beta for i in range(D)]
        q_sw = [(b[i] - beta * p[i]) / one_minus_beta for i in range(D)]
        Si = mpmath.inverse(mpmath.matrix([[Sb[c][r] for c in range(D)] for r in range(D)]))
        S_np = np.array([[complex(Sb[c][r]) for c in range(D)] for r in range(D)])
        Si_np = np.array([[complex(Si[r, c]) for c in range(D)] for r in range(D)])
        q_pr = np.real(printed_q(S_np, Si_np, np.array([complex(x) for x in wb])))
        to_f = lambda xs: np.array([float(mpmath.re(x)) for x in xs])
        return float(beta), to_f(b), to_f(p), to_f(q), q_pr, to_f(q_sw)


def _float_decomposition(model, k):
    T = loop_transfer_matrices(model)
    rep = spectral_report(T.forward[k])
    if rep.defective:
        raise DegeneracyError(f"C_(k-1,k) at node {k} is not diagonalizable within tolerance")
    beta = _real_beta(rep)
    w = rep.eigenvalues
    one_minus_beta = complex(w[1:].sum() / w.sum()).real
    if abs(one_minus_beta) < 1e-14:
        raise DegeneracyError("beta = 1: a single nonzero eigenvalue, decomposition degenerate")
    b = steady_state_beliefs_eigen(model)[k]
    p = exact_marginals_transfer(model)[k]
    q_res = (p - b) / one_minus_beta + b
    q_sw = (b - p) / one_minus_beta + p
    rep_b = spectral_report(T.backward[k])
    if rep_b.defective:
        q_pr = np.full_like(p, np.nan)
    else:
        q_pr = np.real(printed_q(rep_b.eigenvectors, rep_b.inverse_eigenvectors, rep_b.eigenvalues))
    return beta, b, p, q_res, q_pr, q_sw


def accuracy_decomposition(model, k, digits=40) -> AccuracyDecomposition:
    """Relate the BP steady-state belief at node k to the exact posterior.

    ``q_residual`` solves ``p = beta b + (1 - beta) q``; ``q_printed`` evaluates the
    closed-form eigenvector expression on the eigendecomposition of
    ``C_{k+1,k}``.  Both are reported together with their discrepancy, as is
    ``q_swapped``, the solution with the roles of b and p exchanged
    (``b = beta p + (1 - beta) q``).

    ``p - b`` is of order ``1 - beta``, which can be ~1e-9 on random loops, so
    recovering ``q`` needs more than double precision: by default the loop
    products and eigenproblems are evaluated with ``digits`` significant digits
    (mpmath).  ``digits=None`` uses float64, accurate to ~eps / |1 - beta|.
    """
    check_model(model)
    if digits is None:
        beta, b, p, q_res, q_pr, q_sw = _float_decomposition(model, k)
    else:
        beta, b, p, q_res, q_pr, q_sw = _mp_decomposition(model, k, digits)
    resid = float(np.max(np.abs(beta * b + (1.0 - beta) * q_res - p)))
    disc = float(np.max(np.abs(q_pr - q_res)))
    return AccuracyDecomposition(k, beta, b, p, q_pr, q_res, resid, disc, q_sw)


def correct_binary(belief, lam1, lam2):
    """``p = (l1 b + l2 (1 - b)) / (l1 + l2)`` for a two-state belief."""
    b = np.asarray(belief, dtype=np.float64)
    return (lam1 * b + lam2 * (1.0 - b)) / (lam1 + lam2)


def binary_correction(model, k, belief=None) -> np.ndarray:
    """Exact posterior at node k recovered from the BP belief of a binary model."""
    if model.alphabet_size != 2:
        raise ModelValidationError("binary correction needs D = 2")
    T = loop_transfer_matrices(model)
    w, _ = _sorted_eig(T.forward[k])
    if np.any(np.abs(w.imag) > IMAG_TOL * max(1.0, abs(w[0]))):
        raise DegeneracyError("complex eigenvalues in a 2x2 nonnegative transfer matrix")
    lam1, lam2 = float(w[0].real), float(w[1].real)
    if not lam1 > abs(lam2):
        raise DegeneracyError(f"no dominant eigenvalue at node {k} (l1={lam1}, l2={lam2})")
    b = steady_state_beliefs_eigen(model)[k] if belief is None else np.asarray(belief)
    return correct_binary(b, lam1, lam2)
