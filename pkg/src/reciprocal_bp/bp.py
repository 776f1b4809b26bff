"""Parallel loopy belief propagation on the hidden reciprocal loop.

Message conventions (all indices mod L):

* ``forward[k]``  is the message from node k-1 into node k;
* ``backward[k]`` is the message from node k+1 into node k.

With ``E_k = edge_potentials[k]`` (rows ``x_k``, columns ``x_{k+1}``) the
edge-transition matrices are ``M_{k,k+1} = E_k^T`` and ``M_{k+1,k} = E_k``, and a
synchronous sweep reads

    forward'[k]  = alpha_f * E_{k-1}^T (psi_{k-1} * forward[k-1])
    backward'[k] = alpha_b * E_k       (psi_{k+1} * backward[k+1])

One sweep is one time unit, so every message returns to its own edge after L
sweeps, multiplied by its loop transfer matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegeneracyError, NotPrimitiveError
from .hilbert import primitivity_index, projective_gap
from .model import BeliefSet, HiddenReciprocalModel, check_model

DEFAULT_TOL = 1e-10


def default_t_max(model):
    return 10 * model.num_nodes * model.alphabet_size**2


@dataclass(frozen=True, eq=False)
class MessageSet:
    forward: np.ndarray
    backward: np.ndarray
    t: int = 0

    def __post_init__(self):
        for name in ("forward", "backward"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def normalized(self):
        return replace(
            self,
            forward=self.forward / self.forward.sum(axis=1, keepdims=True),
            backward=self.backward / self.backward.sum(axis=1, keepdims=True),
        )

    def to_dict(self):
        return {"t": self.t, "forward": self.forward.tolist(), "backward": self.backward.tolist()}


def init_messages(model, mode="uniform", seed=None) -> MessageSet:
    L, D = model.num_nodes, model.alphabet_size
    if mode == "uniform":
        f = np.full((L, D), 1.0 / D)
        b = np.full((L, D), 1.0 / D)
    elif mode in ("random", "seeded-random"):
        rng = np.random.default_rng(seed)
        # open interval keeps every entry strictly positive
        f = rng.uniform(np.finfo(float).eps, 1.0, (L, D))
        b = rng.uniform(np.finfo(float).eps, 1.0, (L, D))
        f /= f.sum(axis=1, keepdims=True)
        b /= b.sum(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    return MessageSet(f, b, 0)


def _check_nonzero(a, direction):
    s = a.sum(axis=1)
    bad = np.flatnonzero(~(s > 0))
    if bad.size:
        k = int(bad[0])
        if direction == "forward":
            edge = f"{(k - 1) % a.shape[0]}->{k}"
        else:
            edge = f"{(k + 1) % a.shape[0]}->{k}"
        raise DegeneracyError(f"{direction} message on edge {edge} vanished (degenerate potentials)")
    return s


def bp_sweep(model: HiddenReciprocalModel, msgs: MessageSet, normalize=True) -> MessageSet:
    """One synchronous (Jacobi) update of every message from the previous iterate."""
    E, psi = model.edge_potentials, model.node_potentials
    src_f = np.roll(psi * msgs.forward, 1, axis=0)  # row k holds psi_{k-1} * forward[k-1]
    new_f = np.einsum("kab,ka->kb", np.roll(E, 1, axis=0), src_f)
    src_b = np.roll(psi * msgs.backward, -1, axis=0)  # row k holds psi_{k+1} * backward[k+1]
    new_b = np.einsum("kab,kb->ka", E, src_b)
    sf = _check_nonzero(new_f, "forward")
    sb = _check_nonzero(new_b, "backward")
    if normalize:
        new_f /= sf[:, None]
        new_b /= sb[:, None]
    return MessageSet(new_f, new_b, msgs.t + 1)


def message_change(a: MessageSet, b: MessageSet) -> float:
    """Largest same-edge, same-direction Hilbert distance between two message sets."""
    gaps = [projective_gap(x, y) for x, y in zip(a.forward, b.forward)]
    gaps += [projective_gap(x, y) for x, y in zip(a.backward, b.backward)]
    return max(gaps)


@dataclass
class BPResult:
    messages: MessageSet
    trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return self.messages.t


def bp_run(model, init: MessageSet | None = None, tol=DEFAULT_TOL, t_max=None, normalize=True) -> BPResult:
    """Sweep until the per-sweep message change drops below ``tol`` or ``t_max`` sweeps."""
    check_model(model)
    if not tol > 0:
        raise ValueError("tol must be positive")
    msgs = init_messages(model) if init is None else init
    t_max = default_t_max(model) if t_max is None else t_max
    trace = []
    for _ in range(t_max):
        new = bp_sweep(model, msgs, normalize=normalize)
        d = message_change(new, msgs)
        trace.append(d)
        msgs = new
        if d < tol:
            return BPResult(msgs, trace, True)
        if not normalize and not (np.all(np.isfinite(msgs.forward)) and np.all(np.isfinite(msgs.backward))):
            raise DegeneracyError("unnormalized messages overflowed")
    return BPResult(msgs, trace, False)


def compute_beliefs(model, msgs: MessageSet) -> BeliefSet:
    prod = model.node_potentials * msgs.forward * msgs.backward
    s = prod.sum(axis=1)
    bad = np.flatnonzero(~(s > 0))
    if bad.size:
        raise DegeneracyError(f"belief product vanished at node(s) {bad.tolist()}")
    return BeliefSet(prod / s[:, None])


@dataclass(frozen=True, eq=False)
class LoopTransferMatrices:
    """``forward[k] = C_{k-1,k}`` and ``backward[k] = C_{k+1,k}``; ``diagonals[k]`` holds ``D_k``."""

    forward: np.ndarray
    backward: np.ndarray
    diagonals: np.ndarray

    def similarity_residual(self, k) -> float:
        """``max |D_k^{-1} C_{k-1,k}^T D_k - C_{k+1,k}|``, or nan when ``D_k`` is singular."""
        d = self.diagonals[k]
        if np.any(d == 0):
            return math.nan
        pred = (self.forward[k].T * d[None, :]) / d[:, None]
        return float(np.max(np.abs(pred - self.backward[k])))


def loop_transfer_matrices(model) -> LoopTransferMatrices:
    """Loop products, built factor by factor around the cycle.

    ``C_{k-1,k} = M_{k-1,k} D_{k-1} M_{k-2,k-1} D_{k-2} ... M_{k,k+1} D_k``
    ``C_{k+1,k} = M_{k+1,k} D_{k+1} M_{k+2,k+1} D_{k+2} ... M_{k,k-1} D_k``
    """
    check_model(model)
    L = model.num_nodes
    E, psi = model.edge_potentials, model.node_potentials
    fwd, bwd = [], []
    for k in range(L):
        C = np.eye(model.alphabet_size)
        for s in range(1, L + 1):
            j = (k - s) % L  # edge j carries the message j -> j+1
            C = C @ (E[j].T * psi[j][None, :])
        fwd.append(C)
        C = np.eye(model.alphabet_size)
        for s in range(L):
            j = (k + s) % L  # edge j carries the message j+1 -> j
            C = C @ (E[j] * psi[(j + 1) % L][None, :])
        bwd.append(C)
    return LoopTransferMatrices(np.array(fwd), np.array(bwd), psi.copy())


def perron_vector(C):
    """Nonnegative eigenvector of the eigenvalue with largest real part, L1-normalized."""
    w, V = np.linalg.eig(C)
    i = int(np.argmax(w.real))
    # the Perron eigenvalue is real, so its eigenvector is real up to a phase
    v = V[:, i]
    v = np.abs((v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))).real)
    return v / v.sum(), float(w[i].real)


def steady_state_beliefs_eigen(model) -> BeliefSet:
    """BP fixed point from the Perron vectors of the loop transfer matrices."""
    T = loop_transfer_matrices(model)
    failed = [
        k
        for k in range(model.num_nodes)
        if primitivity_index(T.forward[k]) is None or primitivity_index(T.backward[k]) is None
    ]
    if failed:
        raise NotPrimitiveError(f"loop transfer matrices are not primitive at node(s) {failed}")
    out = []
    for k in range(model.num_nodes):
        v, _ = perron_vector(T.forward[k])
        w, _ = perron_vector(T.backward[k])
        b = model.node_potentials[k] * v * w
        out.append(b / b.sum())
    return BeliefSet(np.array(out))
