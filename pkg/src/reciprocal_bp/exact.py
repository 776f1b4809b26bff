"""Exact oracles and structural checks for loop models.

Joint tables are indexed C-order over ``(x_0, ..., x_{L-1})``, i.e. node 0 is
the most significant digit of the mixed-radix configuration index.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneracyError,
    EnumerationCapError,
    ModelValidationError,
    NonPositiveTableError,
    SchemaError,
)
from .model import BeliefSet, HiddenReciprocalModel, check_model

ENUMERATION_CAP = 2**24
CI_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class JointTable:
    alphabet_size: int
    num_nodes: int
    probabilities: np.ndarray
    partition_function: float = float("nan")

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=np.float64).reshape(-1)
        if p.size != self.alphabet_size**self.num_nodes:
            raise ModelValidationError(
                f"table has {p.size} entries, expected {self.alphabet_size}^{self.num_nodes}"
            )
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ModelValidationError("joint table must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @property
    def tensor(self):
        return self.probabilities.reshape((self.alphabet_size,) * self.num_nodes)

    def is_positive(self):
        return bool(np.all(self.probabilities > 0))

    def to_dict(self):
        return {
            "alphabet_size": self.alphabet_size,
            "num_nodes": self.num_nodes,
            "probabilities": self.probabilities.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(int(doc["alphabet_size"]), int(doc["num_nodes"]), np.asarray(doc["probabilities"], float))
        except KeyError as exc:
            raise SchemaError("missing required field", f"$.{exc.args[0]}") from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(exc)) from None

    @classmethod
    def from_weights(cls, weights):
        w = np.asarray(weights, dtype=np.float64)
        Z = float(w.sum())
        if not Z > 0:
            raise DegeneracyError("partition function is zero: every configuration has weight 0")
        return cls(w.shape[0], w.ndim, w / Z, Z)


@dataclass(frozen=True)
class UndirectedGraphSkeleton:
    num_nodes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        norm = set()
        for e in self.edges:
            i, j = e
            if i == j:
                raise ModelValidationError(f"self-loop at node {i}")
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise ModelValidationError(f"edge {e} references a missing node")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def cycle(cls, L):
        return cls(L, frozenset((k, (k + 1) % L) for k in range(L)))

    def neighbors(self, i):
        return {b if a == i else a for a, b in self.edges if i in (a, b)}

    def to_dict(self):
        return {"num_nodes": self.num_nodes, "edges": [list(e) for e in sorted(self.edges)]}

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(int(doc["num_nodes"]), frozenset(tuple(e) for e in doc["edges"]))
        except KeyError as exc:
            raise SchemaError("missing required field", f"$.{exc.args[0]}") from None


# -- joint distribution -------------------------------------------------------


def unnormalized_weights(model, cap=ENUMERATION_CAP):
    """Tensor of ``prod_k psi_{k,k+1} * prod_k psi_k`` over all configurations."""
    D, L = model.alphabet_size, model.num_nodes
    if D**L > cap:
        raise EnumerationCapError(f"{D}^{L} = {D**L} configurations exceed the enumeration cap {cap}")
    w = np.ones((D,) * L)
    for k in range(L):
        shape = [1] * L
        shape[k] = D
        w = w * model.node_potentials[k].reshape(shape)
    for k in range(L):
        i, j = k, (k + 1) % L
        E = model.edge_potentials[k]
        shape = [1] * L
        shape[i] = shape[j] = D
        # the closing edge joins node L-1 (row) to node 0 (column)
        w = w * (E if i < j else E.T).reshape(shape)
    return w


def joint_table(model: HiddenReciprocalModel, cap=ENUMERATION_CAP) -> JointTable:
    check_model(model)
    return JointTable.from_weights(unnormalized_weights(model, cap))


def exact_marginals_bruteforce(table: JointTable) -> BeliefSet:
    T = table.tensor
    L = table.num_nodes
    out = [T.sum(axis=tuple(a for a in range(L) if a != k)) for k in range(L)]
    out = np.array(out)
    return BeliefSet(out / out.sum(axis=1, keepdims=True))


def _loop_diagonals(model):
    """Diagonal of ``D_k E_k D_{k+1} E_{k+1} ... D_{k-1} E_{k-1}`` for each k.

    Uses scaled prefix/suffix products, so the cost is O(L D^3).  Row sums of
    the result are proportional to (but not equal to) the node marginals.
    """
    L, D = model.num_nodes, model.alphabet_size
    A = model.node_potentials[:, :, None] * model.edge_potentials
    prefix = [np.eye(D)]
    for k in range(L - 1):
        P = prefix[-1] @ A[k]
        prefix.append(P / max(P.max(), np.finfo(float).tiny))
    suffix = [None] * (L + 1)
    suffix[L] = np.eye(D)
    for k in range(L - 1, -1, -1):
        S = A[k] @ suffix[k + 1]
        suffix[k] = S / max(S.max(), np.finfo(float).tiny)
    return np.array([np.einsum("ab,ba->a", suffix[k], prefix[k]) for k in range(L)])


def exact_marginals_transfer(model: HiddenReciprocalModel) -> BeliefSet:
    check_model(model)
    diag = _loop_diagonals(model)
    sums = diag.sum(axis=1)
    bad = np.flatnonzero(~(sums > 0))
    if bad.size:
        raise DegeneracyError(f"loop product has all-zero diagonal at node(s) {bad.tolist()}")
    return BeliefSet(diag / sums[:, None])


def pairwise_marginals_bruteforce(table: JointTable):
    """Array ``(L, D, D)`` of edge marginals ``p(x_k, x_{k+1 mod L})``."""
    T, L = table.tensor, table.num_nodes
    out = []
    for k in range(L):
        i, j = k, (k + 1) % L
        m = T.sum(axis=tuple(a for a in range(L) if a not in (i, j)))
        out.append(m if i < j else m.T)
    return np.array(out)


# -- conditional independence --------------------------------------------------


def _marginal_over(table, nodes):
    nodes = list(nodes)
    T = table.tensor
    rest = tuple(a for a in range(table.num_nodes) if a not in nodes)
    m = T.sum(axis=rest) if rest else T
    # sum() keeps the remaining axes in increasing order; reorder to `nodes`
    order = sorted(nodes)
    return np.transpose(m, [order.index(n) for n in nodes]) if nodes else np.asarray(m)


def ci_gap(table: JointTable, A, B, C) -> float:
    """Largest ``|p(a,b|c) - p(a|c) p(b|c)|`` over assignments with ``p(c) > 0``."""
    A, B, C = list(A), list(B), list(C)
    if set(A) & set(B) or set(A) & set(C) or set(B) & set(C):
        raise ModelValidationError("A, B, C must be disjoint")
    if not A or not B:
        return 0.0
    D = table.alphabet_size
    m = _marginal_over(table, A + B + C).reshape(D ** len(A), D ** len(B), D ** len(C))
    pc = m.sum(axis=(0, 1))
    keep = pc > 0
    if not np.any(keep):
        return 0.0
    cond = m[:, :, keep] / pc[keep]
    pa = cond.sum(axis=1, keepdims=True)
    pb = cond.sum(axis=0, keepdims=True)
    return float(np.max(np.abs(cond - pa * pb)))


def ci_test(table: JointTable, A, B, C, tol=CI_TOL) -> bool:
    """True iff ``X_A`` and ``X_B`` are conditionally independent given ``X_C``."""
    return ci_gap(table, A, B, C) <= tol


def markov_blanket(table: JointTable, k, tol=CI_TOL, allow_nonpositive=False) -> frozenset:
    """Minimal ``U`` with ``X_k`` independent of the remaining nodes given ``X_U``.

    Elements are pruned greedily from the full neighbourhood, then every
    single-element deletion is re-tested to certify minimality.  For
    non-positive tables the blanket need not be unique; this raises unless
    ``allow_nonpositive`` is set, in which case one minimal blanket is returned.
    """
    if not table.is_positive() and not allow_nonpositive:
        raise NonPositiveTableError("Markov blanket is unique only for positive distributions")
    others = [j for j in range(table.num_nodes) if j != k]

    def separates(U):
        rest = [j for j in others if j not in U]
        return ci_test(table, [k], rest, sorted(U), tol)

    U = set(others)
    for j in others:
        if separates(U - {j}):
            U.discard(j)
    for j in U:
        if separates(U - {j}):
            raise DegeneracyError(f"blanket of node {k} is not minimal: {j} is removable")
    return frozenset(U)


def minimal_imap(table: JointTable, method="pairwise", tol=CI_TOL) -> UndirectedGraphSkeleton:
    """Minimal I-map of a positive table.

    ``pairwise`` joins i, j unless they are independent given everything else;
    ``blanket`` joins i to each member of its Markov blanket.  ``both`` runs the
    two constructions and raises if they disagree.
    """
    if not table.is_positive():
        raise NonPositiveTableError("minimal I-map construction assumes a positive distribution")
    L = table.num_nodes

    def pairwise():
        edges = set()
        for i, j in itertools.combinations(range(L), 2):
            rest = [x for x in range(L) if x not in (i, j)]
            if not ci_test(table, [i], [j], rest, tol):
                edges.add((i, j))
        return frozenset(edges)

    def blanket():
        edges = set()
        for i in range(L):
            for j in markov_blanket(table, i, tol):
                edges.add((min(i, j), max(i, j)))
        return frozenset(edges)

    if method == "pairwise":
        return UndirectedGraphSkeleton(L, pairwise())
    if method == "blanket":
        return UndirectedGraphSkeleton(L, blanket())
    if method == "both":
        a, b = pairwise(), blanket()
        if a != b:
            raise DegeneracyError(
                f"pairwise and blanket I-maps disagree on {sorted(a ^ b)}; CI tolerance too tight or loose"
            )
        return UndirectedGraphSkeleton(L, a)
    raise ValueError(f"unknown method {method!r}")


def cyclic_intervals(L):
    """Yield ``(t0, t1, interior, exterior)`` for every proper cyclic interval."""
    for t0 in range(L):
        for span in range(2, L - 1):
            t1 = (t0 + span) % L
            interior = [(t0 + s) % L for s in range(1, span)]
            exterior = [(t1 + s) % L for s in range(1, L - span)]
            yield t0, t1, interior, exterior


def pmap_check_reciprocal(table: JointTable, tol=CI_TOL) -> dict:
    """Check interior/exterior independence given the endpoints, for every interval."""
    L = table.num_nodes
    if L < 4:
        raise ModelValidationError("interval checks need L >= 4 (the 3-loop is a complete graph)")
    checks = []
    for t0, t1, interior, exterior in cyclic_intervals(L):
        gap = ci_gap(table, interior, exterior, [t0, t1])
        checks.append(
            {"t0": t0, "t1": t1, "interior": interior, "exterior": exterior, "gap": gap, "passed": gap <= tol}
        )
    return {"num_nodes": L, "tol": tol, "checks": checks, "passed": all(c["passed"] for c in checks)}


# -- graph structure ---------------------------------------------------------


def maximum_cardinality_order(g: UndirectedGraphSkeleton):
    """Maximum cardinality search; the reverse of the visit order is a PEO iff g is chordal."""
    n = g.num_nodes
    adj = [g.neighbors(i) for i in range(n)]
    weight = [0] * n
    visited = []
    unvisited = set(range(n))
    while unvisited:
        v = max(sorted(unvisited), key=lambda u: weight[u])
        visited.append(v)
        unvisited.discard(v)
        for u in adj[v] & unvisited:
            weight[u] += 1
    return visited


def chordality_check(g: UndirectedGraphSkeleton) -> bool:
    """True iff every cycle of length > 3 has a chord."""
    order = maximum_cardinality_order(g)
    pos = {v: i for i, v in enumerate(order)}
    adj = [g.neighbors(i) for i in range(g.num_nodes)]
    for v in order:
        earlier = [u for u in adj[v] if pos[u] < pos[v]]
        if not earlier:
            continue
        # the latest earlier neighbour must see all the other earlier neighbours
        parent = max(earlier, key=pos.__getitem__)
        if any(u != parent and u not in adj[parent] for u in earlier):
            return False
    return True


@dataclass(frozen=True)
class FactorGraph:
    variables: tuple
    factors: tuple  # (name, scope, table)
    incidences: tuple  # (factor index, variable)

    def to_dict(self):
        return {
            "variables": list(self.variables),
            "factors": [{"name": n, "scope": list(s)} for n, s, _ in self.factors],
            "incidences": [list(i) for i in self.incidences],
        }


def build_factor_graph(model: HiddenReciprocalModel, include_unary=True) -> FactorGraph:
    """One pairwise factor per loop edge plus (optionally) one unary factor per node."""
    check_model(model)
    L = model.num_nodes
    factors = []
    for k in range(L):
        i, j = model.edge_nodes(k)
        factors.append((f"psi_{i}_{j}", (i, j), model.edge_potentials[k]))
    if include_unary:
        for k in range(L):
            factors.append((f"psi_{k}", (k,), model.node_potentials[k]))
    incidences = tuple((f, v) for f, (_, scope, _) in enumerate(factors) for v in scope)
    return FactorGraph(tuple(range(L)), tuple(factors), incidences)


# -- sampling --------------------------------------------------------------------


def _categorical(rng, probs):
    """Row-wise categorical draws from a (n, D) probability array."""
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random((probs.shape[0], 1))
    return np.minimum((u > cdf).sum(axis=1), probs.shape[1] - 1)


def sample_joint(model: HiddenReciprocalModel, n_samples, seed=None) -> np.ndarray:
    """Exact samples, shape ``(n_samples, L)``.

    ``x_0`` is drawn from its exact marginal; given ``x_0`` the loop opens into
    a chain with a boundary factor, sampled forward against backward-accumulated
    transfer vectors.
    """
    check_model(model)
    rng = np.random.default_rng(seed)
    L, D = model.num_nodes, model.alphabet_size
    E, psi = model.edge_potentials, model.node_potentials
    p0 = exact_marginals_transfer(model)[0]
    out = np.empty((n_samples, L), dtype=np.int64)
    out[:, 0] = _categorical(rng, np.broadcast_to(p0, (n_samples, D)))
    for a in range(D):
        rows = np.flatnonzero(out[:, 0] == a)
        if rows.size == 0:
            continue
        # back[j](x) is proportional to the weight of x_j..x_{L-1} given x_j = x and x_0 = a
        back = [None] * L
        v = psi[L - 1] * E[L - 1][:, a]
        back[L - 1] = v / v.sum()
        for j in range(L - 2, 0, -1):
            v = psi[j] * (E[j] @ back[j + 1])
            back[j] = v / v.sum()
        prev = np.full(rows.size, a)
        for j in range(1, L):
            probs = E[j - 1][prev] * back[j][None, :]
            prev = _categorical(rng, probs)
            out[rows, j] = prev
    return out
