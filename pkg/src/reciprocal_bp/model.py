"""Hidden reciprocal models on a discrete loop.

A model over ``L`` nodes with alphabet ``{0..D-1}`` is stored as

* ``edge_potentials``: array ``(L, D, D)``; ``edge_potentials[k, a, b]`` is the
  compatibility of ``x_k = a`` and ``x_{(k+1) mod L} = b``;
* ``node_potentials``: array ``(L, D)``; ``node_potentials[k, a]`` is the
  evidence term for ``x_k = a`` given the (fixed) observation at node ``k``.

Potentials are unnormalized nonnegative float64 values.  Zeros are allowed;
the primitivity checks in :mod:`reciprocal_bp.diagnostics` decide whether the
convergence theory applies to a given instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelValidationError, SchemaError

PROB_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HiddenReciprocalModel:
    edge_potentials: np.ndarray
    node_potentials: np.ndarray

    def __post_init__(self):
        try:
            edges = _frozen(self.edge_potentials)
            nodes = _frozen(self.node_potentials)
        except (TypeError, ValueError) as exc:
            raise ModelValidationError(f"potentials are not rectangular arrays: {exc}") from exc
        if edges.ndim != 3 or edges.shape[1] != edges.shape[2]:
            raise ModelValidationError(f"edge potentials must have shape (L, D, D), got {edges.shape}")
        if nodes.ndim != 2 or nodes.shape != edges.shape[:2]:
            raise ModelValidationError(
                f"node potentials must have shape (L, D) = {edges.shape[:2]}, got {nodes.shape}"
            )
        object.__setattr__(self, "edge_potentials", edges)
        object.__setattr__(self, "node_potentials", nodes)

    @property
    def alphabet_size(self) -> int:
        return self.edge_potentials.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.edge_potentials.shape[0]

    def edge_nodes(self, k):
        """Return the node pair joined by edge ``k``."""
        return k % self.num_nodes, (k + 1) % self.num_nodes

    def with_node_potentials(self, node_potentials):
        return HiddenReciprocalModel(self.edge_potentials, node_potentials)

    def to_dict(self):
        return {
            "alphabet_size": self.alphabet_size,
            "num_nodes": self.num_nodes,
            "edge_potentials": self.edge_potentials.tolist(),
            "node_potentials": self.node_potentials.tolist(),
        }

    def __eq__(self, other):
        if not isinstance(other, HiddenReciprocalModel):
            return NotImplemented
        return np.array_equal(self.edge_potentials, other.edge_potentials) and np.array_equal(
            self.node_potentials, other.node_potentials
        )

    __hash__ = None


@dataclass(frozen=True)
class EmissionSpec:
    """Observation channel ``p(y=o | x=a) = emission_matrix[a, o]`` plus a record.

    ``None`` in ``observations`` marks an unobserved node (all-ones potential).
    """

    emission_matrix: np.ndarray
    observations: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "emission_matrix", _frozen(self.emission_matrix))
        object.__setattr__(self, "observations", tuple(self.observations))

    def violations(self):
        out = []
        E = self.emission_matrix
        if E.ndim != 2:
            return [f"emission matrix must be 2-D, got shape {E.shape}"]
        if np.any(E < 0) or not np.all(np.isfinite(E)):
            out.append("emission matrix has negative or non-finite entries")
        bad_rows = np.flatnonzero(np.abs(E.sum(axis=1) - 1.0) > PROB_TOL)
        if bad_rows.size:
            out.append(f"emission rows {bad_rows.tolist()} do not sum to 1")
        for k, o in enumerate(self.observations):
            if o is None:
                continue
            if not isinstance(o, (int, np.integer)) or not 0 <= o < E.shape[1]:
                out.append(f"observation {o!r} at node {k} out of range [0, {E.shape[1]})")
        return out


@dataclass(frozen=True)
class BeliefSet:
    beliefs: np.ndarray

    def __post_init__(self):
        b = _frozen(self.beliefs)
        if b.ndim != 2:
            raise ModelValidationError(f"beliefs must be (L, D), got shape {b.shape}")
        if np.any(b < 0) or np.any(np.abs(b.sum(axis=1) - 1.0) > PROB_TOL):
            raise ModelValidationError("beliefs must be nonnegative and sum to 1 per node")
        object.__setattr__(self, "beliefs", b)

    def __getitem__(self, k):
        return self.beliefs[k]

    def __len__(self):
        return self.beliefs.shape[0]

    def max_abs_diff(self, other) -> float:
        other = other.beliefs if isinstance(other, BeliefSet) else np.asarray(other)
        return float(np.max(np.abs(self.beliefs - other)))

    def tolist(self):
        return self.beliefs.tolist()


def normalize_rows(a):
    """L1-normalize the last axis. Rows summing to zero raise."""
    a = np.asarray(a, dtype=np.float64)
    s = a.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise ModelValidationError("cannot normalize an all-zero vector")
    return a / s


def validate_model(model: HiddenReciprocalModel) -> list[str]:
    """Return every invariant violation of ``model``; empty when valid."""
    out = []
    L, D = model.num_nodes, model.alphabet_size
    if L < 3:
        out.append(f"num_nodes < 3 (got {L}); a loop needs at least three nodes")
    if D < 1:
        out.append("alphabet_size < 1")
    E, psi = model.edge_potentials, model.node_potentials
    if not np.all(np.isfinite(E)) or not np.all(np.isfinite(psi)):
        out.append("non-finite potential entries")
    for k in range(L):
        if np.any(E[k] < 0):
            out.append(f"negative entry in edge potential {k}")
        if not np.any(E[k] > 0):
            out.append(f"degenerate edge potential {k} (all zeros)")
        if np.any(psi[k] < 0):
            out.append(f"negative entry in node potential {k}")
        if not np.any(psi[k] > 0):
            out.append(f"degenerate node potential {k} (all zeros)")
    return out


def check_model(model):
    """Raise :class:`ModelValidationError` unless ``model`` is valid."""
    problems = validate_model(model)
    if problems:
        raise ModelValidationError("; ".join(problems), problems)
    return model


def emissions_to_node_potentials(spec: EmissionSpec) -> np.ndarray:
    problems = spec.violations()
    if problems:
        raise ModelValidationError("; ".join(problems), problems)
    E = spec.emission_matrix
    cols = [np.ones(E.shape[0]) if o is None else E[:, o] for o in spec.observations]
    return np.array(cols, dtype=np.float64).reshape(len(cols), E.shape[0])


def random_model(D, L, seed=None, positivity_floor=0.0) -> HiddenReciprocalModel:
    """Draw every potential entry i.i.d. uniform on ``[positivity_floor, 1]``."""
    if D < 2 or L < 3:
        raise ModelValidationError(f"random_model needs D >= 2 and L >= 3, got D={D}, L={L}")
    if not 0.0 <= positivity_floor <= 1.0:
        raise ModelValidationError("positivity_floor must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    lo = positivity_floor

    def draw(shape):
        while True:
            a = lo + (1.0 - lo) * rng.random(shape)
            if np.any(a > 0):
                return a

    edges = np.array([draw((D, D)) for _ in range(L)])
    nodes = np.array([draw(D) for _ in range(L)])
    return HiddenReciprocalModel(edges, nodes)


def uniform_model(D, L) -> HiddenReciprocalModel:
    return HiddenReciprocalModel(np.ones((L, D, D)), np.ones((L, D)))


# -- JSON -------------------------------------------------------------------


def _array(doc, path, ndim):
    try:
        a = np.array(doc, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError("expected a rectangular numeric array", path) from None
    if a.ndim != ndim:
        raise SchemaError(f"expected a {ndim}-D array, got {a.ndim}-D", path)
    return a


def _int_field(doc, key, path="$"):
    if key not in doc:
        raise SchemaError("missing required field", f"{path}.{key}")
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError("expected an integer", f"{path}.{key}")
    return v


def model_from_dict(doc) -> HiddenReciprocalModel:
    """Parse the JSON model document.

    Either ``node_potentials`` or ``emission: {matrix, observations}`` supplies
    evidence; with neither, every node gets the all-ones potential.
    """
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object")
    D = _int_field(doc, "alphabet_size")
    L = _int_field(doc, "num_nodes")
    if "edge_potentials" not in doc:
        raise SchemaError("missing required field", "$.edge_potentials")
    raw_edges = doc["edge_potentials"]
    if not isinstance(raw_edges, list) or len(raw_edges) != L:
        raise SchemaError(f"expected a list of {L} matrices", "$.edge_potentials")
    edges = []
    for k, m in enumerate(raw_edges):
        a = _array(m, f"$.edge_potentials[{k}]", 2)
        if a.shape != (D, D):
            raise SchemaError(f"expected shape ({D}, {D}), got {a.shape}", f"$.edge_potentials[{k}]")
        edges.append(a)

    if "node_potentials" in doc and "emission" in doc:
        raise SchemaError("give node_potentials or emission, not both", "$")
    if "node_potentials" in doc:
        raw = doc["node_potentials"]
        if not isinstance(raw, list) or len(raw) != L:
            raise SchemaError(f"expected a list of {L} vectors", "$.node_potentials")
        nodes = []
        for k, v in enumerate(raw):
            a = _array(v, f"$.node_potentials[{k}]", 1)
            if a.shape != (D,):
                raise SchemaError(f"expected length {D}, got {a.shape[0]}", f"$.node_potentials[{k}]")
            nodes.append(a)
        nodes = np.array(nodes)
    elif "emission" in doc:
        em = doc["emission"]
        if not isinstance(em, dict):
            raise SchemaError("expected an object", "$.emission")
        if "matrix" not in em:
            raise SchemaError("missing required field", "$.emission.matrix")
        if "observations" not in em:
            raise SchemaError("missing required field", "$.emission.observations")
        mat = _array(em["matrix"], "$.emission.matrix", 2)
        if mat.shape[0] != D:
            raise SchemaError(f"expected {D} rows, got {mat.shape[0]}", "$.emission.matrix")
        obs = em["observations"]
        if not isinstance(obs, list) or len(obs) != L:
            raise SchemaError(f"expected a list of {L} symbols", "$.emission.observations")
        for k, o in enumerate(obs):
            if o is not None and (isinstance(o, bool) or not isinstance(o, int)):
                raise SchemaError("expected an integer symbol or null", f"$.emission.observations[{k}]")
        nodes = emissions_to_node_potentials(EmissionSpec(mat, obs))
    else:
        nodes = np.ones((L, D))
    return HiddenReciprocalModel(np.array(edges).reshape(L, D, D), nodes)
