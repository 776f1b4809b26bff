import itertools
import json

import networkx as nx
import numpy as np
import pytest
from conftest import with_evidence
from oracles import dict_ci_gap, nested_loop_marginals, nested_loop_pairwise, nested_loop_weights

from reciprocal_bp.errors import EnumerationCapError, ModelValidationError, NonPositiveTableError
from reciprocal_bp.exact import (
    JointTable,
    UndirectedGraphSkeleton,
    build_factor_graph,
    chordality_check,
    ci_gap,
    ci_test,
    exact_marginals_bruteforce,
    exact_marginals_transfer,
    joint_table,
    markov_blanket,
    minimal_imap,
    pairwise_marginals_bruteforce,
    pmap_check_reciprocal,
    sample_joint,
)
from reciprocal_bp.model import HiddenReciprocalModel, random_model, uniform_model


def positive_loop(L, seed, D=2):
    return random_model(D, L, seed=seed, positivity_floor=0.1)


def table_from_dict(probs, D, L):
    return JointTable(D, L, [probs[x] for x in itertools.product(range(D), repeat=L)])


# -- joint table and marginals ---------------------------------------------------


def test_uniform_joint():
    t = joint_table(uniform_model(2, 3))
    np.testing.assert_allclose(t.probabilities, np.full(8, 1 / 8), rtol=0, atol=1e-15)


def test_hard_evidence_zeroes_other_states():
    t = joint_table(with_evidence(random_model(2, 4, seed=0), 0, 0))
    assert np.all(t.tensor[1] == 0)


def test_partition_function_matches_nested_loops():
    m = random_model(2, 4, seed=3)
    w = nested_loop_weights(m.edge_potentials.tolist(), m.node_potentials)
    t = joint_table(m)
    assert t.partition_function == pytest.approx(sum(w.values()), rel=1e-13)
    for x, v in w.items():
        assert t.tensor[x] == pytest.approx(v / t.partition_function, rel=1e-12)


def test_degenerate_joint_raises():
    E = np.ones((3, 2, 2))
    E[0] = [[0, 1], [0, 0]]
    E[1] = [[0, 0], [1, 0]]  # forces x_1 = 1, then x_2 = 0 ... and x_0 = 0 -> edge 2 closes
    psi = np.ones((3, 2))
    psi[2] = [0, 1]  # contradicts the forced x_2 = 0
    from reciprocal_bp.errors import DegeneracyError

    with pytest.raises(DegeneracyError):
        joint_table(HiddenReciprocalModel(E, psi))


def test_enumeration_cap():
    with pytest.raises(EnumerationCapError):
        joint_table(uniform_model(4, 20))
    with pytest.raises(EnumerationCapError):
        joint_table(uniform_model(2, 5), cap=16)


def test_bruteforce_marginals_uniform():
    b = exact_marginals_bruteforce(joint_table(uniform_model(3, 4)))
    np.testing.assert_allclose(b.beliefs, 1 / 3, atol=1e-15)


def test_bruteforce_hard_evidence():
    b = exact_marginals_bruteforce(joint_table(with_evidence(random_model(3, 5, seed=2), 0, 0)))
    np.testing.assert_array_equal(b[0], [1, 0, 0])


@pytest.mark.parametrize("D,L,seed", [(2, 6, 0), (3, 5, 1), (2, 3, 2), (4, 4, 3)])
def test_transfer_matches_nested_loops(D, L, seed):
    m = random_model(D, L, seed=seed)
    ref, _ = nested_loop_marginals(m.edge_potentials, m.node_potentials)
    np.testing.assert_allclose(exact_marginals_transfer(m).beliefs, ref, atol=1e-10)
    np.testing.assert_allclose(exact_marginals_bruteforce(joint_table(m)).beliefs, ref, atol=1e-10)


def test_transfer_uniform():
    np.testing.assert_allclose(exact_marginals_transfer(uniform_model(2, 7)).beliefs, 0.5, atol=1e-15)


def test_transfer_with_hard_evidence():
    m = with_evidence(random_model(3, 6, seed=4), 2, 1)
    ref, _ = nested_loop_marginals(m.edge_potentials, m.node_potentials)
    np.testing.assert_allclose(exact_marginals_transfer(m).beliefs, ref, atol=1e-12)


def test_identity_edge_contracts_the_loop():
    m = random_model(3, 5, seed=9, positivity_floor=0.1)
    E = np.array(m.edge_potentials)
    E[1] = np.eye(3)  # ties x_1 = x_2
    m = HiddenReciprocalModel(E, m.node_potentials)
    psi = m.node_potentials
    small = HiddenReciprocalModel(
        np.array([E[0], E[2], E[3], E[4]]), np.array([psi[0], psi[1] * psi[2], psi[3], psi[4]])
    )
    big_ref, _ = nested_loop_marginals(m.edge_potentials, m.node_potentials)
    small_ref, _ = nested_loop_marginals(small.edge_potentials, small.node_potentials)
    got = exact_marginals_transfer(m).beliefs
    np.testing.assert_allclose(got, big_ref, atol=1e-12)
    np.testing.assert_allclose(got[[0, 1, 3, 4]], small_ref, atol=1e-12)
    np.testing.assert_allclose(got[2], small_ref[1], atol=1e-12)


def test_transfer_underflow_safe():
    m = random_model(2, 400, seed=5, positivity_floor=1e-3)
    b = exact_marginals_transfer(m)
    assert np.all(np.isfinite(b.beliefs))


def test_pairwise_marginals_match_oracle():
    m = random_model(2, 5, seed=6)
    np.testing.assert_allclose(
        pairwise_marginals_bruteforce(joint_table(m)), nested_loop_pairwise(m.edge_potentials, m.node_potentials),
        atol=1e-12,
    )


def test_joint_table_json_round_trip():
    t = joint_table(random_model(2, 4, seed=1))
    t2 = JointTable.from_dict(json.loads(json.dumps(t.to_dict())))
    np.testing.assert_array_equal(t.probabilities, t2.probabilities)


# -- conditional independence ----------------------------------------------------


def test_product_distribution_everything_independent():
    rng = np.random.default_rng(0)
    margs = rng.random((4, 2))
    margs /= margs.sum(axis=1, keepdims=True)
    p = np.einsum("a,b,c,d->abcd", *margs)
    t = JointTable(2, 4, p)
    for A, B, C in [([0], [1], []), ([0], [2, 3], [1]), ([1, 2], [3], [0])]:
        assert ci_test(t, A, B, C)


def test_loop_interval_ci_holds():
    t = joint_table(positive_loop(4, seed=1))
    assert ci_test(t, [0], [2], [1, 3])


def test_loop_single_separator_fails():
    m = positive_loop(4, seed=1)
    t = joint_table(m)
    probs = dict(zip(itertools.product(range(2), repeat=4), t.probabilities))
    gap = dict_ci_gap(probs, 2, 4, [0], [2], [1])
    assert gap > 1e-4  # oracle: far from independent
    assert ci_gap(t, [0], [2], [1]) == pytest.approx(gap, rel=1e-9)
    assert not ci_test(t, [0], [2], [1])


def test_ci_symmetric():
    t = joint_table(random_model(2, 5, seed=3))
    for A, B, C in [([0], [2], [1]), ([0, 1], [3], [4]), ([2], [4, 0], [1, 3])]:
        assert ci_gap(t, A, B, C) == pytest.approx(ci_gap(t, B, A, C), abs=1e-15)


def test_ci_requires_disjoint():
    t = joint_table(uniform_model(2, 4))
    with pytest.raises(ModelValidationError):
        ci_test(t, [0], [0], [1])


def test_markov_blanket_of_loop_node():
    t = joint_table(positive_loop(5, seed=2))
    assert markov_blanket(t, 2) == {1, 3}
    assert markov_blanket(t, 0) == {4, 1}


def test_markov_blanket_product_is_empty():
    p = np.einsum("a,b,c->abc", [0.2, 0.8], [0.5, 0.5], [0.3, 0.7])
    assert markov_blanket(JointTable(2, 3, p), 1) == frozenset()


def test_markov_blanket_generic_table_is_everything():
    rng = np.random.default_rng(11)
    p = rng.random(2**4) + 0.1
    t = JointTable(2, 4, p / p.sum())
    assert markov_blanket(t, 0) == {1, 2, 3}


def test_markov_blanket_nonpositive_refuses():
    t = joint_table(with_evidence(random_model(2, 4, seed=0), 0, 0))
    with pytest.raises(NonPositiveTableError):
        markov_blanket(t, 1)
    assert markov_blanket(t, 1, allow_nonpositive=True) <= {0, 2, 3}


@pytest.mark.parametrize("method", ["pairwise", "blanket", "both"])
def test_minimal_imap_of_loop_is_cycle(method):
    t = joint_table(positive_loop(5, seed=3))
    assert minimal_imap(t, method).edges == UndirectedGraphSkeleton.cycle(5).edges


def test_minimal_imap_product_is_empty():
    p = np.einsum("a,b,c,d->abcd", [0.2, 0.8], [0.5, 0.5], [0.3, 0.7], [0.6, 0.4])
    assert minimal_imap(JointTable(2, 4, p), "both").edges == frozenset()


def test_minimal_imap_of_chain():
    rng = np.random.default_rng(4)
    psi01, psi12 = rng.random((2, 2)) + 0.1, rng.random((2, 2)) + 0.1
    w = np.einsum("ab,bc->abc", psi01, psi12)
    t = JointTable(2, 3, w / w.sum())
    probs = dict(zip(itertools.product(range(2), repeat=3), t.probabilities))
    assert dict_ci_gap(probs, 2, 3, [0], [2], [1]) < 1e-15
    assert minimal_imap(t, "both").edges == {(0, 1), (1, 2)}


def test_pmap_check_passes_on_loop():
    rep = pmap_check_reciprocal(joint_table(positive_loop(5, seed=4, D=3)))
    assert rep["passed"] and len(rep["checks"]) == 5 * 2


def test_pmap_check_uniform():
    assert pmap_check_reciprocal(joint_table(uniform_model(2, 4)))["passed"]


def test_pmap_check_detects_chord():
    m = positive_loop(5, seed=5)
    w = joint_table(m).tensor * np.array([[3.0, 0.2], [0.5, 2.0]])[:, None, :, None, None]
    t = JointTable(2, 5, w / w.sum())
    rep = pmap_check_reciprocal(t)
    assert not rep["passed"]
    failed = [(c["t0"], c["t1"]) for c in rep["checks"] if not c["passed"]]
    # the chord 0-2 crosses exactly the intervals that separate node 0 from node 2
    assert failed
    for t0, t1 in failed:
        c = next(c for c in rep["checks"] if (c["t0"], c["t1"]) == (t0, t1))
        assert (0 in c["interior"] and 2 in c["exterior"]) or (2 in c["interior"] and 0 in c["exterior"])


def test_pmap_check_needs_four_nodes():
    with pytest.raises(ModelValidationError):
        pmap_check_reciprocal(joint_table(uniform_model(2, 3)))


# -- graphs --------------------------------------------------------------------


@pytest.mark.parametrize("L", range(3, 10))
def test_cycle_chordality(L):
    assert chordality_check(UndirectedGraphSkeleton.cycle(L)) == (L == 3)


def test_four_cycle_with_chord_is_chordal():
    g = UndirectedGraphSkeleton(4, frozenset({(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)}))
    assert chordality_check(g)


def test_chordality_agrees_with_networkx():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        edges = {(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.45}
        g = nx.Graph()
        g.add_nodes_from(range(n))
        g.add_edges_from(edges)
        assert chordality_check(UndirectedGraphSkeleton(n, frozenset(edges))) == nx.is_chordal(g)


def test_skeleton_rejects_self_loop():
    with pytest.raises(ModelValidationError):
        UndirectedGraphSkeleton(3, frozenset({(1, 1)}))


def test_skeleton_json():
    g = UndirectedGraphSkeleton.cycle(4)
    assert UndirectedGraphSkeleton.from_dict(json.loads(json.dumps(g.to_dict()))) == g


def test_factor_graph_counts():
    fg = build_factor_graph(random_model(2, 5, seed=0))
    pair = [f for f in fg.factors if len(f[1]) == 2]
    unary = [f for f in fg.factors if len(f[1]) == 1]
    assert len(pair) == 5 and len(unary) == 5 and len(fg.incidences) == 15
    assert all(len(scope) == 2 for _, scope, _ in pair)
    assert {scope for _, scope, _ in pair} == {(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)}


def test_factor_graph_without_unary():
    fg = build_factor_graph(uniform_model(2, 4), include_unary=False)
    assert len(fg.factors) == 4 and len(fg.incidences) == 8


# -- sampling ------------------------------------------------------------------


def test_sample_hard_evidence():
    m = with_evidence(random_model(2, 4, seed=1), 0, 1)
    assert np.all(sample_joint(m, 2000, seed=0)[:, 0] == 1)


def test_sample_deterministic():
    m = random_model(3, 4, seed=1)
    np.testing.assert_array_equal(sample_joint(m, 500, seed=9), sample_joint(m, 500, seed=9))


def test_uniform_sample_marginals_within_binomial_band():
    n, D = 100_000, 3
    s = sample_joint(uniform_model(D, 4), n, seed=1)
    sigma = np.sqrt((1 / D) * (1 - 1 / D) / n)
    for k in range(4):
        freq = np.bincount(s[:, k], minlength=D) / n
        assert np.all(np.abs(freq - 1 / D) <= 3 * sigma)


@pytest.mark.slow
def test_sample_pairwise_marginals_within_3_sigma():
    m = random_model(2, 5, seed=3)
    n = 1_000_000
    s = sample_joint(m, n, seed=2)
    ref = nested_loop_pairwise(m.edge_potentials, m.node_potentials)
    for k in range(5):
        counts = np.zeros((2, 2))
        np.add.at(counts, (s[:, k], s[:, (k + 1) % 5]), 1)
        sigma = np.sqrt(ref[k] * (1 - ref[k]) / n)
        assert np.all(np.abs(counts / n - ref[k]) <= 3 * sigma)
