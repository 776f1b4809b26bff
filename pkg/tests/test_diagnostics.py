import numpy as np
import pytest
from oracles import nested_loop_marginals

from reciprocal_bp.bp import loop_transfer_matrices, steady_state_beliefs_eigen
from reciprocal_bp.diagnostics import (
    accuracy_decomposition,
    binary_correction,
    charpoly_coefficients,
    correct_binary,
    decompose_transfer,
    leading_principal_minors,
    spectral_report,
    stability_report,
)
from reciprocal_bp.errors import ModelValidationError
from reciprocal_bp.model import random_model, uniform_model


def test_spectral_diag():
    rep = spectral_report(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(rep.eigenvalues, [3, 1])
    assert rep.beta == pytest.approx(0.75) and rep.subdominant_ratio == pytest.approx(1 / 3)


def test_spectral_circulant():
    rep = spectral_report([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(rep.eigenvalues, [3, 1], atol=1e-14)
    assert rep.beta == pytest.approx(0.75) and rep.primitive


def test_spectral_trace_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        C = rng.random((3, 3))
        rep = spectral_report(C)
        assert abs(rep.eigenvalues.sum() - np.trace(C)) <= 1e-9
        assert np.all(np.abs(rep.eigenvalues) <= abs(rep.eigenvalues[0]) + 1e-12)
        assert rep.eigenvalues[0].imag == 0 and rep.eigenvalues[0].real > 0
        np.testing.assert_allclose(rep.eigenvectors @ rep.inverse_eigenvectors, np.eye(3), atol=1e-12)


def test_spectral_flags_defective():
    rep = spectral_report([[1.0, 1.0], [0.0, 1.0]])
    assert rep.defective and rep.inverse_eigenvectors is None
    assert not rep.primitive


def test_charpoly_against_numpy_poly():
    rng = np.random.default_rng(1)
    for n in range(1, 6):
        A = rng.standard_normal((n, n))
        np.testing.assert_allclose(charpoly_coefficients(A), np.poly(A), atol=1e-10)


def test_leading_minors():
    A = np.array([[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]])
    np.testing.assert_allclose(leading_principal_minors(A), [2.0, 5.0, 18.0])


def test_stability_scalar_half():
    rep = stability_report([[0.5]])
    assert rep.verdicts == (True, True, True, True)
    assert rep.minors_values == [0.5]


def test_stability_scalar_two():
    rep = stability_report([[2.0]])
    assert rep.verdicts == (False, False, False, False)


def test_stability_rescaled_positive():
    rng = np.random.default_rng(2)
    C = rng.random((3, 3)) + 0.05
    C /= np.max(np.abs(np.linalg.eigvals(C)))
    assert stability_report(0.9 * C).verdicts == (True, True, True, True)
    assert stability_report(1.1 * C).verdicts == (False, False, False, False)


def test_stability_rejects_negative():
    with pytest.raises(ModelValidationError):
        stability_report([[0.5, -0.1], [0.0, 0.5]])


def test_lyapunov_reducible_uses_resolvent():
    # upper triangular: Perron vector has a zero, so the resolvent route is needed
    C = np.array([[0.5, 0.4], [0.0, 0.3]])
    rep = stability_report(C)
    assert rep.lyapunov is True and rep.lyapunov_info["construction"] == "resolvent"


@pytest.mark.parametrize("seed", range(3))
def test_stability_unanimity_sparse(seed):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        D = int(rng.integers(1, 6))
        C = rng.random((D, D)) * (rng.random((D, D)) < 0.6)
        rho = np.max(np.abs(np.linalg.eigvals(C)))
        if rho == 0:
            continue
        C *= rng.uniform(0.5, 1.5) / rho
        truth = np.max(np.abs(np.linalg.eigvals(C))) < 1
        rep = stability_report(C)
        assert all(v == truth for v in rep.verdicts if v is not None)
        assert rep.agree


# -- accuracy ---------------------------------------------------------------------


def test_accuracy_uniform():
    # the all-ones loop product is rank one, so beta = 1 and BP is exact
    from reciprocal_bp.errors import DegeneracyError

    with pytest.raises(DegeneracyError, match="beta = 1"):
        accuracy_decomposition(uniform_model(2, 4), 0)
    np.testing.assert_allclose(steady_state_beliefs_eigen(uniform_model(2, 4)).beliefs, 0.5)


def test_accuracy_uniform_potentials_with_structure():
    m = uniform_model(2, 4)
    E = np.array(m.edge_potentials)
    E[:] = [[2.0, 1.0], [1.0, 2.0]]
    from reciprocal_bp.model import HiddenReciprocalModel

    dec = accuracy_decomposition(HiddenReciprocalModel(E, np.ones((4, 2))), 0)
    np.testing.assert_allclose(dec.belief, 0.5)
    np.testing.assert_allclose(dec.exact, 0.5)
    assert dec.residual == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_binary_residual_q_is_one_minus_b(seed):
    m = random_model(2, 5, seed=seed)
    ref, _ = nested_loop_marginals(m.edge_potentials, m.node_potentials)
    for k in range(5):
        dec = accuracy_decomposition(m, k)
        np.testing.assert_allclose(dec.exact, ref[k], atol=1e-12)
        np.testing.assert_allclose(dec.q_residual, 1 - dec.belief, atol=1e-9)
        assert dec.residual <= 1e-12


def test_decomposition_reconstructs_exactly():
    m = random_model(3, 6, seed=4)
    for k in range(6):
        dec = accuracy_decomposition(m, k)
        np.testing.assert_allclose(dec.beta * dec.belief + (1 - dec.beta) * dec.q_residual, dec.exact, atol=1e-12)
        assert np.isfinite(dec.discrepancy)


def test_correction_fixed_point():
    np.testing.assert_allclose(correct_binary([0.5, 0.5], 3.0, 0.7), [0.5, 0.5])
    np.testing.assert_allclose(correct_binary([0.5, 0.5], 3.0, -0.7), [0.5, 0.5])


def test_correction_rank_one_is_identity():
    np.testing.assert_allclose(correct_binary([0.3, 0.7], 2.0, 0.0), [0.3, 0.7])


def test_binary_correction_exact():
    m = random_model(2, 5, seed=13)
    ref, _ = nested_loop_marginals(m.edge_potentials, m.node_potentials)
    for k in range(5):
        np.testing.assert_allclose(binary_correction(m, k), ref[k], atol=1e-8)


def test_binary_correction_needs_d2():
    with pytest.raises(ModelValidationError):
        binary_correction(random_model(3, 4, seed=0), 0)


def test_sign_preservation():
    for seed in range(30):
        m = random_model(2, 5, seed=seed, positivity_floor=0.01)
        b = steady_state_beliefs_eigen(m).beliefs
        T = loop_transfer_matrices(m)
        for k in range(5):
            lam = np.sort(np.linalg.eigvals(T.forward[k]).real)[::-1]
            if not lam[1] > 0:
                continue
            p = binary_correction(m, k)
            assert np.sign(p[0] - p[1]) == np.sign(b[k][0] - b[k][1])


def test_error_spectrum_link():
    rng = np.random.default_rng(5)
    for _ in range(20):
        C = rng.random((3, 3)) + 0.05
        b, p, beta, q = decompose_transfer(C)
        gap = np.max(np.abs(p - b))
        assert gap == pytest.approx(abs(1 - beta) * np.max(np.abs(q - b)), abs=1e-12)
        assert gap <= abs(1 - beta) * (np.max(np.abs(q)) + np.max(np.abs(b))) + 1e-9


def test_gap_shrinks_toward_rank_one():
    rng = np.random.default_rng(6)
    C = rng.random((3, 3)) + 0.05
    w, S = np.linalg.eig(C)
    order = np.argsort(-np.abs(w))
    w, S = w[order], S[:, order]
    Sinv = np.linalg.inv(S)
    gaps = []
    for t in np.linspace(1.0, 0.0, 11):
        Ct = (S @ np.diag(np.r_[w[0], t * w[1:]]) @ Sinv).real
        b, p, beta, q = decompose_transfer(Ct)
        gaps.append(np.max(np.abs(p - b)))
    assert all(a >= b - 1e-14 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 1e-12


def test_beta_rotation_invariance():
    m = random_model(3, 6, seed=7)
    T = loop_transfer_matrices(m)
    betas = [spectral_report(T.forward[k]).beta for k in range(6)]
    betas += [spectral_report(T.backward[k]).beta for k in range(6)]
    assert max(betas) - min(betas) <= 1e-10


def test_float_path_agrees_with_extended_precision():
    m = random_model(3, 5, seed=21)
    for k in range(5):
        hi = accuracy_decomposition(m, k)
        lo = accuracy_decomposition(m, k, digits=None)
        assert abs(hi.beta - lo.beta) <= 1e-12
        np.testing.assert_allclose(lo.belief, hi.belief, atol=1e-12)
        np.testing.assert_allclose(lo.exact, hi.exact, atol=1e-14)
        # float64 loses about eps / |1 - beta| on q
        np.testing.assert_allclose(lo.q_residual, hi.q_residual, atol=1e-13 / abs(1 - hi.beta))


def test_printed_q_ignores_column_scaling():
    from reciprocal_bp.diagnostics import printed_q

    rng = np.random.default_rng(8)
    C = rng.random((3, 3)) + 0.1
    w, S = np.linalg.eig(C)
    Si = np.linalg.inv(S)
    c = np.array([-2.0, 0.5, -3.0])
    np.testing.assert_allclose(printed_q(S * c, Si / c[:, None], w), printed_q(S, Si, w), atol=1e-12)


def test_swapped_reading_reconstructs_belief():
    m = random_model(2, 5, seed=2)
    for k in range(5):
        dec = accuracy_decomposition(m, k)
        np.testing.assert_allclose(dec.beta * dec.exact + (1 - dec.beta) * dec.q_swapped, dec.belief, atol=1e-12)
        # for D = 2 the exchanged reading gives q = (1 + 2 beta) b - beta, not 1 - b
        np.testing.assert_allclose(dec.q_swapped, (1 + 2 * dec.beta) * dec.belief - dec.beta, atol=1e-9)
