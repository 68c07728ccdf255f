import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from randpe.exact import (
    DegenerateGapError,
    TermStack,
    basis_state,
    evolution_operator,
    evolve,
    expectation,
    gap,
    low_spectrum,
    operator_norm_diff,
    term_expectations,
)
from randpe.hamiltonian import Hamiltonian, PauliTerm
from randpe.instances import tfim_chain

from conftest import kron_hamiltonian


def H(*terms, n=1):
    return Hamiltonian.from_terms([PauliTerm(c, f) for c, f in terms], n)


def test_z_spectrum():
    s = low_spectrum(H((1.0, {0: "Z"})), 2)
    np.testing.assert_allclose(s.energies, [-1, 1])
    np.testing.assert_allclose(np.abs(s.states[:, 0]), [0, 1])
    np.testing.assert_allclose(np.abs(s.states[:, 1]), [1, 0])


def test_x_ground_state_phase_convention():
    s = low_spectrum(H((1.0, {0: "X"})), 1)
    assert s.ground_energy == pytest.approx(-1)
    np.testing.assert_allclose(s.ground_state, np.array([1, -1]) / math.sqrt(2), atol=1e-12)


def test_two_qubit_tfim_against_kron_oracle():
    h = tfim_chain(2, 1.0, 0.5)
    oracle = np.linalg.eigvalsh(kron_hamiltonian(h))
    s = low_spectrum(h, 2)
    np.testing.assert_allclose(s.energies, oracle[:2], atol=1e-12)
    assert gap(s) == pytest.approx(oracle[1] - oracle[0])


def test_two_qubit_tfim_closed_form():
    # -Z0Z1 - X0 - X1: ground energy -sqrt(5).
    assert low_spectrum(tfim_chain(2), 1).ground_energy == pytest.approx(-math.sqrt(5), abs=1e-12)


def test_frozen_reference_energies():
    assert low_spectrum(tfim_chain(4), 1).ground_energy == pytest.approx(-4.7587704831436355, abs=1e-10)
    assert low_spectrum(tfim_chain(6), 1).ground_energy == pytest.approx(-7.296229810558763, abs=1e-10)


def test_gap_cases():
    assert gap(low_spectrum(H((1.0, {0: "Z"})), 2)) == pytest.approx(2)
    ident = low_spectrum(H((0.3, {}), n=1), 2)
    assert gap(ident) == 0.0
    with pytest.raises(DegenerateGapError):
        gap(ident, strict=True)
    with pytest.raises(ValueError):
        gap(low_spectrum(H((1.0, {0: "Z"})), 1))


def test_expectation_examples():
    plus = np.array([1, 1]) / math.sqrt(2)
    assert expectation(basis_state(0, 1), PauliTerm(1.0, {0: "Z"})) == pytest.approx(1.0)
    assert expectation(plus, PauliTerm(1.0, {0: "Z"})) == pytest.approx(0.0, abs=1e-12)
    assert expectation(plus, PauliTerm(0.7, {0: "X"})) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        expectation(plus, PauliTerm(1.0, {1: "Z"}))


def test_evolve_examples():
    z = H((1.0, {0: "Z"}))
    t = 0.37
    np.testing.assert_allclose(evolve(basis_state(0, 1), z, t), [np.exp(-1j * t), 0], atol=1e-12)
    psi = np.array([0.6, 0.8j])
    np.testing.assert_array_equal(evolve(psi, z, 0.0), psi)
    # exp(-i X pi/2) = -i X.
    out = evolve(basis_state(0, 1), H((1.0, {0: "X"})), math.pi / 2)
    np.testing.assert_allclose(out, [0, -1j], atol=1e-12)


@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2))
def test_evolution_matches_closed_form_2x2(t, a, b):
    # exp(-i t (a X + b Z)) = cos(r t) I - i sin(r t)(a X + b Z)/r.
    h = H((a, {0: "X"}), (b, {0: "Z"}))
    r = math.hypot(a, b)
    m = np.array([[b, a], [a, -b]], dtype=complex)
    if r < 1e-9:
        expected = np.eye(2) - 1j * t * m
    else:
        expected = np.eye(2) * math.cos(r * t) - 1j * math.sin(r * t) * m / r
    np.testing.assert_allclose(evolution_operator(h, t), expected, atol=1e-10)


def test_operator_norm_diff_examples():
    z, x = H((1.0, {0: "Z"})), H((1.0, {0: "X"}))
    assert operator_norm_diff(z, z) == 0.0
    assert operator_norm_diff(z, Hamiltonian((), 1)) == pytest.approx(1.0)
    assert operator_norm_diff(z, x) == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        operator_norm_diff(z, H((1.0, {1: "Z"}), n=2))


def test_term_stack_matches_dense(tfim4):
    stack = TermStack(tfim4)
    np.testing.assert_allclose(stack.matrix(), kron_hamiltonian(tfim4), atol=1e-12)
    psi = low_spectrum(tfim4, 1).ground_state
    vals = term_expectations(psi, tfim4)
    assert vals.sum() == pytest.approx(low_spectrum(tfim4, 1).ground_energy)
    for v, term in zip(vals, tfim4.terms):
        assert v == pytest.approx(expectation(psi, term))


@given(st.integers(0, 2**31))
def test_evolve_is_unitary(seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=16) + 1j * rng.normal(size=16)
    psi /= np.linalg.norm(psi)
    out = evolve(psi, tfim_chain(4), rng.uniform(-5, 5))
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)
