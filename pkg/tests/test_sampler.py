import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from randpe.exact import TermStack, expectation, low_spectrum
from randpe.hamiltonian import Hamiltonian, PauliTerm, canonicalize, to_dense_matrix
from randpe.sampler import (
    HedgedImportanceSampler,
    LemmaHypothesisError,
    draw_sampled_hamiltonian,
    estimator_variance,
    exact_surrogate,
    importance_weights,
    optimal_variance,
    parse_surrogate,
    robust_variance_bound,
    sampled_from_counts,
    serialize_surrogate,
    uniform_from_counts,
    uniform_subsample,
)

Z = lambda q: {q: "Z"}
X = lambda q: {q: "X"}


def three_terms():
    return Hamiltonian((PauliTerm(1.0, Z(0)), PauliTerm(-1.0, X(1)), PauliTerm(1.0, Z(2))), 3)


def test_weights_norm_only():
    d = importance_weights(three_terms(), [0.3, 0.1, 0.0], rho=1.0)
    np.testing.assert_allclose(d.weights, [1 / 3] * 3, atol=1e-15)


def test_weights_expectation_only():
    d = importance_weights(three_terms(), [2.0, 1.0, -1.0], rho=0.0, floor_fraction=None)
    np.testing.assert_allclose(d.weights, [0.5, 0.25, 0.25], atol=1e-15)


def test_weights_hedged():
    h = Hamiltonian((PauliTerm(1.0, Z(0)), PauliTerm(1.0, X(0))), 1)
    d = importance_weights(h, [1.0, 0.0], rho=0.5)
    np.testing.assert_allclose(d.weights, [2 / 3, 1 / 3], atol=1e-15)


def test_weights_floor_and_errors():
    h = three_terms()
    d = importance_weights(h, [1.0, 0.0, 0.0], rho=0.0, floor_fraction=1e-6)
    assert np.all(d.weights > 0)
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        importance_weights(h, [0.0, 0.0, 0.0], rho=0.0)
    with pytest.raises(ValueError):
        importance_weights(h, [1.0, 2.0], rho=0.5)
    with pytest.raises(ValueError):
        importance_weights(h, [1.0, 2.0, 3.0], rho=1.5)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0, 1))
def test_weights_are_a_distribution(exps, rho):
    h = three_terms()
    if rho == 0 and not any(exps):
        return
    d = importance_weights(h, exps, rho)
    assert np.all(d.weights >= 0)
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_single_term_sample_is_exact():
    h = Hamiltonian((PauliTerm(-0.4, {0: "X", 1: "Y"}),), 2)
    d = importance_weights(h, [0.2], rho=0.3)
    for n, seed in [(1, 0), (7, 3), (1000, 11)]:
        s = draw_sampled_hamiltonian(d, h, n, seed)
        assert s.hamiltonian.terms[0].coefficient == pytest.approx(-0.4, rel=1e-15)
        assert len(s.source_indices) == n


def test_sample_definition_and_determinism(tfim4):
    d = importance_weights(tfim4, exact_surrogate(tfim4), 1e-3)
    a = draw_sampled_hamiltonian(d, tfim4, 50, 12345)
    b = draw_sampled_hamiltonian(d, tfim4, 50, 12345)
    assert a.hamiltonian == b.hamiltonian
    np.testing.assert_array_equal(a.counts, b.counts)
    manual = canonicalize(Hamiltonian(tuple(
        tfim4.terms[i].scaled(1 / (50 * d.weights[i])) for i in a.source_indices
    ), tfim4.qubit_count))
    assert manual.n_terms == a.hamiltonian.n_terms
    np.testing.assert_allclose(manual.coefficients, a.hamiltonian.coefficients, rtol=1e-12)


def test_estimator_sample_coefficients_match_sample(tfim4):
    sampler = HedgedImportanceSampler(rho=0.01, n_draws=40).fit(tfim4)
    s = sampler.sample(99)
    coeffs = sampler.sample_coefficients(99)
    np.testing.assert_allclose(TermStack.of(tfim4).matrix(coeffs), to_dense_matrix(s.hamiltonian),
                               atol=1e-12)


def test_estimator_api(tfim4):
    est = HedgedImportanceSampler(rho=0.2, n_draws=10)
    assert est.get_params() == {"rho": 0.2, "n_draws": 10, "floor_fraction": 1e-9}
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(Exception):
        est.sample(0)
    est.fit(tfim4)
    assert est.weights_.shape == (tfim4.n_terms,)
    with pytest.raises(ValueError):
        HedgedImportanceSampler(n_draws=0).fit(tfim4)


def test_uniform_subsample_examples():
    h1 = Hamiltonian((PauliTerm(0.3, Z(0)),), 1)
    assert uniform_subsample(h1, 5, 0).hamiltonian.terms[0].coefficient == pytest.approx(0.3)
    h2 = Hamiltonian((PauliTerm(1.0, Z(0)), PauliTerm(0.5, X(0))), 1)
    outs = [uniform_from_counts(h2, c).hamiltonian for c in ([1, 0], [0, 1])]
    assert outs[0].terms[0].coefficient == pytest.approx(2.0)
    assert outs[1].terms[0].coefficient == pytest.approx(1.0)
    avg = 0.5 * (to_dense_matrix(outs[0]) + to_dense_matrix(outs[1]))
    np.testing.assert_allclose(avg, to_dense_matrix(h2))
    with pytest.raises(ValueError):
        uniform_subsample(Hamiltonian((), 1), 3, 0)


def test_enumeration_two_terms_two_draws():
    h = Hamiltonian((PauliTerm(1.0, Z(0)), PauliTerm(0.5, X(0))), 1)
    psi = np.array([math.cos(0.3), math.sin(0.3)])
    w = np.array([0.5, 0.5])
    total = 0.0
    for seq in itertools.product(range(2), repeat=2):
        counts = np.bincount(seq, minlength=2)
        total += 0.25 * expectation(psi, sampled_from_counts(h, w, counts).hamiltonian)
    assert total == pytest.approx(expectation(psi, h), abs=1e-12)


def test_optimal_weights_zero_variance():
    h = Hamiltonian((PauliTerm(1.0, Z(0)), PauliTerm(0.5, X(0)), PauliTerm(0.2, Z(1))), 2)
    psi = np.array([0.8, 0.6, 0, 0], dtype=complex)
    F = np.array([expectation(psi, t) for t in h.terms])
    assert np.all(F > 0)
    w = F / F.sum()
    vals = {round(expectation(psi, sampled_from_counts(h, w, c).hamiltonian), 10)
            for c in ([2, 0, 0], [1, 1, 0], [0, 1, 1], [0, 0, 2], [1, 0, 1], [0, 2, 0])}
    assert len(vals) == 1


def test_variance_examples():
    assert estimator_variance([0.5, 0.5], [1, 1]) == pytest.approx(0)
    assert estimator_variance([0.5, 0.5], [1, -1]) == pytest.approx(1)
    assert estimator_variance([0.75, 0.25], [3, -1]) == pytest.approx(3)
    assert estimator_variance([1.0, 0.0], [1, 2]) == math.inf
    assert optimal_variance([1, 1]) == 0
    assert optimal_variance([1, -1]) == pytest.approx(1)
    assert optimal_variance([3, -1]) == pytest.approx(3)
    assert robust_variance_bound([1, 1], [1.5, 1]) == pytest.approx(1)
    assert robust_variance_bound([3, -1], [3, -1]) == pytest.approx(3)
    with pytest.raises(LemmaHypothesisError) as err:
        robust_variance_bound([1, 1], [1, 1.6])
    assert err.value.index == 1


@given(st.lists(st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3), min_size=1, max_size=8),
       st.integers(0, 2**32 - 1))
def test_robust_bound_holds(F, seed):
    F = np.array(F)
    rng = np.random.default_rng(seed)
    Ft = np.sign(F) * np.abs(F) * (1 + rng.uniform(-0.5, 0.5, F.size))
    f = np.abs(Ft) / np.abs(Ft).sum()
    assert estimator_variance(f, F) <= robust_variance_bound(F, Ft) * (1 + 1e-12) + 1e-12
    assert optimal_variance(F) >= 0


def test_surrogate_file_roundtrip():
    vals = np.array([0.1, -0.25, 3.0])
    np.testing.assert_array_equal(parse_surrogate(serialize_surrogate(vals), 3), vals)
    with pytest.raises(ValueError, match="missing"):
        parse_surrogate("0 1.0\n1 2.0\n", 3)
    with pytest.raises(ValueError, match="twice"):
        parse_surrogate("0 1.0\n0 2.0\n1 0\n2 0\n", 3)
    with pytest.raises(ValueError, match="range"):
        parse_surrogate("5 1.0\n", 3)
