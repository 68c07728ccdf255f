import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from randpe.audit import perturbative_instance, random_hermitian, run_instance
from randpe.bounds import (
    REPORT_COLUMNS,
    BoundVacuousError,
    SequenceStats,
    adiabatic_deviation,
    eigenphase_shift_bound,
    factored_perturbation_bound,
    failure_condition,
    failure_threshold,
    joint_likelihood_shift_bound,
    overlap_lower_bound,
    overlap_success_probability,
    phase_error_budget,
    posterior_mean_shift_bound,
    posterior_perturbation_bound,
    report_row,
    sequence_phase_deviation,
    sequence_stats,
    subsample_error_scaling,
)
from randpe.exact import DegenerateGapError
from randpe.hamiltonian import Hamiltonian, PauliTerm, parse_hamiltonian
from randpe.instances import tfim_chain
from randpe.phase_estimation import likelihood, phase_grid
from randpe.sampler import LemmaHypothesisError
from randpe.seeding import make_rng

Z0 = Hamiltonian((PauliTerm(1.0, {0: "Z"}),), 1)
X0 = Hamiltonian((PauliTerm(1.0, {0: "X"}),), 1)


def test_sequence_stats_examples(tfim4):
    s = sequence_stats([tfim4, tfim4])
    assert s.lam == 0
    assert s.gamma == pytest.approx(-4.064177772475914 + 4.7587704831436355, abs=1e-12)
    s = sequence_stats([Z0, X0])
    assert s.lam == pytest.approx(math.sqrt(2))
    assert s.gamma == pytest.approx(2)
    assert s.m_count == 2


def test_sequence_stats_oracle():
    rng = np.random.default_rng(0)
    seq = [random_hermitian(rng, 4) for _ in range(3)]
    s = sequence_stats(seq)
    gaps = [np.diff(np.linalg.eigvalsh(h)[:2])[0] for h in seq]
    lams = [np.linalg.svd(b - a, compute_uv=False)[0] for a, b in zip(seq, seq[1:])]
    assert s.gamma == pytest.approx(min(gaps), rel=1e-12)
    assert s.lam == pytest.approx(max(lams), rel=1e-12)
    with pytest.raises(ValueError):
        sequence_stats(seq[:1])


def test_eigenphase_shift_examples():
    assert eigenphase_shift_bound(SequenceStats(1.0, 0.0, 5)) == 0
    assert eigenphase_shift_bound(SequenceStats(1.0, 0.1, 10)) == pytest.approx(0.3125)
    assert eigenphase_shift_bound(SequenceStats(0.8, 0.2, 7)) == pytest.approx(3.5)
    with pytest.raises(BoundVacuousError):
        eigenphase_shift_bound(SequenceStats(1.0, 0.5, 3))


@given(st.floats(0.1, 10), st.floats(0, 0.45), st.integers(1, 1000), st.integers(1, 10),
       st.floats(1e-3, 0.04), st.floats(1e-3, 0.5))
def test_eigenphase_shift_monotone(gamma, frac, m, dm, dlam, dgamma):
    lam = frac * gamma
    base = eigenphase_shift_bound(SequenceStats(gamma, lam, m))
    assert eigenphase_shift_bound(SequenceStats(gamma, lam, m + dm)) >= base
    assert eigenphase_shift_bound(SequenceStats(gamma, lam + dlam * gamma, m)) >= base
    assert eigenphase_shift_bound(SequenceStats(gamma * (1 + dgamma), lam, m)) <= base


def test_failure_condition_examples():
    assert failure_threshold(2, 0.5) == pytest.approx(math.sqrt(0.5))
    assert failure_condition(SequenceStats(1.0, 0.5, 2), 0.5)
    assert failure_condition(SequenceStats(1.0, 0.0, 50), 1e-6)
    assert not failure_condition(SequenceStats(1.0, 1e-3, 2), 1e-12)
    assert failure_threshold(3, 0.5, "initial") < failure_threshold(3, 0.5)
    with pytest.raises(ValueError):
        failure_threshold(1, 0.5)
    with pytest.raises(ValueError):
        failure_threshold(3, 1.0)


def test_overlap_examples():
    h = parse_hamiltonian("1.0 [Z0]\n0.3 [X0 X1]\n0.2 [Z1]\n")
    assert overlap_success_probability([h, h, h]) == pytest.approx(1.0)
    assert overlap_success_probability([Z0, X0]) == pytest.approx(0.5)
    with pytest.raises(DegenerateGapError):
        overlap_success_probability([Hamiltonian((PauliTerm(1.0, {1: "Z"}),), 2), Z0])


def test_overlap_weak_pair_per_step():
    rng = make_rng(3)
    for _ in range(20):
        seq, s = perturbative_instance(rng, 0.05, sequence_length=(2, 2))
        assert overlap_success_probability(seq) >= 1 - 2 * s.ratio**2


def test_adiabatic_examples():
    h = parse_hamiltonian("1.0 [Z0]\n0.3 [X0 X1]\n0.2 [Z1]\n")
    r = adiabatic_deviation(h, h, 0.7)
    assert r.observed_value == pytest.approx(0, abs=1e-14)
    assert r.bound_value == 0 and r.satisfied
    z15 = Hamiltonian((PauliTerm(1.5, {0: "Z"}),), 1)
    r = adiabatic_deviation(Z0, z15, 0.3)
    assert r.observed_value == pytest.approx(0, abs=1e-14)
    with pytest.raises(BoundVacuousError):
        adiabatic_deviation(Z0, X0, 0.1)


def test_sequence_deviation_examples():
    h = parse_hamiltonian("1.0 [Z0]\n0.3 [X0 X1]\n0.2 [Z1]\n")
    assert sequence_phase_deviation([h] * 4, 0.5).observed_value == pytest.approx(0, abs=1e-13)
    rng = make_rng(11)
    seq, _ = perturbative_instance(rng, 0.05, sequence_length=(2, 2))
    a = adiabatic_deviation(seq[0], seq[1], 0.9)
    s = sequence_phase_deviation(seq, 0.9)
    assert s.observed_value == pytest.approx(a.observed_value, abs=1e-12)


def test_random_perturbative_instances_mostly_satisfied():
    rng = make_rng(5)
    ok = {"adiabatic": 0, "sequence": 0}
    n = 60
    for _ in range(n):
        seq, s = perturbative_instance(rng, 0.05, sequence_length=(3, 3))
        ok["adiabatic"] += adiabatic_deviation(seq[0], seq[1], 1.0).satisfied
        ok["sequence"] += sequence_phase_deviation(seq, 1.0).satisfied
    assert ok["adiabatic"] >= 0.95 * n
    assert ok["sequence"] >= 0.95 * n


def test_posterior_perturbation_examples():
    assert posterior_perturbation_bound(0.0, 0.3) == 0
    assert posterior_perturbation_bound(0.01, 0.5) == pytest.approx(0.1 * math.pi)
    with pytest.raises(LemmaHypothesisError):
        posterior_perturbation_bound(0.3, 0.5)
    with pytest.raises(LemmaHypothesisError):
        posterior_perturbation_bound(0.1, 0.5, 0.15)


def test_posterior_perturbation_grid_pair():
    phis = phase_grid(10 * 2**14)
    prior = np.full(phis.size, 1 / phis.size)
    lik = likelihood(0, phis, 1.0, 0.4)
    pert = np.clip(lik + 0.02 * np.sin(3 * phis), 0, 1)
    delta = np.max(np.abs(pert - lik))
    ev, ev_p = prior @ lik, prior @ pert
    observed = abs(prior @ (phis * lik) / ev - prior @ (phis * pert) / ev_p)
    assert observed <= posterior_perturbation_bound(delta, ev, ev_p)


def test_factored_examples():
    assert factored_perturbation_bound(0.0, 9) == 0
    assert factored_perturbation_bound(0.1, 1) == pytest.approx(0.5 * math.pi)
    assert factored_perturbation_bound(0.01, 3) == pytest.approx(5 * math.pi * (1.01**3 - 1))


def test_joint_shift_examples():
    assert joint_likelihood_shift_bound([0.0, 0.0]) == 0
    assert joint_likelihood_shift_bound([0.1]) == pytest.approx(0.2)
    with pytest.raises(LemmaHypothesisError) as err:
        joint_likelihood_shift_bound([0.1, 0.6])
    assert err.value.index == 1
    with pytest.raises(LemmaHypothesisError):
        joint_likelihood_shift_bound([0.3, 0.4, 0.1])


def test_joint_shift_two_experiment_grid():
    phis = phase_grid(2**14)
    prior = np.where(np.abs(phis) < 1.0, 1.0, 0.0)
    prior /= prior.sum()
    l1, l2 = likelihood(0, phis, 1.0, 0.2), likelihood(1, phis, 2.0, -1.0)
    e1 = 0.1 * np.cos(phis) * np.minimum(l1, 1 - l1)
    e2 = -0.2 * np.minimum(l2, 1 - l2)
    mask = prior > 0
    r = [np.max(np.abs(e1[mask]) / l1[mask]), np.max(np.abs(e2[mask]) / l2[mask])]
    joint, joint_p = l1 * l2, (l1 + e1) * (l2 + e2)
    ev = prior @ joint
    assert abs(prior @ (joint_p - joint)) / ev <= joint_likelihood_shift_bound(r)


def test_mean_shift_and_budget_examples():
    assert posterior_mean_shift_bound([0.0, 0.0], 1.0) == 0
    assert posterior_mean_shift_bound([0.02, 0.03], math.pi) == pytest.approx(0.4 * math.pi)
    with pytest.raises(LemmaHypothesisError):
        posterior_mean_shift_bound([0.1], 1.0, mean_shift_ratio=0.6)
    assert phase_error_budget([1, 2], 0.5, 0.0) == 0
    assert phase_error_budget([1, 2], 0.5, 0.001) == pytest.approx(8 * math.pi * 6 * 0.001)
    with pytest.raises(ValueError):
        phase_error_budget([1], 0.0, 0.1)


def test_strict_suite_never_violated():
    for seed in range(25):
        for name, rep in run_instance("strict", seed, {"grid_points": 2**12}):
            assert rep.satisfied, (seed, name, rep.observed_value, rep.bound_value)


def test_subsample_scaling_limits():
    single = parse_hamiltonian("0.8 [X0 Z1]\n")
    rep = subsample_error_scaling(single, m_values=(1, 4, 16), trials=20)
    np.testing.assert_array_equal(rep.rms, 0.0)
    h = tfim_chain(3)
    rep = subsample_error_scaling(h, m_values=(4, h.n_terms * 1000), trials=20)
    assert rep.rms[1] < 0.05 * rep.rms[0]
    with pytest.raises(ValueError):
        subsample_error_scaling(h, energy="bogus")


def test_report_row_format():
    rep = adiabatic_deviation(Z0, Hamiltonian((PauliTerm(1.1, {0: "Z"}),), 1), 0.2)
    row = report_row(rep)
    assert len(row) == len(REPORT_COLUMNS)
    assert row[0] == "adiabatic_deviation" and row[3] == "1" and row[-1] == "1"
