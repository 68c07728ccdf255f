"""Random-instance stress tests for the bounds in :mod:`randpe.bounds`.

Two suites:

``perturbative``
    Random 2-3 qubit Hamiltonian sequences with ``lambda/gamma`` below a cap.
    The overlap, single-transition and sequence deviation bounds come from
    first-order perturbation theory, so they are expected to hold on most
    but not necessarily all instances.
``strict``
    Posterior/likelihood instances built on the phase grid that meet each
    lemma's hypotheses. Those lemmas are exact inequalities, and grid sums
    are integrals against a discrete prior, so any violation is a bug.

Each instance is generated from a single seed; :func:`run_instance` returns
``[(check_name, BoundReport), ...]``.
"""

from __future__ import annotations

import math

import numpy as np

from .bounds import (
    BoundReport,
    BoundVacuousError,
    adiabatic_deviation,
    factored_perturbation_bound,
    joint_likelihood_shift_bound,
    overlap_lower_bound,
    overlap_success_probability,
    phase_error_budget,
    posterior_mean_shift_bound,
    posterior_perturbation_bound,
    sequence_phase_deviation,
    sequence_stats,
)
from .exact import DegenerateGapError
from .phase_estimation import likelihood, phase_grid
from .seeding import make_rng

__all__ = [
    "random_hermitian",
    "perturbative_instance",
    "strict_instance",
    "run_instance",
    "OVERLAP_TOLERANCE",
]

OVERLAP_TOLERANCE = 1e-9
_MAX_TRIES = 200


def random_hermitian(rng, dim: int) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (a + a.conj().T) / 2


def _unit_hermitian(rng, dim):
    v = random_hermitian(rng, dim)
    return v / np.linalg.norm(v, 2)


def perturbative_instance(rng, ratio_max: float, qubits=(2, 3), sequence_length=(2, 6)):
    """A sequence ``H_1..H_M`` with ``lambda/gamma <= ratio_max``.

    Steps are random unit-norm Hermitian directions scaled by a target ratio
    drawn uniformly in ``(0, ratio_max]`` times the first gap; the sequence is
    redrawn until its measured ratio respects the cap.
    """
    for _ in range(_MAX_TRIES):
        n = int(rng.integers(qubits[0], qubits[1] + 1))
        m = int(rng.integers(sequence_length[0], sequence_length[1] + 1))
        dim = 1 << n
        h = random_hermitian(rng, dim)
        e = np.linalg.eigvalsh(h)
        g0 = float(e[1] - e[0])
        if g0 < 1e-3:
            continue
        target = ratio_max * (1.0 - rng.random())
        seq = [h]
        for _ in range(m - 1):
            seq.append(seq[-1] + target * g0 * rng.random() * _unit_hermitian(rng, dim))
        stats = sequence_stats(seq)
        if 0 < stats.ratio <= ratio_max and not stats.degenerate:
            return seq, stats
    raise RuntimeError("could not build a perturbative instance")


def _perturbative_checks(rng, params):
    seq, stats = perturbative_instance(rng, params["ratio_max"], params["qubits"],
                                       params["sequence_length"])
    dt = float(rng.uniform(0.1, 2.0))
    ctx = {"gamma": stats.gamma, "lambda": stats.lam, "M": stats.m_count, "ratio": stats.ratio}
    out = []
    prob = overlap_success_probability(seq)
    out.append(("overlap", BoundReport(overlap_lower_bound(stats), prob, dict(ctx, kind="overlap"),
                                       lower=True, tolerance=OVERLAP_TOLERANCE)))
    try:
        a = adiabatic_deviation(seq[0], seq[1], dt)
        a.context["ratio"] = a.context["lambda"] / a.context["gamma"]
        out.append(("adiabatic_deviation", a))
        s = sequence_phase_deviation(seq, dt)
        s.context["ratio"] = stats.ratio
        out.append(("sequence_phase_deviation", s))
    except (BoundVacuousError, DegenerateGapError) as exc:  # pragma: no cover - excluded by construction
        raise RuntimeError(f"perturbative instance violates its own construction: {exc}")
    return out


# ------------------------------------------------------------------ strict suite

def _smooth_field(rng, phis, modes=4):
    """Random trigonometric polynomial scaled into [-1, 1]."""
    f = np.zeros_like(phis)
    for k in range(1, modes + 1):
        f += rng.normal() * np.cos(k * phis) + rng.normal() * np.sin(k * phis)
    peak = np.max(np.abs(f))
    return f / peak if peak > 0 else f


def _window_prior(rng, phis):
    """Uniform prior on a random window (at most half the circle)."""
    width = rng.uniform(0.3, math.pi)
    center = rng.uniform(-math.pi + width / 2, math.pi - width / 2)
    mask = np.abs(phis - center) <= width / 2
    prior = mask.astype(float)
    return prior / prior.sum(), mask


def _random_experiments(rng, n):
    reps = rng.uniform(0.25, 4.0, size=n)
    offsets = rng.uniform(-math.pi, math.pi, size=n)
    outcomes = rng.integers(0, 2, size=n)
    return reps, offsets, outcomes


def _mean(masses, phis):
    return float(np.dot(masses, phis))


def _posterior_perturbation(rng, phis):
    """Bound on the posterior-mean change from a bounded likelihood change."""
    for _ in range(_MAX_TRIES):
        prior, _ = _window_prior(rng, phis)
        n = int(rng.integers(1, 4))
        reps, offsets, outcomes = _random_experiments(rng, n)
        lik = np.prod([likelihood(o, phis, m, t) for o, m, t in zip(outcomes, reps, offsets)], axis=0)
        evidence = float(np.dot(prior, lik))
        if evidence <= 1e-6:
            continue
        delta = rng.uniform(0.0, 0.5) * evidence
        pert = np.clip(lik + delta * _smooth_field(rng, phis), 0.0, 1.0)
        delta_sup = float(np.max(np.abs(pert - lik)))
        evidence_p = float(np.dot(prior, pert))
        if min(evidence, evidence_p) < 2 * delta_sup:
            continue
        post = prior * lik / evidence
        post_p = prior * pert / evidence_p
        observed = abs(_mean(post, phis) - _mean(post_p, phis))
        bound = posterior_perturbation_bound(delta_sup, evidence, evidence_p)
        return BoundReport(bound, observed, {"kind": "posterior_perturbation", "delta": delta_sup,
                                             "evidence": evidence})
    raise RuntimeError("could not build a posterior-perturbation instance")


def _factored_perturbation(rng, phis):
    """Per-experiment likelihood ratios within ``g`` of one."""
    for _ in range(_MAX_TRIES):
        prior, mask = _window_prior(rng, phis)
        n = int(rng.integers(1, 6))
        reps, offsets, outcomes = _random_experiments(rng, n)
        liks = np.array([likelihood(o, phis, m, t) for o, m, t in zip(outcomes, reps, offsets)])
        g = rng.uniform(0.0, 0.2)
        # Damp upward moves where P is near 1 so P' stays a probability.
        room = np.minimum(1.0, np.divide(1.0 - liks, liks, out=np.ones_like(liks), where=liks > 0))
        ratios = 1.0 + g * np.array([_smooth_field(rng, phis) for _ in range(n)]) * room
        pert = liks * ratios
        lik, lik_p = liks.prod(axis=0), pert.prod(axis=0)
        ev, ev_p = float(np.dot(prior, lik)), float(np.dot(prior, lik_p))
        if ev <= 1e-9 or ev_p <= 1e-9:
            continue
        observed = abs(_mean(prior * lik / ev, phis) - _mean(prior * lik_p / ev_p, phis))
        bound = factored_perturbation_bound(g, n)
        return BoundReport(bound, observed, {"kind": "factored_perturbation", "ratio_gap": g, "M": n})
    raise RuntimeError("could not build a factored-perturbation instance")


def _shift_instance(rng, phis):
    """Experiments plus relative likelihood shifts meeting the lemma hypotheses.

    ``eps_j = r_j u_j(phi) min(P_j, 1 - P_j)`` with ``|u_j| <= 1`` keeps
    ``P'_j`` in [0, 1] and ``|eps_j|/P_j <= r_j``; the ratios passed to the
    bounds are measured over the prior support.
    """
    for _ in range(_MAX_TRIES):
        prior, mask = _window_prior(rng, phis)
        n = int(rng.integers(1, 8))
        reps, offsets, outcomes = _random_experiments(rng, n)
        liks = np.array([likelihood(o, phis, m, t) for o, m, t in zip(outcomes, reps, offsets)])
        cap = min(0.5, 0.999 / n)
        r = rng.uniform(0.0, cap, size=n)
        u = np.array([_smooth_field(rng, phis) for _ in range(n)])
        eps = r[:, None] * u * np.minimum(liks, 1.0 - liks)
        pert = liks + eps
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(liks[:, mask] > 0, np.abs(eps[:, mask]) / liks[:, mask], 0.0)
        ratios = rel.max(axis=1)
        lik, lik_p = liks.prod(axis=0), pert.prod(axis=0)
        evidence = float(np.dot(prior, lik))
        if evidence <= 1e-9:
            continue
        return prior, lik, lik_p, ratios, evidence
    raise RuntimeError("could not build a likelihood-shift instance")


def _joint_likelihood_shift(rng, phis):
    prior, lik, lik_p, ratios, evidence = _shift_instance(rng, phis)
    delta_bar = abs(float(np.dot(prior, lik_p - lik)))
    bound = joint_likelihood_shift_bound(ratios) * evidence
    return BoundReport(bound, delta_bar, {"kind": "joint_likelihood_shift", "M": len(ratios)})


def _posterior_mean_shift(rng, phis):
    for _ in range(_MAX_TRIES):
        prior, lik, lik_p, ratios, evidence = _shift_instance(rng, phis)
        delta_bar = float(np.dot(prior, lik_p - lik))
        if abs(delta_bar) > evidence / 2:
            continue
        post = prior * lik / evidence
        post_p = prior * lik_p / (evidence + delta_bar)
        abs_phi = float(np.dot(post, np.abs(phis)))
        bound = posterior_mean_shift_bound(ratios, abs_phi, abs(delta_bar) / evidence)
        observed = abs(_mean(post, phis) - _mean(post_p, phis))
        return BoundReport(bound, observed, {"kind": "posterior_mean_shift", "M": len(ratios)})
    raise RuntimeError("could not build a posterior-mean-shift instance")


def _phase_error_budget(rng, phis):
    """Eigenphase errors ``|phi - phi'_j| <= |dphi|`` in each experiment."""
    for _ in range(_MAX_TRIES):
        prior, mask = _window_prior(rng, phis)
        n = int(rng.integers(1, 6))
        reps, offsets, outcomes = _random_experiments(rng, n)
        liks = np.array([likelihood(o, phis, m, t) for o, m, t in zip(outcomes, reps, offsets)])
        p_min = float(liks[:, mask].min())
        if p_min < 0.05:
            continue
        # Keep the lemma hypotheses: M_j |dphi| / P_min <= min(1/2, 0.999/N).
        dphi_max = min(0.5, 0.999 / n) * p_min / reps.max()
        dphi = rng.uniform(0.0, dphi_max)
        shifts = dphi * rng.uniform(-1.0, 1.0, size=n)
        pert = np.array([likelihood(o, phis + s, m, t)
                         for o, m, t, s in zip(outcomes, reps, offsets, shifts)])
        lik, lik_p = liks.prod(axis=0), pert.prod(axis=0)
        evidence = float(np.dot(prior, lik))
        delta_bar = float(np.dot(prior, lik_p - lik))
        if evidence <= 1e-9 or abs(delta_bar) > evidence / 2:
            continue
        post = prior * lik / evidence
        post_p = prior * lik_p / (evidence + delta_bar)
        observed = abs(_mean(post, phis) - _mean(post_p, phis))
        bound = phase_error_budget(reps, p_min, dphi)
        return BoundReport(bound, observed, {"kind": "phase_error_budget", "M": n,
                                             "delta_phi": dphi, "p_min": p_min})
    raise RuntimeError("could not build a phase-error instance")


_STRICT = (
    ("posterior_perturbation", _posterior_perturbation),
    ("factored_perturbation", _factored_perturbation),
    ("joint_likelihood_shift", _joint_likelihood_shift),
    ("posterior_mean_shift", _posterior_mean_shift),
    ("phase_error_budget", _phase_error_budget),
)


def strict_instance(rng, grid_points: int):
    phis = phase_grid(grid_points)
    return [(name, build(rng, phis)) for name, build in _STRICT]


def run_instance(suite: str, seed: int, params: dict):
    rng = make_rng(seed)
    if suite == "perturbative":
        return _perturbative_checks(rng, params)
    if suite == "strict":
        return strict_instance(rng, params["grid_points"])
    raise ValueError(f"unknown suite {suite!r}")
