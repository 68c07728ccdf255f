"""Computable forms of the randomized phase-estimation error bounds, plus
exact dense/grid checks of each against small instances.

Conventions
-----------
* A sequence ``H_1..H_M`` has ``gamma = min_k gap(H_k)`` and
  ``lambda = max_k ||H_k - H_{k-1}||`` (spectral norm).
* Adiabatic unitaries pair eigenvectors of consecutive Hamiltonians by
  maximum overlap and fix the phase of each ``|psi_l^{k+1}>`` so that
  ``<psi_l^{k+1}|psi_l^k>`` is real and non-negative (parallel transport).
* The deviation reported as ``observed`` is the part that reaches the ground
  state of the next Hamiltonian, ``||P_0^{k+1} (U_k - U_{k,ad}) P_0^k||``,
  i.e. the error in the eigenvalue that phase estimation reads out. The
  unprojected norm ``||(U_k - U_{k,ad}) P_0^k||`` is first order in
  ``lambda/gamma`` and is reported alongside in ``context``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exact import DEGENERACY_TOL, DegenerateGapError, SpectrumSlice, TermStack, diagonalize, low_spectrum
from .hamiltonian import DENSE_CUTOFF, Hamiltonian, to_dense_matrix
from .phase_estimation import likelihood
from .sampler import LemmaHypothesisError
from .seeding import derive_seed, make_rng

__all__ = [
    "BOUND_SLACK",
    "BoundVacuousError",
    "SequenceStats",
    "BoundReport",
    "sequence_stats",
    "eigenphase_shift_bound",
    "failure_threshold",
    "failure_condition",
    "overlap_success_probability",
    "overlap_lower_bound",
    "adiabatic_deviation",
    "sequence_phase_deviation",
    "posterior_perturbation_bound",
    "factored_perturbation_bound",
    "joint_likelihood_shift_bound",
    "posterior_mean_shift_bound",
    "phase_error_budget",
    "ScalingReport",
    "subsample_error_scaling",
    "REPORT_COLUMNS",
    "report_row",
]

BOUND_SLACK = 1e-12
AMBIGUITY_TOL = 1e-6


class BoundVacuousError(ValueError):
    """The bound's denominator is non-positive (gamma <= 2 lambda)."""


@dataclass(frozen=True)
class SequenceStats:
    gamma: float
    lam: float
    m_count: int
    degenerate: bool = False

    @property
    def ratio(self) -> float:
        return self.lam / self.gamma if self.gamma > 0 else math.inf


@dataclass
class BoundReport:
    """An evaluated bound next to the exact value it constrains.

    ``lower=True`` marks a lower bound (observed must not fall below it).
    """

    bound_value: float
    observed_value: float
    context: dict = field(default_factory=dict)
    lower: bool = False
    tolerance: float = BOUND_SLACK

    @property
    def satisfied(self) -> bool:
        if self.lower:
            return self.observed_value >= self.bound_value - self.tolerance
        return self.observed_value <= self.bound_value + self.tolerance


def _matrix(h, cutoff=DENSE_CUTOFF):
    if isinstance(h, Hamiltonian):
        return to_dense_matrix(h, cutoff)
    return np.asarray(h, dtype=complex)


def _norm(a) -> float:
    return float(np.linalg.norm(a, 2))


def sequence_stats(seq: Sequence) -> SequenceStats:
    """Minimum gap and maximum consecutive spectral-norm difference."""
    if len(seq) < 2:
        raise ValueError("a sequence needs at least two Hamiltonians")
    mats = [_matrix(h) for h in seq]
    gaps = []
    for m in mats:
        e = np.linalg.eigvalsh(m)
        gaps.append(float(e[1] - e[0]))
    lam = max(float(np.max(np.abs(np.linalg.eigvalsh(b - a)))) for a, b in zip(mats, mats[1:]))
    gamma = min(gaps)
    return SequenceStats(gamma, lam, len(seq), degenerate=gamma < DEGENERACY_TOL)


def eigenphase_shift_bound(s: SequenceStats) -> float:
    """``2 M lambda^2 / (gamma - 2 lambda)^2``."""
    if s.gamma <= 2 * s.lam:
        raise BoundVacuousError(f"gamma = {s.gamma:.4g} <= 2 lambda = {2 * s.lam:.4g}")
    return 2 * s.m_count * s.lam**2 / (s.gamma - 2 * s.lam) ** 2


def failure_threshold(m_count: int, epsilon: float, convention: str = "theorem") -> float:
    """Largest admissible ``lambda/gamma`` for failure probability ``epsilon``.

    ``convention="theorem"`` uses ``M - 1`` transitions (start in the ground
    state of ``H_1``); ``"initial"`` uses ``M`` (start in the ground state of
    the unsampled Hamiltonian, so one extra transition).
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if convention == "theorem":
        transitions = m_count - 1
    elif convention == "initial":
        transitions = m_count
    else:
        raise ValueError(f"unknown convention {convention!r}")
    if transitions < 1:
        raise ValueError("need at least one transition (M >= 2 for the theorem convention)")
    return math.sqrt(-math.expm1(math.log1p(-epsilon) / transitions))


def failure_condition(s: SequenceStats, epsilon: float, convention: str = "theorem") -> bool:
    return s.lam < failure_threshold(s.m_count, epsilon, convention) * s.gamma


def _ground_states(seq):
    out = []
    for h in seq:
        spec = diagonalize(_matrix(h))
        if spec.energies[1] - spec.energies[0] < DEGENERACY_TOL:
            raise DegenerateGapError("degenerate ground space: overlap is ill-defined")
        out.append(spec.states[:, 0])
    return out


def overlap_success_probability(seq: Sequence) -> float:
    """``prod_k |<psi_0^{k+1}|psi_0^k>|^2`` along the sequence."""
    states = _ground_states(seq)
    prob = 1.0
    for a, b in zip(states, states[1:]):
        prob *= abs(np.vdot(b, a)) ** 2
    return float(prob)


def overlap_lower_bound(s: SequenceStats) -> float:
    """First-order lower bound ``(1 - lambda^2/gamma^2)^(M-1)``."""
    return (1.0 - s.ratio**2) ** (s.m_count - 1)


def _transport(spec_a, spec_b):
    """Reorder/rephase eigenvectors of ``b`` to follow those of ``a``.

    Returns ``(states_b, ambiguous)`` where column ``l`` of ``states_b`` is
    the partner of column ``l`` of ``spec_a.states`` with a real non-negative
    overlap.
    """
    ov = spec_b.states.conj().T @ spec_a.states  # ov[p, l] = <b_p|a_l>
    mag = np.abs(ov)
    rows, cols = linear_sum_assignment(-mag)
    perm = np.empty_like(rows)
    perm[cols] = rows
    states_b = spec_b.states[:, perm]
    diag = ov[perm, np.arange(len(perm))]
    phases = np.where(np.abs(diag) > 0, diag / np.where(np.abs(diag) > 0, np.abs(diag), 1), 1)
    states_b = states_b * phases[None, :]
    top2 = np.sort(mag, axis=0)[-2:, :] if mag.shape[0] > 1 else np.vstack([mag, mag])
    ambiguous = bool(np.any(np.abs(top2[1] - top2[0]) < AMBIGUITY_TOL))
    ground_ambiguous = bool(abs(top2[1, 0] - top2[0, 0]) < AMBIGUITY_TOL) if mag.shape[0] > 1 else False
    return states_b, perm, ambiguous, ground_ambiguous


def _step_operators(spec_a, states_b, dt):
    """``U_k P_0^k`` and ``U_{k,ad} P_0^k`` for one transition."""
    g = spec_a.states[:, 0]
    phase = np.exp(-1j * spec_a.energies[0] * dt)
    real = phase * np.outer(g, g.conj())
    ad = phase * np.outer(states_b[:, 0], g.conj())
    return real, ad


def _gap_of(spec):
    return float(spec.energies[1] - spec.energies[0])


def adiabatic_deviation(h_k, h_next, dt: float) -> BoundReport:
    """Exact single-transition deviation against ``2 lambda^2/(gamma - 2 lambda)^2``.

    Raises :class:`BoundVacuousError` when ``gamma <= 2 lambda`` and
    :class:`DegenerateGapError` when the ground-state pairing is ambiguous.
    """
    a, b = _matrix(h_k), _matrix(h_next)
    spec_a, spec_b = diagonalize(a), diagonalize(b)
    gamma = min(_gap_of(spec_a), _gap_of(spec_b))
    lam = float(np.max(np.abs(np.linalg.eigvalsh(b - a))))
    if gamma <= 2 * lam:
        raise BoundVacuousError(f"gamma = {gamma:.4g} <= 2 lambda = {2 * lam:.4g}")
    states_b, perm, ambiguous, ground_ambiguous = _transport(spec_a, spec_b)
    if ground_ambiguous:
        raise DegenerateGapError("ambiguous ground-state pairing between consecutive Hamiltonians")
    real, ad = _step_operators(spec_a, states_b, dt)
    p_next = np.outer(states_b[:, 0], states_b[:, 0].conj())
    observed = _norm(p_next @ (real - ad))
    # Full adiabatic unitary for the unprojected diagnostic.
    u_ad = (states_b * np.exp(-1j * spec_a.energies * dt)[None, :]) @ spec_a.states.conj().T
    u_k = (spec_a.states * np.exp(-1j * spec_a.energies * dt)[None, :]) @ spec_a.states.conj().T
    p0 = np.outer(spec_a.states[:, 0], spec_a.states[:, 0].conj())
    full = _norm((u_k - u_ad) @ p0)
    bound = 2 * lam**2 / (gamma - 2 * lam) ** 2
    return BoundReport(bound, observed, {
        "kind": "adiabatic_deviation", "gamma": gamma, "lambda": lam, "M": 1,
        "operator_norm": full, "operator_norm_sq": full**2, "ambiguous_pairing": ambiguous,
    })


def sequence_phase_deviation(seq: Sequence, dt: float) -> BoundReport:
    """Product of projected unitaries vs the adiabatic product along ``seq``.

    ``R = U_M P_0^M ... U_1 P_0^1`` and
    ``A = U_M P_0^M U_{M-1,ad} P_0^{M-1} ... U_{1,ad} P_0^1``; observed is
    ``||R - A||`` against ``2 M lambda^2/(gamma - 2 lambda)^2``. For two
    Hamiltonians this equals :func:`adiabatic_deviation`'s observed value.
    """
    if len(seq) < 2:
        raise ValueError("a sequence needs at least two Hamiltonians")
    mats = [_matrix(h) for h in seq]
    specs = [diagonalize(m) for m in mats]
    stats = sequence_stats(mats)
    if stats.gamma <= 2 * stats.lam:
        raise BoundVacuousError(f"gamma = {stats.gamma:.4g} <= 2 lambda = {2 * stats.lam:.4g}")
    dim = mats[0].shape[0]
    real = np.eye(dim, dtype=complex)
    ad = np.eye(dim, dtype=complex)
    any_ambiguous = False
    # Carry a transported frame so every U_{k,ad} uses the same gauge chain.
    frame = specs[0]
    for k in range(len(specs) - 1):
        states_b, perm, ambiguous, ground_ambiguous = _transport(frame, specs[k + 1])
        if ground_ambiguous:
            raise DegenerateGapError("ambiguous ground-state pairing in sequence")
        any_ambiguous |= ambiguous
        r_k, a_k = _step_operators(frame, states_b, dt)
        real = r_k @ real
        ad = a_k @ ad
        frame = SpectrumSlice(specs[k + 1].energies[perm], states_b)
    last = frame
    g = last.states[:, 0]
    final = np.exp(-1j * last.energies[0] * dt) * np.outer(g, g.conj())
    observed = _norm(final @ real - final @ ad)
    bound = eigenphase_shift_bound(stats)
    return BoundReport(bound, observed, {
        "kind": "sequence_phase_deviation", "gamma": stats.gamma, "lambda": stats.lam,
        "M": stats.m_count, "unprojected_norm": _norm(real - ad), "ambiguous_pairing": any_ambiguous,
    })


def posterior_perturbation_bound(delta_sup: float, p_evidence: float,
                                 p_evidence_perturbed: float | None = None) -> float:
    """``5 pi Delta / P(E)``, valid when ``min(P(E), P'(E)) >= 2 Delta``."""
    if delta_sup < 0:
        raise ValueError("delta_sup must be non-negative")
    smallest = p_evidence if p_evidence_perturbed is None else min(p_evidence, p_evidence_perturbed)
    if smallest < 2 * delta_sup or p_evidence <= 0:
        raise LemmaHypothesisError(
            f"evidence {smallest:.4g} is below 2 Delta = {2 * delta_sup:.4g}"
        )
    return 5 * math.pi * delta_sup / p_evidence


def factored_perturbation_bound(ratio_gap: float, n_experiments: int) -> float:
    """``5 pi ((1 + g)^N - 1)`` for per-experiment likelihood ratios within ``g`` of 1."""
    if ratio_gap < 0:
        raise ValueError("ratio_gap must be non-negative")
    return 5 * math.pi * math.expm1(n_experiments * math.log1p(ratio_gap))


def _check_ratios(ratios) -> np.ndarray:
    r = np.asarray(ratios, dtype=float)
    if r.ndim != 1 or np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ValueError("ratios must be a finite non-negative vector")
    big = np.flatnonzero(r > 0.5)
    if big.size:
        j = int(big[0])
        raise LemmaHypothesisError(f"ratio for experiment {j} is {r[j]:.4g} > 1/2", j)
    if r.size and r.size * r.max() >= 1:
        j = int(np.argmax(r))
        raise LemmaHypothesisError(
            f"N max ratio = {r.size * r[j]:.4g} >= 1 (largest at experiment {j})", j
        )
    return r


def joint_likelihood_shift_bound(per_experiment_ratios) -> float:
    """Bound on ``|mean joint-likelihood shift| / P(o)``: ``2 sum_j r_j``.

    ``r_j = max_phi |eps_j(phi)| / P(o_j|phi)``, the max taken over the
    prior's support. Requires every ``r_j <= 1/2`` and ``N max_j r_j < 1``.
    """
    return float(2.0 * _check_ratios(per_experiment_ratios).sum())


def posterior_mean_shift_bound(per_experiment_ratios, abs_phi_post: float,
                               mean_shift_ratio: float | None = None) -> float:
    """``8 (sum_j r_j) E_post|phi|``.

    ``mean_shift_ratio`` (``|delta_bar| / P(o)``), if given, must be <= 1/2.
    """
    r = _check_ratios(per_experiment_ratios)
    if mean_shift_ratio is not None and mean_shift_ratio > 0.5:
        raise LemmaHypothesisError(f"|delta_bar|/P(o) = {mean_shift_ratio:.4g} > 1/2")
    return float(8.0 * r.sum() * abs_phi_post)


def phase_error_budget(m_values, min_likelihood: float, delta_phi: float) -> float:
    """``8 pi (sum_j M_j / P_min) |delta_phi|``."""
    if not min_likelihood > 0:
        raise ValueError("min_likelihood must be positive")
    m = np.asarray(m_values, dtype=float)
    return float(8 * math.pi * m.sum() / min_likelihood * abs(delta_phi))


@dataclass
class ScalingReport:
    m_values: np.ndarray
    rms: np.ndarray
    slope: float
    intercept: float


def subsample_error_scaling(h: Hamiltonian, psi=None, m_values=(4, 16, 64, 256), trials: int = 200,
                            seed: int = 0, reps: float = 1.0, time_per_rep: float | None = None,
                            offset: float | None = None, outcome: int = 0,
                            energy: str = "eigenvalue") -> ScalingReport:
    """RMS likelihood error of uniformly subsampled Hamiltonians vs m.

    ``psi`` defaults to the ground state of ``h``. With
    ``energy="eigenvalue"`` the sampled energy is the eigenvalue of ``H_samp``
    whose eigenvector overlaps ``psi`` most; ``"first_order"`` uses
    ``<psi|H_samp|psi>`` instead, which drops the O(1/m) second-order bias. The
    default offset sits where the likelihood is steepest, so the error is
    first order in the energy shift. The slope is a least-squares fit of
    log RMS against log m over the m values with nonzero RMS.
    """
    stack = TermStack.of(h)
    if psi is None:
        psi = low_spectrum(h, 1).ground_state
    psi = np.asarray(psi, dtype=complex)
    if energy not in ("eigenvalue", "first_order"):
        raise ValueError(f"unknown energy mode {energy!r}")
    L = h.n_terms

    def sampled_energy(mat):
        if energy == "first_order":
            return float(np.vdot(psi, mat @ psi).real)
        spec = diagonalize(mat)
        return float(spec.energies[int(np.argmax(np.abs(spec.states.conj().T @ psi)))])

    e_ref = sampled_energy(stack.matrix())
    t = time_per_rep if time_per_rep is not None else math.pi / (h.one_norm + 0.1)
    theta = e_ref * t - math.pi / (2 * reps) if offset is None else offset
    p_true = likelihood(outcome, e_ref * t, reps, theta)
    rms = []
    for i, m in enumerate(m_values):
        errs = np.empty(trials)
        for k in range(trials):
            counts = make_rng(derive_seed(seed, i, k)).multinomial(int(m), np.full(L, 1.0 / L))
            coeffs = h.coefficients * (counts * (L / m))
            e_i = sampled_energy(stack.matrix(coeffs))
            errs[k] = likelihood(outcome, e_i * t, reps, theta) - p_true
        rms.append(math.sqrt(float(np.mean(errs**2))))
    rms = np.array(rms)
    m_arr = np.asarray(m_values, dtype=float)
    ok = rms > 0
    if ok.sum() >= 2:
        slope, intercept = np.polyfit(np.log(m_arr[ok]), np.log(rms[ok]), 1)
    else:
        slope, intercept = 0.0, -math.inf
    return ScalingReport(m_arr, rms, float(slope), float(intercept))


REPORT_COLUMNS = ("context", "gamma", "lambda", "M", "bound", "observed", "satisfied")


def report_row(report: BoundReport, context: str | None = None) -> list:
    """CSV row in :data:`REPORT_COLUMNS` order (17 significant digits)."""
    c = report.context
    def num(x):
        return "" if x is None else format(float(x), ".17g")
    return [
        context or c.get("kind", ""),
        num(c.get("gamma")),
        num(c.get("lambda")),
        "" if c.get("M") is None else str(int(c["M"])),
        num(report.bound_value),
        num(report.observed_value),
        "1" if report.satisfied else "0",
    ]
