"""Hedged importance sampling of Hamiltonian terms.

A sampled Hamiltonian is ``(1/N) sum_i H_{l_i} / f(l_i)`` with the indices
``l_i`` drawn i.i.d. from the importance distribution ``f``. The N categorical
draws are realized as one multinomial draw of per-term counts, which is the
same distribution over multisets and costs O(L) regardless of N.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_hamiltonian, check_positive_int, check_real_vector, check_rho
from .exact import TermStack, low_spectrum
from .hamiltonian import Hamiltonian, PauliTerm, canonicalize, term_norm
from .seeding import make_rng

__all__ = [
    "DEFAULT_FLOOR_FRACTION",
    "ImportanceDistribution",
    "SampledHamiltonian",
    "LemmaHypothesisError",
    "importance_weights",
    "exact_surrogate",
    "parse_surrogate",
    "serialize_surrogate",
    "draw_sampled_hamiltonian",
    "sampled_from_counts",
    "uniform_subsample",
    "uniform_from_counts",
    "estimator_variance",
    "optimal_variance",
    "robust_variance_bound",
    "HedgedImportanceSampler",
]

DEFAULT_FLOOR_FRACTION = 1e-9


class LemmaHypothesisError(ValueError):
    """A bound was requested outside the hypotheses it was proved under."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)


@dataclass(frozen=True)
class ImportanceDistribution:
    weights: np.ndarray
    rho: float
    surrogate_expectations: np.ndarray
    floor_fraction: float = 0.0

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class SampledHamiltonian:
    hamiltonian: Hamiltonian
    seed: int | None
    draws: int
    counts: np.ndarray = field(repr=False)

    @property
    def source_indices(self) -> np.ndarray:
        """The drawn term indices as a sorted multiset."""
        return np.repeat(np.arange(len(self.counts)), self.counts)

    @property
    def unique_terms(self) -> int:
        return self.hamiltonian.n_terms


def importance_weights(
    h: Hamiltonian,
    surrogate_expectations,
    rho: float,
    floor_fraction: float | None = DEFAULT_FLOOR_FRACTION,
) -> ImportanceDistribution:
    """``f(j) ∝ (1-rho)|<H_j>| + rho ||H_j||``, normalized.

    Raw weights below ``floor_fraction * max(raw)`` are raised to that floor so
    no term is unsampleable; pass ``floor_fraction=None`` (or 0) to disable.
    """
    check_hamiltonian(h)
    rho = check_rho(rho)
    expectations = check_real_vector(surrogate_expectations, "surrogate_expectations", h.n_terms)
    norms = np.array([term_norm(t) for t in h.terms])
    raw = (1.0 - rho) * np.abs(expectations) + rho * norms
    top = raw.max(initial=0.0)
    if top <= 0.0:
        raise ValueError("all importance weights are zero; cannot normalize")
    floor_fraction = float(floor_fraction or 0.0)
    if floor_fraction > 0:
        raw = np.maximum(raw, floor_fraction * top)
    return ImportanceDistribution(raw / raw.sum(), rho, expectations, floor_fraction)


def exact_surrogate(h: Hamiltonian) -> np.ndarray:
    """Per-term expectations in the exact ground state of ``h``."""
    psi = low_spectrum(h, 1).ground_state
    return TermStack.of(h).expectations(psi)


def parse_surrogate(text: str, n_terms: int) -> np.ndarray:
    """Read ``<term-index> <expectation>`` lines; every index must appear once."""
    values = np.full(n_terms, np.nan)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected '<term-index> <expectation>'")
        try:
            idx, val = int(parts[0]), float(parts[1])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if not 0 <= idx < n_terms:
            raise ValueError(f"line {lineno}: term index {idx} out of range [0, {n_terms})")
        if not np.isnan(values[idx]):
            raise ValueError(f"line {lineno}: term index {idx} given twice")
        if not np.isfinite(val):
            raise ValueError(f"line {lineno}: non-finite expectation")
        values[idx] = val
    missing = np.flatnonzero(np.isnan(values))
    if missing.size:
        raise ValueError(f"surrogate file is missing term indices {missing.tolist()[:10]}")
    return values


def serialize_surrogate(values) -> str:
    return "".join(f"{j} {float(v)!r}\n" for j, v in enumerate(values))


def sampled_from_counts(h: Hamiltonian, weights, counts, seed: int | None = None) -> SampledHamiltonian:
    """Build ``(1/N) sum_i H_{l_i}/f(l_i)`` from per-term draw counts."""
    counts = np.asarray(counts, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    n = int(counts.sum())
    if n < 1:
        raise ValueError("need at least one draw")
    if np.any((counts > 0) & (weights <= 0)):
        raise ValueError("a term with zero weight cannot be drawn")
    terms = [
        PauliTerm(t.coefficient * (c / (n * w)), t.factors)
        for t, c, w in zip(h.terms, counts, weights)
        if c > 0
    ]
    return SampledHamiltonian(canonicalize(Hamiltonian(tuple(terms), h.qubit_count)), seed, n, counts)


def draw_sampled_hamiltonian(
    dist: ImportanceDistribution, h: Hamiltonian, n_draws: int, seed: int
) -> SampledHamiltonian:
    """N i.i.d. importance draws, reweighted and merged; deterministic in ``seed``."""
    n_draws = check_positive_int(n_draws, "n_draws")
    if len(dist.weights) != h.n_terms:
        raise ValueError("distribution is not aligned with the Hamiltonian's terms")
    if not np.any(dist.weights > 0):
        raise ValueError("every importance weight is zero")
    counts = make_rng(seed).multinomial(n_draws, dist.weights)
    return sampled_from_counts(h, dist.weights, counts, seed)


def uniform_from_counts(h: Hamiltonian, counts, seed: int | None = None) -> SampledHamiltonian:
    """``(L/m) sum_i H_{l_i}`` from per-term draw counts."""
    L = h.n_terms
    return sampled_from_counts(h, np.full(L, 1.0 / L), counts, seed)


def uniform_subsample(h: Hamiltonian, m: int, seed: int) -> SampledHamiltonian:
    """m uniform draws with replacement, scaled by L/m."""
    m = check_positive_int(m, "m")
    if h.n_terms == 0:
        raise ValueError("cannot subsample an empty Hamiltonian")
    counts = make_rng(seed).multinomial(m, np.full(h.n_terms, 1.0 / h.n_terms))
    return uniform_from_counts(h, counts, seed)


def estimator_variance(weights, values) -> float:
    """Variance of the importance-sampled mean of ``values`` (N = len(values)).

    ``(1/N^2) sum_j F_j^2/f_j - (mean F)^2``; ``inf`` if some nonzero value has
    zero weight.
    """
    f = np.asarray(weights, dtype=float)
    F = np.asarray(values, dtype=float)
    if f.shape != F.shape:
        raise ValueError("weights and values must have the same length")
    n = F.size
    nonzero = F != 0
    if np.any(nonzero & (f <= 0)):
        return float("inf")
    second = np.sum(F[nonzero] ** 2 / f[nonzero]) / n**2
    return float(second - (F.sum() / n) ** 2)


def optimal_variance(values) -> float:
    """``(E|F|)^2 - (E F)^2``: the variance with ``f ∝ |F|``."""
    F = np.asarray(values, dtype=float)
    if F.size == 0:
        raise ValueError("values must be nonempty")
    return float(max(np.mean(np.abs(F)) ** 2 - np.mean(F) ** 2, 0.0))


def robust_variance_bound(values, perturbed) -> float:
    """Variance bound for ``f ∝ |perturbed|`` when ``||F~_j| - |F_j|| <= |F_j|/2``.

    Returns ``(4/N^2)(sum|delta|)(sum|F|) + optimal_variance(F)``.
    """
    F = np.asarray(values, dtype=float)
    Ft = np.asarray(perturbed, dtype=float)
    if F.shape != Ft.shape:
        raise ValueError("values and perturbed must have the same length")
    delta = np.abs(Ft) - np.abs(F)
    bad = np.flatnonzero(np.abs(delta) > np.abs(F) / 2)
    if bad.size:
        j = int(bad[0])
        raise LemmaHypothesisError(
            f"|delta_{j}| = {abs(delta[j]):.3g} exceeds |F_{j}|/2 = {abs(F[j]) / 2:.3g}", j
        )
    n = F.size
    return float(4.0 / n**2 * np.abs(delta).sum() * np.abs(F).sum() + optimal_variance(F))


class HedgedImportanceSampler(BaseEstimator):
    """Estimator-style front end for hedged importance sampling.

    ``fit(h)`` computes the importance distribution (from the exact ground
    state unless ``surrogate_expectations`` are passed); ``sample(seed)``
    returns one :class:`SampledHamiltonian`.

    Parameters
    ----------
    rho : float
        Hedging parameter in [0, 1]; 1 weights terms by norm only.
    n_draws : int
        Number of terms N drawn per sampled Hamiltonian.
    floor_fraction : float or None
        Relative floor on raw weights; None disables it.
    """

    def __init__(self, rho=1e-3, n_draws=1000, floor_fraction=DEFAULT_FLOOR_FRACTION):
        self.rho = rho
        self.n_draws = n_draws
        self.floor_fraction = floor_fraction

    def fit(self, hamiltonian, surrogate_expectations=None):
        check_hamiltonian(hamiltonian)
        check_positive_int(self.n_draws, "n_draws")
        if surrogate_expectations is None:
            surrogate_expectations = exact_surrogate(hamiltonian)
        self.hamiltonian_ = hamiltonian
        self.distribution_ = importance_weights(
            hamiltonian, surrogate_expectations, self.rho, self.floor_fraction
        )
        return self

    @property
    def weights_(self):
        check_is_fitted(self, "distribution_")
        return self.distribution_.weights

    def sample(self, seed: int) -> SampledHamiltonian:
        check_is_fitted(self, "distribution_")
        return draw_sampled_hamiltonian(self.distribution_, self.hamiltonian_, self.n_draws, seed)

    def sample_coefficients(self, seed: int) -> np.ndarray:
        """Reweighted coefficients aligned with the source terms (zeros kept).

        Same draw as :meth:`sample`, without building a Hamiltonian object.
        """
        check_is_fitted(self, "distribution_")
        f = self.distribution_.weights
        counts = make_rng(seed).multinomial(self.n_draws, f)
        coeffs = np.zeros(len(f))
        drawn = counts > 0
        coeffs[drawn] = self.hamiltonian_.coefficients[drawn] * (counts[drawn] / (self.n_draws * f[drawn]))
        return coeffs
