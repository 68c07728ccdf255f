"""Grid-based Bayesian iterative phase estimation with per-repetition
resampled Hamiltonians.

Phase convention: an eigenstate with energy ``E`` evolved for time ``t`` has
eigenphase ``phi = E t`` and the single-ancilla circuit gives

    Pr(o | phi; M, theta) = (1 + (-1)^o cos(M (phi - theta))) / 2.

The ancilla phase gate is ``diag(1, exp(i M theta))`` and the controlled
block applies ``prod_k exp(-i H_k dt)`` over ``ceil(M)`` segments with
``dt = M t / ceil(M)``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_hamiltonian, check_positive_int
from .exact import TermStack, diagonalize, low_spectrum
from .hamiltonian import DENSE_CUTOFF, DimensionError, Hamiltonian, to_dense_matrix
from .seeding import derive_seed, make_rng

__all__ = [
    "DEFAULT_GRID_POINTS",
    "PosteriorGrid",
    "PosteriorUnderflowWarning",
    "ExperimentSetting",
    "ExperimentRecord",
    "DesignStrategy",
    "SessionConfig",
    "SessionTrace",
    "likelihood",
    "bayes_update",
    "posterior_mean",
    "posterior_variance",
    "circular_std",
    "design_experiment",
    "expected_posterior_variance",
    "default_time_scale",
    "outcome_amplitudes",
    "simulate_outcome",
    "run_session",
    "TRACE_COLUMNS",
    "trace_to_csv",
    "BayesianPhaseEstimator",
]

DEFAULT_GRID_POINTS = 2**14


class PosteriorUnderflowWarning(RuntimeWarning):
    """The updated posterior had zero total mass; the prior was kept."""


def likelihood(o, phi, m, theta):
    """Probability of ancilla outcome ``o`` (0 or 1); broadcasts over arrays."""
    sign = 1.0 - 2.0 * np.asarray(o, dtype=float)
    return 0.5 * (1.0 + sign * np.cos(np.asarray(m) * (np.asarray(phi) - np.asarray(theta))))


@dataclass(frozen=True)
class PosteriorGrid:
    """Probability masses on ``phi_i = -pi + 2 pi i / G``, ``i = 0..G-1``."""

    masses: np.ndarray

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != 1 or masses.size < 2:
            raise ValueError("masses must be a 1-d array with at least two points")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ValueError("masses must be finite and non-negative")
        if abs(masses.sum() - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {masses.sum()}, not 1")
        object.__setattr__(self, "masses", masses)

    @classmethod
    def uniform(cls, grid_points: int = DEFAULT_GRID_POINTS) -> "PosteriorGrid":
        return cls(np.full(grid_points, 1.0 / grid_points))

    @classmethod
    def from_density(cls, density) -> "PosteriorGrid":
        density = np.asarray(density, dtype=float)
        return cls(density / density.sum())

    @property
    def grid_points(self) -> int:
        return self.masses.size

    @property
    def phis(self) -> np.ndarray:
        return phase_grid(self.masses.size)

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.masses.size


def phase_grid(grid_points: int) -> np.ndarray:
    return -np.pi + 2 * np.pi * np.arange(grid_points) / grid_points


@dataclass(frozen=True)
class ExperimentSetting:
    reps: float
    offset: float
    time_per_rep: float

    def __post_init__(self):
        if not self.reps > 0:
            raise ValueError(f"reps must be positive, got {self.reps}")

    @property
    def segments(self) -> int:
        return math.ceil(self.reps)

    @property
    def dt(self) -> float:
        return self.reps * self.time_per_rep / self.segments


@dataclass(frozen=True)
class ExperimentRecord:
    setting: ExperimentSetting
    outcome: int
    segment_seeds: tuple[int, ...] = ()

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise ValueError("outcome must be 0 or 1")
        if self.segment_seeds and len(self.segment_seeds) != self.setting.segments:
            raise ValueError("need one segment seed per repetition")


def bayes_update(prior: PosteriorGrid, record: ExperimentRecord) -> PosteriorGrid:
    """Multiply by the likelihood at every grid phase and renormalize.

    If every grid point gets zero mass the prior is returned unchanged and a
    :class:`PosteriorUnderflowWarning` is emitted.
    """
    s = record.setting
    post = prior.masses * likelihood(record.outcome, prior.phis, s.reps, s.offset)
    total = post.sum()
    if not total > 0:
        warnings.warn("posterior underflow; keeping prior", PosteriorUnderflowWarning, stacklevel=2)
        return prior
    return PosteriorGrid(post / total)


def posterior_mean(p: PosteriorGrid, circular: bool = False) -> float:
    """Mean phase on the branch [-pi, pi) (or the circular mean angle)."""
    if circular:
        z = np.dot(p.masses, np.exp(1j * p.phis))
        return float(np.angle(z)) if abs(z) > 0 else 0.0
    return float(np.dot(p.masses, p.phis))


def posterior_variance(p: PosteriorGrid) -> float:
    mu = posterior_mean(p)
    return float(np.dot(p.masses, (p.phis - mu) ** 2))


def circular_std(p: PosteriorGrid) -> float:
    """``sqrt(-2 ln R)`` with ``R = |E[exp(i phi)]|``; ``inf`` when R is 0."""
    r = abs(np.dot(p.masses, np.exp(1j * p.phis)))
    r = min(r, 1.0)
    if r <= 0.0:
        return math.inf
    return math.sqrt(-2.0 * math.log(r))


@dataclass(frozen=True)
class DesignStrategy:
    """How the next ``(M, theta)`` is chosen from the current posterior.

    ``mode="heuristic"``
        ``M = min(m_cap, scale / sigma_circ)``; ``theta`` is the posterior
        mean (``offset="mean"``) or a draw from the posterior
        (``offset="sample"``, needs a seed). With the mean, a posterior that
        is symmetric about its mean stays symmetric, so the estimate can stall.
    ``mode="greedy"`` (default)
        One-step Bayes design: among ``M = min(m_cap, multiplier * scale /
        sigma_circ)`` for each multiplier and ``n_offsets`` evenly spaced
        offsets ``theta = mean + 2 pi i / (n_offsets M)``, pick the pair that
        minimizes the expected posterior variance after one outcome. Ties go
        to the first candidate, so the choice is deterministic.
    """

    m_cap: float = 2048.0
    scale: float = 1.25
    mode: str = "greedy"
    offset: str = "mean"
    circular_mean: bool = False
    multipliers: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
    n_offsets: int = 8

    def __post_init__(self):
        if self.mode not in ("greedy", "heuristic"):
            raise ValueError(f"mode must be 'greedy' or 'heuristic', got {self.mode!r}")
        if self.offset not in ("sample", "mean"):
            raise ValueError(f"offset must be 'sample' or 'mean', got {self.offset!r}")
        if not self.m_cap > 0 or not self.scale > 0:
            raise ValueError("m_cap and scale must be positive")
        if not self.multipliers or any(not m > 0 for m in self.multipliers):
            raise ValueError("multipliers must be a non-empty list of positive numbers")
        if int(self.n_offsets) < 1:
            raise ValueError("n_offsets must be >= 1")
        object.__setattr__(self, "multipliers", tuple(float(m) for m in self.multipliers))


# Grid points with mass below this fraction of the peak are ignored when
# scoring candidate designs (they cannot change the expected variance).
_DESIGN_MASS_CUTOFF = 1e-14


def _base_reps(p: PosteriorGrid, strategy: DesignStrategy) -> float:
    sigma = circular_std(p)
    reps = strategy.m_cap if sigma == 0 else min(strategy.m_cap, strategy.scale / sigma)
    if not reps > 0:
        # R underflowed to 0 (posterior uniform to machine precision).
        reps = strategy.scale / math.sqrt(-2.0 * math.log(np.finfo(float).eps))
    return reps


def expected_posterior_variance(p: PosteriorGrid, reps, offsets) -> np.ndarray:
    """Expected variance after one outcome, for each candidate ``(M, theta)``.

    Uses ``E_o[Var(phi | o)] = E[phi^2] - sum_o (sum_i w_i L_o(phi_i) phi_i)^2 / P(o)``.
    """
    reps = np.atleast_1d(np.asarray(reps, dtype=float))
    offsets = np.atleast_1d(np.asarray(offsets, dtype=float))
    keep = p.masses > _DESIGN_MASS_CUTOFF * p.masses.max()
    w = p.masses[keep]
    w = w / w.sum()
    phi = p.phis[keep]
    mu = float(np.dot(w, phi))
    l0 = likelihood(0, phi[None, :], reps[:, None], offsets[:, None])
    p0 = l0 @ w
    p1 = 1.0 - p0
    a0 = l0 @ (w * phi)
    a1 = mu - a0
    second = float(np.dot(w, phi * phi))
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(p0 > 0, a0 * a0 / p0, 0.0) + np.where(p1 > 0, a1 * a1 / p1, 0.0)
    return second - gain


def design_experiment(
    p: PosteriorGrid,
    strategy: DesignStrategy = DesignStrategy(),
    time_per_rep: float = 1.0,
    seed: int | None = None,
) -> ExperimentSetting:
    base = _base_reps(p, strategy)
    if strategy.mode == "greedy":
        mu = posterior_mean(p)
        reps = np.repeat([min(strategy.m_cap, base * k) for k in strategy.multipliers],
                         strategy.n_offsets)
        steps = np.tile(np.arange(strategy.n_offsets), len(strategy.multipliers))
        offsets = mu + 2 * np.pi * steps / (strategy.n_offsets * reps)
        i = int(np.argmin(expected_posterior_variance(p, reps, offsets)))
        # Shifting theta by 2 pi / M leaves M theta, and so the experiment, unchanged.
        period = 2 * np.pi / reps[i]
        theta = offsets[i] - period * np.round(offsets[i] / period)
        return ExperimentSetting(float(reps[i]), float(theta), float(time_per_rep))
    if strategy.offset == "mean":
        theta = posterior_mean(p, circular=strategy.circular_mean)
    else:
        if seed is None:
            raise ValueError("offset='sample' needs a seed")
        idx = make_rng(seed).choice(p.grid_points, p=p.masses)
        theta = p.phis[idx]
    return ExperimentSetting(float(base), float(theta), float(time_per_rep))


def default_time_scale(h: Hamiltonian) -> float:
    """``pi / (sum_j |c_j| + 0.1)``: keeps every eigenphase inside (-pi, pi)."""
    return math.pi / (h.one_norm + 0.1)


def _as_matrix(segment, cutoff):
    if isinstance(segment, Hamiltonian):
        return to_dense_matrix(segment, cutoff)
    return np.asarray(segment, dtype=complex)


def _evolve_segments(psi, segments, dt, cutoff):
    """Apply ``exp(-i H_k dt)`` in order; runs of the same object are fused."""
    out = psi
    k = 0
    while k < len(segments):
        seg = segments[k]
        run = 1
        while k + run < len(segments) and segments[k + run] is seg:
            run += 1
        spec = diagonalize(_as_matrix(seg, cutoff))
        if spec.states.shape[0] != out.size:
            raise ValueError("segment Hamiltonian does not match the state dimension")
        out = spec.states @ (np.exp(-1j * spec.energies * dt * run) * (spec.states.conj().T @ out))
        k += run
    return out


def outcome_amplitudes(system_state, segments: Sequence, setting: ExperimentSetting,
                       cutoff: int = DENSE_CUTOFF):
    """Unnormalized system states attached to ancilla outcomes 0 and 1."""
    psi = np.asarray(system_state, dtype=complex)
    if len(segments) != setting.segments:
        raise ValueError(f"expected {setting.segments} segments, got {len(segments)}")
    if psi.size > 1 << cutoff:
        raise DimensionError("system register exceeds the dense cutoff")
    evolved = _evolve_segments(psi, segments, setting.dt, cutoff)
    phase = np.exp(1j * setting.reps * setting.offset)
    return (psi + phase * evolved) / 2, (psi - phase * evolved) / 2


def simulate_outcome(system_state, segments: Sequence, setting: ExperimentSetting, seed: int,
                     cutoff: int = DENSE_CUTOFF):
    """Run the interferometer once and Born-sample the ancilla.

    Returns ``(outcome, post_measurement_state)``; the system state is the
    normalized projection onto the observed ancilla value.
    """
    branch0, branch1 = outcome_amplitudes(system_state, segments, setting, cutoff)
    p0 = float(np.vdot(branch0, branch0).real)
    p0 = min(max(p0, 0.0), 1.0)
    outcome = 0 if make_rng(seed).random() < p0 else 1
    branch = branch0 if outcome == 0 else branch1
    return outcome, branch / np.linalg.norm(branch)


@dataclass(frozen=True)
class SessionConfig:
    n_experiments: int = 40
    grid_points: int = DEFAULT_GRID_POINTS
    strategy: DesignStrategy = field(default_factory=DesignStrategy)
    time_per_rep: float | None = None
    track_sequence: bool = False


@dataclass
class SessionTrace:
    seed: int
    time_per_rep: float
    ground_energy: float
    records: list[ExperimentRecord] = field(default_factory=list)
    posterior_means: list[float] = field(default_factory=list)
    posterior_variances: list[float] = field(default_factory=list)
    estimate_phase: float = 0.0
    estimate_energy: float = 0.0
    posterior_std: float = 0.0
    # Populated when the sequence of applied Hamiltonians is tracked.
    sequence_gamma: float | None = None
    sequence_lambda: float | None = None
    total_segments: int = 0
    max_segments: int = 0
    final_posterior: PosteriorGrid | None = field(default=None, repr=False)

    @property
    def phase_error(self) -> float:
        return abs(self.estimate_phase - self.ground_energy * self.time_per_rep)


class _SequenceTracker:
    """Running min gap and max consecutive spectral-norm difference."""

    def __init__(self, first_matrix):
        self.prev = first_matrix
        energies = np.linalg.eigvalsh(first_matrix)
        self.gamma = float(energies[1] - energies[0])
        self.lam = 0.0

    def push(self, matrix, energies):
        self.gamma = min(self.gamma, float(energies[1] - energies[0]))
        diff = np.linalg.eigvalsh(matrix - self.prev)
        self.lam = max(self.lam, float(np.max(np.abs(diff))))
        self.prev = matrix


def run_session(h: Hamiltonian, sampler=None, config: SessionConfig = SessionConfig(),
                seed: int = 0) -> SessionTrace:
    """Adaptive phase-estimation session on the ground state of ``h``.

    ``sampler`` is a fitted :class:`~randpe.sampler.HedgedImportanceSampler`
    (one fresh Hamiltonian per repetition) or None for exact evolution.
    """
    check_hamiltonian(h)
    n_exp = int(config.n_experiments)
    if n_exp < 0:
        raise ValueError("n_experiments must be non-negative")
    t = default_time_scale(h) if config.time_per_rep is None else float(config.time_per_rep)
    spec = low_spectrum(h, 1)
    e0 = spec.ground_energy
    if not abs(e0) * t < math.pi:
        raise ValueError(f"|E0| t = {abs(e0) * t:.4g} >= pi: eigenphase would alias")
    state = spec.ground_state
    stack = TermStack.of(h)
    exact_matrix = stack.matrix()
    tracker = _SequenceTracker(exact_matrix) if config.track_sequence else None

    posterior = PosteriorGrid.uniform(config.grid_points)
    trace = SessionTrace(seed=seed, time_per_rep=t, ground_energy=e0)
    for j in range(n_exp):
        setting = design_experiment(posterior, config.strategy, t, derive_seed(seed, j, -2))
        n_seg = setting.segments
        seg_seeds = tuple(derive_seed(seed, j, k) for k in range(n_seg))
        if sampler is None:
            segments = [exact_matrix] * n_seg
            if tracker is not None:
                energies = np.linalg.eigvalsh(exact_matrix)
                for _ in range(n_seg):
                    tracker.push(exact_matrix, energies)
        else:
            segments = []
            for s in seg_seeds:
                mat = stack.matrix(sampler.sample_coefficients(s))
                segments.append(mat)
                if tracker is not None:
                    tracker.push(mat, np.linalg.eigvalsh(mat))
        outcome, state = simulate_outcome(state, segments, setting, derive_seed(seed, j, -1))
        record = ExperimentRecord(setting, outcome, seg_seeds)
        posterior = bayes_update(posterior, record)
        trace.records.append(record)
        trace.posterior_means.append(posterior_mean(posterior, config.strategy.circular_mean))
        trace.posterior_variances.append(posterior_variance(posterior))
        trace.total_segments += n_seg
        trace.max_segments = max(trace.max_segments, n_seg)

    trace.estimate_phase = posterior_mean(posterior, config.strategy.circular_mean)
    trace.estimate_energy = trace.estimate_phase / t
    trace.posterior_std = math.sqrt(posterior_variance(posterior))
    trace.final_posterior = posterior
    if tracker is not None:
        trace.sequence_gamma = tracker.gamma
        trace.sequence_lambda = tracker.lam
    return trace


TRACE_COLUMNS = (
    "experiment",
    "reps",
    "offset",
    "time_per_rep",
    "outcome",
    "segment_seeds",
    "posterior_mean",
    "posterior_variance",
)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trace_to_csv(trace: SessionTrace) -> str:
    """One row per experiment; ``segment_seeds`` is ``;``-separated."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for j, (rec, mu, var) in enumerate(
        zip(trace.records, trace.posterior_means, trace.posterior_variances)
    ):
        s = rec.setting
        writer.writerow([
            j, _fmt(s.reps), _fmt(s.offset), _fmt(s.time_per_rep), rec.outcome,
            ";".join(str(x) for x in rec.segment_seeds), _fmt(mu), _fmt(var),
        ])
    return buf.getvalue()


class BayesianPhaseEstimator(BaseEstimator):
    """Estimator wrapper around :func:`run_session`.

    ``fit(h)`` runs one session and stores ``trace_``, ``energy_`` (the ground
    energy estimate) and ``posterior_``. ``predict()`` returns ``energy_``.
    """

    def __init__(self, n_experiments=40, grid_points=DEFAULT_GRID_POINTS, m_cap=2048.0,
                 design_scale=1.25, design="greedy", offset="mean", time_per_rep=None,
                 sampler=None, circular_mean=False, seed=0):
        self.n_experiments = n_experiments
        self.grid_points = grid_points
        self.m_cap = m_cap
        self.design_scale = design_scale
        self.design = design
        self.offset = offset
        self.time_per_rep = time_per_rep
        self.sampler = sampler
        self.circular_mean = circular_mean
        self.seed = seed

    def _config(self):
        check_positive_int(self.grid_points, "grid_points")
        return SessionConfig(
            n_experiments=self.n_experiments,
            grid_points=self.grid_points,
            strategy=DesignStrategy(m_cap=self.m_cap, scale=self.design_scale, mode=self.design,
                                    offset=self.offset, circular_mean=self.circular_mean),
            time_per_rep=self.time_per_rep,
        )

    def fit(self, hamiltonian, y=None):
        sampler = self.sampler
        if sampler is not None and not hasattr(sampler, "distribution_"):
            sampler = sampler.fit(hamiltonian)
        self.trace_ = run_session(hamiltonian, sampler, self._config(), self.seed)
        self.energy_ = self.trace_.estimate_energy
        self.posterior_ = self.trace_.final_posterior
        return self

    def predict(self, X=None):
        check_is_fitted(self, "energy_")
        return self.energy_
