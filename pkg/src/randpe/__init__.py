"""Iterative Bayesian phase estimation with importance-sampled Hamiltonians."""

from .hamiltonian import (
    DENSE_CUTOFF,
    Hamiltonian,
    PauliTerm,
    canonicalize,
    parse_hamiltonian,
    serialize_hamiltonian,
    support,
    term_norm,
    to_dense_matrix,
)
from .phase_estimation import BayesianPhaseEstimator, PosteriorGrid, run_session
from .sampler import HedgedImportanceSampler, importance_weights

__version__ = "0.1.0"
