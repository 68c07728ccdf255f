"""Dense exact diagonalization and time evolution for small registers.

States are plain complex numpy vectors of length ``2**n`` (qubit 0 is the
least-significant bit). Everything here goes through a full ``eigh``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .hamiltonian import (
    DENSE_CUTOFF,
    DimensionError,
    Hamiltonian,
    PauliTerm,
    term_matrix,
    to_dense_matrix,
)

__all__ = [
    "DEGENERACY_TOL",
    "SpectrumSlice",
    "DegenerateGapError",
    "as_state",
    "basis_state",
    "fix_phase",
    "diagonalize",
    "low_spectrum",
    "gap",
    "expectation",
    "term_expectations",
    "evolve",
    "evolution_operator",
    "operator_norm_diff",
    "TermStack",
]

DEGENERACY_TOL = 1e-10
_NORM_TOL = 1e-10


class DegenerateGapError(ValueError):
    """Raised when a gap is requested from a (numerically) degenerate spectrum."""


@dataclass(frozen=True)
class SpectrumSlice:
    energies: np.ndarray
    states: np.ndarray  # columns are eigenvectors

    def __len__(self):
        return len(self.energies)

    @property
    def ground_energy(self) -> float:
        return float(self.energies[0])

    @property
    def ground_state(self) -> np.ndarray:
        return self.states[:, 0]


def as_state(psi, n_qubits: int | None = None) -> np.ndarray:
    """Validate a state vector: complex, power-of-two length, unit norm."""
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1 or psi.size == 0 or psi.size & (psi.size - 1):
        raise ValueError("state must be a 1-d vector of length 2**n")
    if n_qubits is not None and psi.size != 1 << n_qubits:
        raise ValueError(f"state has length {psi.size}, expected {1 << n_qubits}")
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > _NORM_TOL:
        raise ValueError(f"state is not normalized (norm {norm})")
    return psi


def basis_state(index: int, n_qubits: int) -> np.ndarray:
    psi = np.zeros(1 << n_qubits, dtype=complex)
    psi[index] = 1.0
    return psi


def fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude amplitude is real positive.

    Ties are broken by the lowest index, with a relative tolerance so that
    round-off does not flip the choice.
    """
    vectors = np.array(vectors, dtype=complex, copy=True)
    single = vectors.ndim == 1
    if single:
        vectors = vectors[:, None]
    mags = np.abs(vectors)
    peak = mags.max(axis=0)
    idx = np.argmax(mags >= peak * (1 - 1e-9), axis=0)
    pivots = vectors[idx, np.arange(vectors.shape[1])]
    vectors *= (np.abs(pivots) / pivots)[None, :]
    return vectors[:, 0] if single else vectors


def diagonalize(matrix: np.ndarray) -> SpectrumSlice:
    """Full eigendecomposition of a Hermitian matrix with the phase convention."""
    try:
        energies, states = np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError(f"eigensolver failed to converge: {exc}") from exc
    return SpectrumSlice(energies, fix_phase(states))


def _dense(h, cutoff):
    if isinstance(h, Hamiltonian):
        return to_dense_matrix(h, cutoff)
    return np.asarray(h, dtype=complex)


def low_spectrum(h: Hamiltonian, k: int, cutoff: int = DENSE_CUTOFF) -> SpectrumSlice:
    """The ``k`` lowest eigenpairs of ``h``."""
    mat = _dense(h, cutoff)
    dim = mat.shape[0]
    if not 1 <= k <= dim:
        raise ValueError(f"k must be in [1, {dim}], got {k}")
    spec = diagonalize(mat)
    return SpectrumSlice(spec.energies[:k].copy(), spec.states[:, :k].copy())


def gap(s: SpectrumSlice, degeneracy_tol: float = DEGENERACY_TOL, strict: bool = False) -> float:
    """``E_1 - E_0``.

    Returns 0.0 for a degenerate ground level unless ``strict`` is set, in which
    case :class:`DegenerateGapError` is raised.
    """
    if len(s.energies) < 2:
        raise ValueError("gap needs at least two energies")
    g = float(s.energies[1] - s.energies[0])
    if g < degeneracy_tol:
        if strict:
            raise DegenerateGapError(f"ground level is degenerate (gap {g:.3g})")
        return 0.0
    return g


def expectation(state, t: PauliTerm | Hamiltonian) -> float:
    """Real expectation value of a term (or a whole Hamiltonian) in ``state``."""
    psi = np.asarray(state, dtype=complex)
    n = psi.size.bit_length() - 1
    if isinstance(t, Hamiltonian):
        if t.qubit_count != n:
            raise ValueError("state and Hamiltonian dimensions differ")
        mat = to_dense_matrix(t)
    else:
        if any(q >= n for q in t.qubits):
            raise ValueError("term acts outside the state's register")
        mat = term_matrix(t, n)
    val = np.vdot(psi, mat @ psi)
    return float(val.real)


def term_expectations(state, h: Hamiltonian) -> np.ndarray:
    """``<psi|H_j|psi>`` for every term of ``h``, in term order."""
    return TermStack.of(h).expectations(state)


def evolution_operator(h, t: float, cutoff: int = DENSE_CUTOFF) -> np.ndarray:
    spec = diagonalize(_dense(h, cutoff))
    return (spec.states * np.exp(-1j * spec.energies * t)) @ spec.states.conj().T


def evolve(state, h, t: float, cutoff: int = DENSE_CUTOFF) -> np.ndarray:
    """``exp(-i H t) |psi>`` through the eigendecomposition of ``H``."""
    psi = np.asarray(state, dtype=complex)
    if t == 0:
        return psi.copy()
    spec = diagonalize(_dense(h, cutoff))
    if spec.states.shape[0] != psi.size:
        raise ValueError("state and Hamiltonian dimensions differ")
    amps = spec.states.conj().T @ psi
    return spec.states @ (np.exp(-1j * spec.energies * t) * amps)


def operator_norm_diff(a, b, cutoff: int = DENSE_CUTOFF) -> float:
    """Spectral norm ``||A - B||`` (largest |eigenvalue| of the Hermitian difference)."""
    if isinstance(a, Hamiltonian) and isinstance(b, Hamiltonian) and a.qubit_count != b.qubit_count:
        raise ValueError("Hamiltonians act on registers of different size")
    diff = _dense(a, cutoff) - _dense(b, cutoff)
    if diff.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(diff))))


class TermStack:
    """Dense matrices of a Hamiltonian's terms (unit coefficients), stacked.

    Lets reweighted copies of the same term list be realized as one
    ``tensordot`` instead of rebuilding every Pauli string.
    """

    def __init__(self, h: Hamiltonian, cutoff: int = DENSE_CUTOFF):
        if h.qubit_count > cutoff:
            raise DimensionError(f"{h.qubit_count} qubits exceeds the dense cutoff of {cutoff}")
        self.hamiltonian = h
        dim = 1 << h.qubit_count
        self.paulis = np.zeros((h.n_terms, dim, dim), dtype=complex)
        for j, term in enumerate(h.terms):
            self.paulis[j] = term_matrix(PauliTerm(1.0, term.factors), h.qubit_count, cutoff)
        self.coefficients = h.coefficients

    @staticmethod
    def of(h: Hamiltonian) -> "TermStack":
        return _cached_stack(h)

    def matrix(self, coefficients=None) -> np.ndarray:
        """Dense matrix of ``sum_j c_j P_j`` (defaults to the source coefficients)."""
        c = self.coefficients if coefficients is None else np.asarray(coefficients, dtype=float)
        dim = self.paulis.shape[1]
        if len(c) == 0:
            return np.zeros((dim, dim), dtype=complex)
        return np.tensordot(c, self.paulis, axes=1)

    def expectations(self, state) -> np.ndarray:
        psi = np.asarray(state, dtype=complex)
        if psi.size != self.paulis.shape[1]:
            raise ValueError("state and Hamiltonian dimensions differ")
        vals = np.einsum("i,jik,k->j", psi.conj(), self.paulis, psi)
        return self.coefficients * vals.real


@lru_cache(maxsize=64)
def _cached_stack(h: Hamiltonian) -> TermStack:
    return TermStack(h)
