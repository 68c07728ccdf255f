"""Pauli-string Hamiltonians: representation, text format, canonical form and
dense matrices.

Bit convention: qubit 0 is the least-significant bit of a computational basis
index, so ``|q_{n-1} ... q_1 q_0>`` has index ``sum_i q_i 2**i``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "PauliTerm",
    "Hamiltonian",
    "HamiltonianFormatError",
    "DimensionError",
    "DENSE_CUTOFF",
    "parse_hamiltonian",
    "serialize_hamiltonian",
    "canonicalize",
    "term_norm",
    "support",
    "to_dense_matrix",
    "term_matrix",
]

DENSE_CUTOFF = 14

_LETTERS = ("X", "Y", "Z")
_FACTOR_RE = re.compile(r"^([XYZ])(\d+)$")
_LINE_RE = re.compile(r"^(\S+)\s*\[([^\]]*)\]$")
_HEADER_RE = re.compile(r"^qubits\s*:\s*(\d+)$")


class HamiltonianFormatError(ValueError):
    """Raised for malformed term-list text; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(ValueError):
    """Raised when an operation would exceed the dense-matrix size limit."""


@dataclass(frozen=True)
class PauliTerm:
    """A real coefficient times a tensor product of single-qubit Paulis.

    ``factors`` is stored as a sorted tuple of ``(qubit, letter)`` pairs; an
    empty tuple is the identity. A mapping is accepted on construction.
    """

    coefficient: float
    factors: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        coeff = self.coefficient
        if isinstance(coeff, complex) or np.iscomplexobj(coeff):
            raise ValueError("Pauli term coefficients must be real")
        coeff = float(coeff)
        if not math.isfinite(coeff):
            raise ValueError(f"non-finite coefficient {coeff!r}")
        object.__setattr__(self, "coefficient", coeff)

        raw = self.factors
        items = list(raw.items()) if isinstance(raw, Mapping) else list(raw)
        seen = set()
        for qubit, letter in items:
            if not isinstance(qubit, (int, np.integer)) or qubit < 0:
                raise ValueError(f"qubit index must be a non-negative integer, got {qubit!r}")
            if letter not in _LETTERS:
                raise ValueError(f"unknown Pauli letter {letter!r}")
            if qubit in seen:
                raise ValueError(f"duplicate qubit index {qubit} in term")
            seen.add(qubit)
        object.__setattr__(
            self, "factors", tuple(sorted((int(q), str(p)) for q, p in items))
        )

    @property
    def key(self) -> tuple[tuple[int, str], ...]:
        return self.factors

    @property
    def qubits(self) -> frozenset[int]:
        return frozenset(q for q, _ in self.factors)

    def scaled(self, factor: float) -> "PauliTerm":
        return PauliTerm(self.coefficient * factor, self.factors)

    def label(self) -> str:
        return "[" + " ".join(f"{p}{q}" for q, p in self.factors) + "]"

    def __str__(self):
        return f"{self.coefficient!r} {self.label()}"


@dataclass(frozen=True)
class Hamiltonian:
    """An ordered sum of Pauli terms on an explicit register of ``qubit_count``."""

    terms: tuple[PauliTerm, ...]
    qubit_count: int
    _canonical: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        if self.qubit_count < 0:
            raise ValueError("qubit_count must be non-negative")
        for t in terms:
            for q, _ in t.factors:
                if q >= self.qubit_count:
                    raise ValueError(
                        f"factor index {q} out of range for {self.qubit_count} qubits"
                    )

    @classmethod
    def from_terms(cls, terms: Iterable[PauliTerm], qubit_count: int | None = None):
        """Build a canonical Hamiltonian, inferring the register size if omitted."""
        terms = list(terms)
        if qubit_count is None:
            qubit_count = 1 + max((q for t in terms for q, _ in t.factors), default=-1)
        return canonicalize(cls(tuple(terms), qubit_count))

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([t.coefficient for t in self.terms], dtype=float)

    @property
    def one_norm(self) -> float:
        return float(np.abs(self.coefficients).sum())

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)


def canonicalize(h: Hamiltonian) -> Hamiltonian:
    """Merge terms with identical factor maps, drop exact zeros, sort.

    Order is lexicographic in the sorted ``(qubit, letter)`` sequence, so the
    identity term (empty sequence) always comes first.
    """
    merged: dict[tuple, float] = {}
    for t in h.terms:
        merged[t.key] = merged.get(t.key, 0.0) + t.coefficient
    terms = tuple(
        PauliTerm(c, k) for k, c in sorted(merged.items()) if c != 0.0
    )
    return Hamiltonian(terms, h.qubit_count, _canonical=True)


def term_norm(t: PauliTerm) -> float:
    """Operator norm of a term; Pauli strings are unitary, so this is |c|."""
    return abs(t.coefficient)


def support(h: Hamiltonian) -> frozenset[int]:
    """Qubits touched by a non-identity factor of some term."""
    out: set[int] = set()
    for t in h.terms:
        out.update(t.qubits)
    return frozenset(out)


def parse_hamiltonian(text: str) -> Hamiltonian:
    """Parse the term-list text format into a canonical Hamiltonian.

    One term per line, ``<coefficient> [<P><idx> ...]``; ``[]`` is the identity,
    ``#`` starts a comment and an optional ``qubits: <n>`` header fixes the
    register size.
    """
    terms: list[PauliTerm] = []
    header_n: int | None = None
    max_index = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER_RE.match(line)
        if m:
            if header_n is not None or terms:
                raise HamiltonianFormatError("qubits header must come first and only once", lineno)
            header_n = int(m.group(1))
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise HamiltonianFormatError(f"cannot parse term {line!r}", lineno)
        coeff_text, body = m.groups()
        try:
            coeff = float(coeff_text)
        except ValueError:
            if "j" in coeff_text.lower():
                raise HamiltonianFormatError("complex coefficients are not allowed", lineno)
            raise HamiltonianFormatError(f"bad coefficient {coeff_text!r}", lineno)
        if not math.isfinite(coeff):
            raise HamiltonianFormatError(f"non-finite coefficient {coeff_text!r}", lineno)
        factors: dict[int, str] = {}
        for tok in body.split():
            fm = _FACTOR_RE.match(tok)
            if not fm:
                raise HamiltonianFormatError(f"bad Pauli factor {tok!r}", lineno)
            idx = int(fm.group(2))
            if idx in factors:
                raise HamiltonianFormatError(f"duplicate qubit index {idx}", lineno)
            factors[idx] = fm.group(1)
            max_index = max(max_index, idx)
        terms.append(PauliTerm(coeff, factors))
    n = max_index + 1
    if header_n is not None:
        if header_n < n:
            raise HamiltonianFormatError(
                f"header declares {header_n} qubits but index {max_index} is used"
            )
        n = header_n
    return canonicalize(Hamiltonian(tuple(terms), n))


def serialize_hamiltonian(h: Hamiltonian) -> str:
    """Inverse of :func:`parse_hamiltonian` (always writes the qubits header)."""
    lines = [f"qubits: {h.qubit_count}"]
    lines.extend(str(t) for t in h.terms)
    return "\n".join(lines) + "\n"


_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _check_dim(n: int, cutoff: int):
    if n > cutoff:
        raise DimensionError(f"{n} qubits exceeds the dense cutoff of {cutoff}")


def _pauli_string_matrix(factors, n: int) -> np.ndarray:
    # Build with bit masks: P|b> = phase(b) |b ^ flip>.
    dim = 1 << n
    flip = 0
    zmask = 0
    ny = 0
    for q, p in factors:
        if p in ("X", "Y"):
            flip |= 1 << q
        if p in ("Z", "Y"):
            zmask |= 1 << q
        if p == "Y":
            ny += 1
    cols = np.arange(dim)
    rows = cols ^ flip
    # Y = i X Z, so each Y contributes i and a Z-type sign on the input bit.
    parity = np.bitwise_count(cols & zmask) & 1
    phase = (1j) ** ny * np.where(parity, -1.0, 1.0)
    mat = np.zeros((dim, dim), dtype=complex)
    mat[rows, cols] = phase
    return mat


def term_matrix(t: PauliTerm, qubit_count: int, cutoff: int = DENSE_CUTOFF) -> np.ndarray:
    """Dense matrix of a single term on ``qubit_count`` qubits."""
    _check_dim(qubit_count, cutoff)
    return t.coefficient * _pauli_string_matrix(t.factors, qubit_count)


def to_dense_matrix(h: Hamiltonian, cutoff: int = DENSE_CUTOFF) -> np.ndarray:
    """Dense ``2**n x 2**n`` Hermitian matrix of ``h``."""
    _check_dim(h.qubit_count, cutoff)
    dim = 1 << h.qubit_count
    mat = np.zeros((dim, dim), dtype=complex)
    for t in h.terms:
        mat += t.coefficient * _pauli_string_matrix(t.factors, h.qubit_count)
    return mat
