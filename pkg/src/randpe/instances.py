"""Shipped desk-scale model Hamiltonians."""

from __future__ import annotations

from .hamiltonian import Hamiltonian, PauliTerm

__all__ = ["tfim_chain", "decoupled_ancilla_instance", "SHIPPED"]


def tfim_chain(n: int, coupling: float = 1.0, field: float = 1.0, periodic: bool = False) -> Hamiltonian:
    """``-J sum Z_i Z_{i+1} - g sum X_i`` on an open (or periodic) chain."""
    terms = [PauliTerm(-coupling, {i: "Z", i + 1: "Z"}) for i in range(n - 1)]
    if periodic and n > 2:
        terms.append(PauliTerm(-coupling, {0: "Z", n - 1: "Z"}))
    terms += [PauliTerm(-field, {i: "X"}) for i in range(n)]
    return Hamiltonian.from_terms(terms, n)


def decoupled_ancilla_instance(weak: float = 0.02) -> Hamiltonian:
    """4-qubit TFIM on qubits 0-3 plus qubit 4 attached only through weak terms.

    Sampled Hamiltonians built from few draws rarely pick the weak terms, so
    their qubit support usually excludes qubit 4.
    """
    base = tfim_chain(4)
    terms = list(base.terms) + [
        PauliTerm(-weak, {3: "Z", 4: "Z"}),
        PauliTerm(-weak, {4: "X"}),
    ]
    return Hamiltonian.from_terms(terms, 5)


SHIPPED = {
    "tfim4": lambda: tfim_chain(4),
    "tfim6": lambda: tfim_chain(6),
    "ancilla5": decoupled_ancilla_instance,
}
