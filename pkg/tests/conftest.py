import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}


def kron_term(factors: dict, n: int) -> np.ndarray:
    """Independent Pauli-string oracle: explicit Kronecker product, qubit 0 rightmost."""
    out = np.eye(1, dtype=complex)
    for q in reversed(range(n)):
        out = np.kron(out, PAULI[factors.get(q, "I")])
    return out


def kron_hamiltonian(h) -> np.ndarray:
    dim = 1 << h.qubit_count
    m = np.zeros((dim, dim), dtype=complex)
    for t in h.terms:
        m += t.coefficient * kron_term(dict(t.factors), h.qubit_count)
    return m


@pytest.fixture
def tfim4():
    from randpe.instances import tfim_chain

    return tfim_chain(4)
