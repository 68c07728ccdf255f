"""Small argument checkers shared by the estimators and functional API."""

from __future__ import annotations

import numbers

import numpy as np

from .hamiltonian import Hamiltonian


def check_rho(rho) -> float:
    if not isinstance(rho, numbers.Real) or not 0.0 <= float(rho) <= 1.0:
        raise ValueError(f"rho must be a real number in [0, 1], got {rho!r}")
    return float(rho)


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_hamiltonian(h) -> Hamiltonian:
    if not isinstance(h, Hamiltonian):
        raise TypeError(f"expected a Hamiltonian, got {type(h).__name__}")
    return h


def check_real_vector(values, name: str, length: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if length is not None and arr.size != length:
        raise ValueError(f"{name} has length {arr.size}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr
