"""Truncated Fock-space operators for a single oscillator of unit mass.

Truncation to ``dim`` levels corrupts anything that needs level ``dim``:
the last diagonal entry of ``[a, a_dag]`` and the last two rows/columns of
``[q, p]`` are wrong by construction.  Callers compare only the leading
block where that matters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TruncationTooSmall


@dataclass(frozen=True)
class FockBasis:
    dim: int
    hbar: float = 1.0
    omega0: float = 1.0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ValueError(f"dim must be an integer >= 2, got {self.dim}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")


@dataclass(frozen=True)
class DensityMatrix:
    basis: FockBasis
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        if m.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(f"expected {self.basis.dim}x{self.basis.dim} matrix, got {m.shape}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    def check(self, herm_tol=1e-12, trace_tol=1e-12, eig_tol=-1e-10):
        """Raise ValueError unless the matrix is a valid state within tolerances."""
        m = self.entries
        if np.max(np.abs(m - m.conj().T)) > herm_tol:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > trace_tol:
            raise ValueError(f"trace {np.trace(m).real} differs from 1")
        lo = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
        if lo < eig_tol:
            raise ValueError(f"minimum eigenvalue {lo} below {eig_tol}")
        return self

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def eigenvalues(self) -> np.ndarray:
        m = self.entries
        return np.linalg.eigvalsh(0.5 * (m + m.conj().T))

    def expect(self, op: np.ndarray) -> complex:
        return complex(np.trace(self.entries @ op))


def ladder_operators(basis: FockBasis):
    """Return ``(a, a_dag)`` with ``a[n-1, n] = sqrt(n)``."""
    a = np.diag(np.sqrt(np.arange(1, basis.dim, dtype=float)), k=1).astype(complex)
    return a, a.conj().T.copy()


def number_operator(basis: FockBasis) -> np.ndarray:
    return np.diag(np.arange(basis.dim, dtype=float)).astype(complex)


def position_momentum(basis: FockBasis):
    a, ad = ladder_operators(basis)
    q = np.sqrt(basis.hbar / (2 * basis.omega0)) * (a + ad)
    p = -1j * np.sqrt(basis.hbar * basis.omega0 / 2) * (a - ad)
    return q, p


def system_hamiltonian(basis: FockBasis) -> np.ndarray:
    return basis.hbar * basis.omega0 * number_operator(basis)


def thermal_state(basis: FockBasis, beta: float, tail_tol: float = 1e-12) -> DensityMatrix:
    """Gibbs state of ``hbar*omega0*a_dag a`` renormalized on the truncated space.

    ``tail_tol`` bounds the discarded Boltzmann weight ``exp(-beta*hbar*omega0*dim)``.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    x = beta * basis.hbar * basis.omega0
    tail = np.exp(-x * basis.dim)
    if tail > tail_tol:
        raise TruncationTooSmall(
            f"Boltzmann tail exp(-{x:.4g}*{basis.dim}) = {tail:.3g} exceeds {tail_tol:.1g}"
        )
    w = np.exp(-x * np.arange(basis.dim))
    return DensityMatrix(basis, np.diag(w / w.sum()).astype(complex))


def fock_state(basis: FockBasis, n: int) -> DensityMatrix:
    m = np.zeros((basis.dim, basis.dim), dtype=complex)
    m[n, n] = 1.0
    return DensityMatrix(basis, m)


def pure_state(basis: FockBasis, amplitudes) -> DensityMatrix:
    v = np.zeros(basis.dim, dtype=complex)
    amps = np.asarray(amplitudes, dtype=complex)
    v[: amps.size] = amps
    v /= np.linalg.norm(v)
    return DensityMatrix(basis, np.outer(v, v.conj()))


def coherent_state(basis: FockBasis, alpha: complex) -> DensityMatrix:
    n = np.arange(basis.dim)
    logfact = np.cumsum(np.log(np.maximum(n, 1)))
    amps = np.exp(-abs(alpha) ** 2 / 2 - 0.5 * logfact) * np.power(complex(alpha), n)
    return pure_state(basis, amps)


def dims_for(beta: float, hbar: float, omega0: float, factor: float = 12.0, minimum: int = 8) -> int:
    """Fock dimension ``ceil(factor/(beta*hbar*omega0))`` used by hbar sweeps."""
    return max(minimum, int(np.ceil(factor / (beta * hbar * omega0))))
