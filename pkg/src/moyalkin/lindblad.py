"""Quantum generators on a truncated Fock space.

A :class:`Superoperator` is stored as a sum of sandwich terms
``c * A @ X @ B``.  Application is matrix-free; dense and sparse matrices
act on the row-major vectorization, where ``vec(A X B) = kron(A, B.T) vec(X)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from .bath import BathSpec, _interior, _pv, frequency_shifts, gamma_squared, occupancy
from .errors import (
    DegenerateNullSpace,
    DomainError,
    NoPSDNullVector,
    NonDiagonalHamiltonian,
    SingularReference,
    StepTooLarge,
)
from .fock import DensityMatrix, FockBasis, ladder_operators, position_momentum, system_hamiltonian
from .quadrature import quad

# RK4 stability reaches about 2.78 on the negative real axis and 2.83 on the imaginary one
RK4_LIMIT = 2.7


@dataclass(frozen=True)
class LindbladCoefficients:
    d1: float
    d2: float
    d: float
    lam: float
    kappa: float
    omega0: float
    hbar: float
    hamiltonian_scale: float = 1.0


class Superoperator:
    """Linear map on dim x dim matrices, ``X -> sum_k c_k A_k X B_k``.

    Alternatively wraps a dense ``dim^2 x dim^2`` matrix (``dense=``), which is
    what :func:`secular_average` returns.
    """

    def __init__(self, basis: FockBasis, terms=(), dense: Optional[np.ndarray] = None):
        self.basis = basis
        n = basis.dim
        eye = np.eye(n, dtype=complex)
        left = np.zeros((n, n), dtype=complex)
        right = np.zeros((n, n), dtype=complex)
        sandwich = []
        for c, a, b in terms:
            a = eye if a is None else np.asarray(a, dtype=complex)
            b = eye if b is None else np.asarray(b, dtype=complex)
            if b is eye:
                left += c * a
            elif a is eye:
                right += c * b
            else:
                sandwich.append((c * a, b))
        # moving a multiple of the identity between sides leaves the map unchanged
        # but tightens the norm bound used for step control
        shift = np.trace(left) / n
        self._left = left - shift * eye
        self._right = right + shift * eye
        self._sandwich = sandwich
        self._dense = None if dense is None else np.asarray(dense, dtype=complex)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            n = self.dim
            return (self._dense @ np.asarray(x, dtype=complex).reshape(n * n)).reshape(n, n)
        out = self._left @ x + x @ self._right
        for a, b in self._sandwich:
            out += a @ x @ b
        return out

    __call__ = apply

    def _pairs(self):
        n = self.dim
        eye = np.eye(n)
        yield self._left, eye
        yield eye, self._right
        yield from self._sandwich

    def to_dense(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense.copy()
        return sum(np.kron(a, b.T) for a, b in self._pairs())

    def to_sparse(self) -> sparse.csr_matrix:
        if self._dense is not None:
            return sparse.csr_matrix(self._dense)
        mats = [sparse.kron(sparse.csr_matrix(a), sparse.csr_matrix(b.T)) for a, b in self._pairs()]
        return sum(mats[1:], mats[0]).tocsr()

    def norm_bound(self) -> float:
        """Upper bound on the induced 2-norm (hence on the spectral radius)."""
        if self._dense is not None:
            return float(np.linalg.norm(self._dense, 2))
        tot = np.linalg.norm(self._left, 2) + np.linalg.norm(self._right, 2)
        return float(tot + sum(np.linalg.norm(a, 2) * np.linalg.norm(b, 2) for a, b in self._sandwich))

    def __add__(self, other: "Superoperator") -> "Superoperator":
        if self._dense is None and other._dense is None:
            terms = [(1.0, a, b) for a, b in self._pairs()] + [(1.0, a, b) for a, b in other._pairs()]
            return Superoperator(self.basis, terms)
        return Superoperator(self.basis, dense=self.to_dense() + other.to_dense())


def commutator_terms(h, coef=1.0):
    """Terms of ``coef * [h, X]``."""
    return [(coef, h, None), (-coef, None, h)]


def _dissipator_terms(op, rate):
    """``rate * ([op X, op^+] + [op, X op^+]) = rate * (2 op X op^+ - {op^+ op, X})``."""
    opd = op.conj().T
    k = opd @ op
    return [(2 * rate, op, opd), (-rate, k, None), (-rate, None, k)]


def hamiltonian_generator(basis: FockBasis, h=None) -> Superoperator:
    """``X -> -(i/hbar)[H, X]`` with ``H`` the oscillator Hamiltonian by default."""
    h = system_hamiltonian(basis) if h is None else h
    return Superoperator(basis, commutator_terms(h, -1j / basis.hbar))


@dataclass(frozen=True)
class ModelRates:
    """Bath quantities at ``omega0`` entering the oscillator generator."""

    gamma_sq: float
    n: float
    delta: float
    lam: float

    @property
    def rate(self) -> float:
        """``lambda^2 gamma^2 / 2``, the amplitude damping rate."""
        return 0.5 * self.lam**2 * self.gamma_sq


def model_rates(spec: BathSpec, lam: float, omega0: float, hbar: float) -> ModelRates:
    """Bath numbers at ``omega0``; ``hbar = 0`` gives the classical occupancy ``1/(beta omega0)``."""
    if spec.kind != "quantum":
        raise DomainError("the oscillator generator needs a quantum bath")
    if hbar < 0:
        raise DomainError("hbar must be nonnegative")
    _interior(spec, omega0)
    delta = frequency_shifts(spec, omega0).delta if lam != 0 else 0.0
    return ModelRates(
        gamma_sq=gamma_squared(spec, omega0),
        n=float(occupancy(spec.beta, hbar, omega0)),
        delta=delta,
        lam=lam,
    )


def oscillator_generator(basis: FockBasis, spec: BathSpec, lam: float) -> Superoperator:
    """Master-equation generator of an oscillator weakly coupled to a thermal bath.

    Renormalized Hamiltonian ``(1 - lam^2 Delta/omega0) H`` plus the thermal
    dissipator with rate ``lam^2 gamma^2 / 2`` and occupancy ``N = n/hbar``.
    """
    r = model_rates(spec, lam, basis.omega0, basis.hbar)
    return _oscillator_from_rates(basis, r)


def _oscillator_from_rates(basis: FockBasis, r: ModelRates) -> Superoperator:
    a, ad = ladder_operators(basis)
    scale = 1.0 - r.lam**2 * r.delta / basis.omega0
    terms = commutator_terms(system_hamiltonian(basis), -1j * scale / basis.hbar)
    big_n = r.n / basis.hbar
    if r.rate:
        terms += _dissipator_terms(ad, r.rate * big_n)
        terms += _dissipator_terms(a, r.rate * (big_n + 1))
    return Superoperator(basis, terms)


def coefficients_from_model(spec: BathSpec, lam: float, omega0: float, beta: float, hbar: float) -> LindbladCoefficients:
    """Phase-space coefficients for which :func:`general_generator` equals the oscillator generator."""
    r = model_rates(spec.with_beta(beta), lam, omega0, hbar)
    return _coefficients_from_rates(r, omega0, hbar)


def _coefficients_from_rates(r: ModelRates, omega0: float, hbar: float) -> LindbladCoefficients:
    k = r.rate
    return LindbladCoefficients(
        d1=k * omega0 * (r.n + hbar / 2),
        d2=k * (r.n + hbar / 2) / omega0,
        d=0.0,
        lam=k,
        kappa=0.0,
        omega0=omega0,
        hbar=hbar,
        hamiltonian_scale=1.0 - r.lam**2 * r.delta / omega0,
    )


def general_generator(basis: FockBasis, c: LindbladCoefficients) -> Superoperator:
    """General quadratic generator in ``(q, p)`` form.

    ``-(i/hbar)[s H + (kappa/2) {q,p}, X] - (D1/hbar^2)[q,[q,X]] - (D2/hbar^2)[p,[p,X]]
    + (D/hbar^2)([q,[p,X]] + [p,[q,X]]) - (i Lam/(2 hbar))([q,{p,X}] - [p,{q,X}])``.

    The halved friction terms make the Weyl image carry friction ``Lam +- kappa``
    and make the Kossakowski matrix PSD exactly when ``D1 D2 - D^2 >= hbar^2 Lam^2/4``.
    """
    hb = basis.hbar
    q, p = position_momentum(basis)
    h = c.hamiltonian_scale * system_hamiltonian(basis) + 0.5 * c.kappa * (q @ p + p @ q)
    terms = commutator_terms(h, -1j / hb)

    def double(x, y, coef):
        # coef * [x, [y, X]] = coef * (xyX - xXy - yXx + Xyx)
        return [(coef, x @ y, None), (-coef, x, y), (-coef, y, x), (coef, None, y @ x)]

    terms += double(q, q, -c.d1 / hb**2)
    terms += double(p, p, -c.d2 / hb**2)
    terms += double(q, p, c.d / hb**2) + double(p, q, c.d / hb**2)

    def comm_anti(x, y, coef):
        # coef * [x, {y, X}] = coef * (xyX + xXy - yXx - Xyx)
        return [(coef, x @ y, None), (coef, x, y), (-coef, y, x), (-coef, None, y @ x)]

    f = -1j * c.lam / (2 * hb)
    terms += comm_anti(q, p, f) + comm_anti(p, q, -f)
    return Superoperator(basis, terms)


def lindblad_form_check(c: LindbladCoefficients):
    """Return ``(ok, eigenvalues)`` of the Kossakowski matrix in the ``(q, p)`` basis."""
    hb = c.hbar
    off = 0.5j * hb * c.lam - c.d
    m = np.array([[c.d1, off], [np.conj(off), c.d2]]) / hb**2
    ev = np.linalg.eigvalsh(m)
    scale = max(abs(ev).max(), 1e-300)
    ok = bool(ev[0] >= -1e-12 * scale)
    return ok, (float(ev[0]), float(ev[1]))


# ----------------------------------------------------------- Redfield

def redfield_rates(spec: BathSpec, lam: float, basis: FockBasis):
    """Complex half-range rates ``g(+omega0)`` and ``g(-omega0)``.

    Real parts are the golden-rule rates of the oscillator generator, imaginary
    parts the principal-value integrals over the bath spectrum.
    """
    r = model_rates(spec, lam, basis.omega0, basis.hbar)
    w0, beta, hb = basis.omega0, spec.beta, basis.hbar
    big_n = lambda w: 1.0 / math.expm1(beta * hb * w)
    emit = lambda w: spec.weight(w) * (big_n(w) + 1.0) if w > 0 else 0.0
    absorb = lambda w: spec.weight(w) * big_n(w) if w > 0 else 0.0
    lo, hi = spec.domain
    pts = list(spec.points) or None
    pre = 0.5 * lam**2
    im_plus = -_pv(spec, emit, w0, 1e-9) + quad(lambda w: absorb(w) / (w + w0), lo, hi, points=pts)
    im_minus = _pv(spec, absorb, w0, 1e-9) - quad(lambda w: emit(w) / (w + w0), lo, hi, points=pts)
    big = r.n / hb
    g_plus = r.rate * (big + 1) + 1j * pre * im_plus
    g_minus = r.rate * big + 1j * pre * im_minus
    return g_plus, g_minus


def redfield_generator(basis: FockBasis, spec: BathSpec, lam: float) -> Superoperator:
    """Non-secular second-order generator.

    The oscillator generator plus the terms mixing the Bohr frequencies
    ``+omega0`` (operator ``a``) and ``-omega0`` (operator ``a^+``) that the
    secular approximation drops.
    """
    base = oscillator_generator(basis, spec, lam)
    if lam == 0:
        return base
    g_plus, g_minus = redfield_rates(spec, lam, basis)
    a, ad = ladder_operators(basis)
    terms = []
    # sum over w != w' of g(w)(A(w) X A(w')^+ - A(w')^+ A(w) X) + h.c.
    for g, op, opd_other in ((g_plus, a, a), (g_minus, ad, ad)):
        # A(w) = op, A(w')^+ = opd_other
        terms += [(g, op, opd_other), (-g, opd_other @ op, None)]
        # hermitian conjugate: (A X A'^+)^+ -> A' X A^+ ; (A'^+ A X)^+ -> X A^+ A'
        terms += [(np.conj(g), opd_other.conj().T, op.conj().T), (-np.conj(g), None, op.conj().T @ opd_other.conj().T)]
    return base + Superoperator(basis, terms)


def secular_average(L: Superoperator, h: Optional[np.ndarray] = None) -> Superoperator:
    """Keep only matrix elements connecting units ``|m><n| -> |m'><n'|`` with equal Bohr frequency."""
    basis = L.basis
    h = system_hamiltonian(basis) if h is None else np.asarray(h)
    if np.max(np.abs(h - np.diag(np.diag(h)))) > 0:
        raise NonDiagonalHamiltonian("secular averaging needs H diagonal in the Fock basis")
    e = np.real(np.diag(h))
    bohr = (e[:, None] - e[None, :]).ravel()
    m = L.to_dense()
    scale = max(np.max(np.abs(bohr)), 1.0)
    keep = np.abs(bohr[:, None] - bohr[None, :]) <= 1e-9 * scale
    return Superoperator(basis, dense=np.where(keep, m, 0.0))


# ----------------------------------------------------------- evolution

@dataclass
class Trajectory:
    times: np.ndarray
    states: list = field(repr=False)

    def __len__(self):
        return len(self.states)


def evolve(L: Superoperator, rho0: DensityMatrix, t_max: float, dt: float, every: int = 1,
           observer: Optional[Callable] = None) -> Trajectory:
    """Integrate ``d rho/dt = L(rho)`` with classical RK4.

    Hermiticity is restored after each step; the trace is never renormalized.
    ``every`` thins the stored trajectory; ``observer(t, rho)`` sees every step.
    """
    bound = L.norm_bound()
    if dt * bound > RK4_LIMIT:
        raise StepTooLarge(f"dt={dt} exceeds RK4 limit {RK4_LIMIT / bound:.4g} for norm bound {bound:.4g}")
    n_steps = int(round(t_max / dt))
    if not math.isclose(n_steps * dt, t_max, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("t_max must be a multiple of dt")
    x = np.array(rho0.entries, dtype=complex)
    basis = rho0.basis
    times, states = [0.0], [rho0]
    if observer:
        observer(0.0, x)
    for k in range(1, n_steps + 1):
        k1 = L.apply(x)
        k2 = L.apply(x + 0.5 * dt * k1)
        k3 = L.apply(x + 0.5 * dt * k2)
        k4 = L.apply(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        x = 0.5 * (x + x.conj().T)
        if observer:
            observer(k * dt, x)
        if k % every == 0 or k == n_steps:
            times.append(k * dt)
            states.append(DensityMatrix(basis, x))
    return Trajectory(np.array(times), states)


def stationary_state(L: Superoperator, tol: float = 1e-9) -> DensityMatrix:
    """Unique normalized PSD null vector of the generator."""
    n = L.dim
    m = L.to_sparse().tocsc()
    scale = max(abs(m).max(), 1e-300)
    k = min(3, n * n - 2)
    # shift-invert just off zero: the null vectors come first
    sigma = -1e-6 * scale
    vals, vecs = sparse_linalg.eigs(m, k=k, sigma=sigma, which="LM", tol=1e-13, maxiter=5000)
    order = np.argsort(np.abs(vals))
    vals, vecs = vals[order], vecs[:, order]
    null = np.abs(vals) <= tol * scale
    if null.sum() != 1:
        raise DegenerateNullSpace(f"{int(null.sum())} null eigenvalues (smallest |values| {np.abs(vals)})")
    x = vecs[:, 0].reshape(n, n)
    tr = np.trace(x)
    if abs(tr) < 1e-12:
        raise NoPSDNullVector("null vector is traceless")
    x = x / tr
    x = 0.5 * (x + x.conj().T)
    if np.linalg.eigvalsh(x)[0] < -1e-8:
        raise NoPSDNullVector(f"null vector has eigenvalue {np.linalg.eigvalsh(x)[0]:.3g}")
    return DensityMatrix(L.basis, x)


def relative_entropy(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """``Tr rho (ln rho - ln sigma)`` with ``0 ln 0 = 0``."""
    s_val, s_vec = np.linalg.eigh(0.5 * (sigma.entries + sigma.entries.conj().T))
    if s_val[0] <= 0:
        raise SingularReference(f"reference state has eigenvalue {s_val[0]:.3g}")
    r_val = np.linalg.eigvalsh(0.5 * (rho.entries + rho.entries.conj().T))
    r_val = np.clip(r_val, 0.0, None)
    pos = r_val > 0
    ent = float(np.sum(r_val[pos] * np.log(r_val[pos])))
    # Tr rho ln sigma in the eigenbasis of sigma
    diag = np.real(np.einsum("ij,jk,ki->i", s_vec.conj().T, rho.entries, s_vec))
    return ent - float(np.dot(diag, np.log(s_val)))
