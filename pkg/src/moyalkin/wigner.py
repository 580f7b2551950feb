"""Generalized Wigner transforms for the Gaussian ordering family.

The kernel exponent is ``chi(eta, xi) = -a (hbar/4) (omega0 xi^2 + eta^2/omega0)``.
``a = 0`` is Weyl ordering, ``a = -1`` gives the Husimi (antinormal) function
and ``a = +1`` the Glauber P function (normal ordering), which exists as a
smooth field only for states noisier than the vacuum.

Conventions: ``chi_rho(eta, xi) = Tr(rho exp(i(eta q + xi p)))`` and
``W(q, p) = (2 pi)^-2 int chi_rho / Omega exp(-i(eta q + xi p)) d eta d xi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import GridUnderResolved, KernelDivergence, NonQuadraticKernel
from .fock import DensityMatrix, FockBasis
from .grid import PhaseGrid, PhaseSpaceField

EDGE_TOL = 1e-10
# relative size below which a transformed field is indistinguishable from round-off
NOISE_FLOOR = 1e-15


@dataclass(frozen=True)
class OrderingKernel:
    a: float
    omega0: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if not (self.omega0 > 0 and self.hbar > 0):
            raise ValueError("omega0 and hbar must be positive")

    def chi(self, eta, xi):
        eta, xi = np.asarray(eta, dtype=float), np.asarray(xi, dtype=float)
        return -self.a * (self.hbar / 4) * (self.omega0 * xi**2 + eta**2 / self.omega0)

    def omega(self, eta, xi):
        return np.exp(self.chi(eta, xi))

    def check(self):
        """Involutivity ``chi(-s) = conj(chi(s))`` and ``Omega(0) = 1`` on sample points."""
        s = np.linspace(-3, 3, 7)
        e, x = np.meshgrid(s, s[::-1])
        if not np.allclose(self.chi(-e, -x), np.conj(self.chi(e, x))) or self.omega(0.0, 0.0) != 1.0:
            raise NonQuadraticKernel("kernel is not involutive")
        return self


def _alpha(basis: FockBasis, eta, xi):
    """Displacement amplitude with ``exp(i(eta q + xi p)) = D(alpha)``."""
    x0 = math.sqrt(basis.hbar / (2 * basis.omega0))
    p0 = math.sqrt(basis.hbar * basis.omega0 / 2)
    return -p0 * xi + 1j * x0 * eta


def _displacement_rows(alpha, dim, k):
    """Yield ``(n, c_n)`` with ``<n+k|D(alpha)|n> = u^k c_n`` where ``u = alpha/|alpha|``.

    Uses the normalized Laguerre recurrence; the prefactor
    ``exp(-x/2) |alpha|^k / sqrt(k!)`` is built in log space so nothing overflows.
    """
    x = np.abs(alpha) ** 2
    with np.errstate(divide="ignore"):
        logr = 0.5 * np.log(x)
    log_base = -x / 2 + (k * logr if k else 0.0) - 0.5 * gammaln(k + 1)
    prev = np.zeros_like(x)
    cur = np.exp(log_base)
    if k:
        cur = np.where(x == 0, 0.0, cur)
    for n in range(dim - k):
        yield n, cur
        nxt = ((2 * n + 1 + k - x) * cur - math.sqrt(n * (n + k)) * prev) / math.sqrt((n + 1) * (n + 1 + k))
        prev, cur = cur, nxt


def displacement_matrix(basis: FockBasis, alpha: complex) -> np.ndarray:
    """Dense ``D(alpha)`` on the truncated space (truncated matrix elements, not a truncated exponential)."""
    dim = basis.dim
    alpha = np.asarray(alpha, dtype=complex)
    u = alpha / abs(alpha) if alpha != 0 else 1.0
    out = np.zeros((dim, dim), dtype=complex)
    for k in range(dim):
        for n, c in _displacement_rows(alpha, dim, k):
            out[n + k, n] = u**k * c
            if k:
                out[n, n + k] = (-np.conj(u)) ** k * c
    return out


def _sigma_mesh(sigma):
    if isinstance(sigma, PhaseGrid):
        eta, xi = sigma.dual()
    else:
        eta, xi = sigma
    return np.meshgrid(np.asarray(eta, dtype=float), np.asarray(xi, dtype=float), indexing="ij")


def _nonzero_bands(m, tol=0.0):
    dim = m.shape[0]
    scale = np.abs(m).max()
    return [k for k in range(dim) if np.abs(np.diagonal(m, k)).max() > tol * scale
            or np.abs(np.diagonal(m, -k)).max() > tol * scale]


def characteristic_function(rho: DensityMatrix, sigma) -> np.ndarray:
    """``Tr(rho exp(i(eta q + xi p)))`` on a grid.

    ``sigma`` is a :class:`PhaseGrid` (its dual frequency grid is used, and the
    decay of the result toward the edges is checked) or a pair of 1-D arrays.
    """
    e, x = _sigma_mesh(sigma)
    basis = rho.basis
    alpha = _alpha(basis, e, x)
    r = np.abs(alpha)
    u = np.where(r > 0, alpha / np.where(r > 0, r, 1), 1.0)
    m = rho.entries
    out = np.zeros(alpha.shape, dtype=complex)
    for k in _nonzero_bands(m):
        s1 = np.zeros(alpha.shape, dtype=complex)
        s2 = np.zeros(alpha.shape, dtype=complex)
        up, down = np.diagonal(m, k), np.diagonal(m, -k)
        for n, c in _displacement_rows(alpha, basis.dim, k):
            # Tr(rho D) picks rho[n, n+k] D[n+k, n] and rho[n+k, n] D[n, n+k]
            if up[n] != 0:
                s1 += up[n] * c
            if k and down[n] != 0:
                s2 += down[n] * c
        out += u**k * s1
        if k:
            out += (-np.conj(u)) ** k * s2
    if isinstance(sigma, PhaseGrid):
        _check_decay(out, GridUnderResolved, "characteristic function")
    return out


def _edge(a):
    v = np.abs(a)
    return max(v[0].max(), v[-1].max(), v[:, 0].max(), v[:, -1].max()) / max(v.max(), 1e-300)


def _check_decay(a, err, what):
    ratio = _edge(a)
    if not ratio <= EDGE_TOL:
        raise err(f"{what} does not decay on the frequency grid (edge ratio {ratio:.2e})")


def _transform_matrices(grid: PhaseGrid):
    eta, xi = grid.dual()
    eq = np.exp(-1j * np.outer(grid.q, eta))
    ep = np.exp(-1j * np.outer(grid.p, xi))
    return eq, ep


def field_from_characteristic(f: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Discrete ``(2 pi)^-2 int F exp(-i(eta q + xi p))``; complex result."""
    eta, xi = grid.dual()
    deta, dxi = eta[1] - eta[0], xi[1] - xi[0]
    eq, ep = _transform_matrices(grid)
    return (deta * dxi / (2 * np.pi) ** 2) * (eq @ f @ ep.T)


def characteristic_from_field(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Exact inverse of :func:`field_from_characteristic`."""
    eq, ep = _transform_matrices(grid)
    return grid.cell * (eq.conj().T @ values @ ep.conj())


def generalized_wigner(rho: DensityMatrix, kernel: OrderingKernel, grid: PhaseGrid,
                       imag_tol: float = 1e-10) -> PhaseSpaceField:
    """Phase-space field of ``rho`` for the ordering ``kernel`` on ``grid``."""
    _check_basis(rho.basis, kernel)
    chi_rho = characteristic_function(rho, grid)
    e, x = _sigma_mesh(grid)
    f = chi_rho / kernel.omega(e, x)
    if not np.all(np.isfinite(f)):
        raise KernelDivergence("kernel division overflowed")
    _check_decay(f, KernelDivergence, "kernel-divided characteristic function")
    w = field_from_characteristic(f, grid)
    scale = max(np.abs(w.real).max(), 1e-300)
    if np.abs(w.imag).max() > imag_tol * scale:
        raise GridUnderResolved(f"imaginary part {np.abs(w.imag).max() / scale:.2e} of the field is not negligible")
    out = PhaseSpaceField(grid, w.real)
    out.check_confined(EDGE_TOL)
    return out


def inverse_transform(field: PhaseSpaceField, kernel: OrderingKernel, basis: FockBasis) -> DensityMatrix:
    """Density matrix whose generalized Wigner field is ``field``.

    Uses ``rho = (hbar/2 pi) int chi_rho(s) exp(-i(eta q + xi p)) ds``.
    """
    _check_basis(basis, kernel)
    grid = field.grid
    e, x = _sigma_mesh(grid)
    f = characteristic_from_field(field.values, grid)
    if kernel.a < 0:
        # multiplying by Omega amplifies round-off; cells at the noise floor carry no information
        f = np.where(np.abs(f) > NOISE_FLOOR * np.abs(f).max(), f, 0.0)
    chi_rho = f * kernel.omega(e, x)
    _check_decay(chi_rho, GridUnderResolved, "reconstructed characteristic function")
    eta, xi = grid.dual()
    weight = chi_rho * (eta[1] - eta[0]) * (xi[1] - xi[0]) * basis.hbar / (2 * np.pi)
    # exp(-i(eta q + xi p)) = D(-alpha); <n|D(-alpha)|n+k> = conj(u)^k c_n, <n+k|D(-alpha)|n> = (-u)^k c_n
    alpha = _alpha(basis, e, x)
    r = np.abs(alpha)
    u = np.where(r > 0, alpha / np.where(r > 0, r, 1), 1.0)
    dim = basis.dim
    m = np.zeros((dim, dim), dtype=complex)
    for k in range(dim):
        w_up = weight * np.conj(u) ** k
        w_down = weight * (-u) ** k
        for n, c in _displacement_rows(alpha, dim, k):
            m[n, n + k] = np.sum(w_up * c)
            if k:
                m[n + k, n] = np.sum(w_down * c)
    m = 0.5 * (m + m.conj().T)
    return DensityMatrix(basis, m)


def _check_basis(basis: FockBasis, kernel: OrderingKernel):
    if not (math.isclose(basis.hbar, kernel.hbar) and math.isclose(basis.omega0, kernel.omega0)):
        raise ValueError("kernel and basis disagree on hbar/omega0")


@dataclass(frozen=True)
class PsiCorrection:
    """``(Psi/2 pi) * f = -(a hbar/4)(c_qq f_qq + c_pp f_pp)``."""

    a: float
    hbar: float
    c_qq: float
    c_pp: float

    @property
    def prefactor(self) -> float:
        return -self.a * self.hbar / 4

    def apply(self, values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
        """Second-order central-difference evaluation on a grid (zero outside)."""
        v = np.pad(values, 1)
        fqq = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / grid.dq**2
        fpp = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / grid.dp**2
        return self.prefactor * (self.c_qq * fqq + self.c_pp * fpp)


def psi_correction(kernel: OrderingKernel) -> PsiCorrection:
    """Second-order differential form of the ordering correction for a Gaussian kernel."""
    if not isinstance(kernel, OrderingKernel):
        raise NonQuadraticKernel("only the Gaussian ordering family has a closed-form correction")
    if kernel.a == 0:
        return PsiCorrection(0.0, kernel.hbar, 0.0, 0.0)
    return PsiCorrection(kernel.a, kernel.hbar, 1.0 / kernel.omega0, kernel.omega0)


def auto_grid(rho: DensityMatrix, kernel: OrderingKernel, n: int = 128, widths: float = 9.0) -> PhaseGrid:
    """Symmetric grid sized from the state's second moments and the kernel smoothing."""
    from .fock import position_momentum

    q, p = position_momentum(rho.basis)
    vq = rho.expect(q @ q).real + max(-kernel.a, 0) * kernel.hbar / (2 * kernel.omega0)
    vp = rho.expect(p @ p).real + max(-kernel.a, 0) * kernel.hbar * kernel.omega0 / 2
    return PhaseGrid.symmetric(widths * math.sqrt(vq), widths * math.sqrt(vp), n)
