"""Bath spectra, correlation functions and frequency shifts.

Two conventions are supported:

* ``kind="classical"``: a coupling ``u(w)`` on a domain symmetric about 0
  (``u`` real and even), entering through ``u(w)**2``.  A one-sided
  spectrum (``u = 0`` for ``w <= 0``) is flagged with ``one_sided=True``
  and carries the factor 1/4 on the dissipative coefficients.
* ``kind="quantum"``: a coupling ``eps(w)`` and spectral density
  ``sigma(w)`` on ``(0, w_max)``.

All integrals of the form ``PV int f(w)/(w - w0)`` go through
:func:`moyalkin.quadrature.principal_value`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError
from .quadrature import principal_value, quad, quad_trig


def _one(w):
    return 1.0


@dataclass(frozen=True)
class BathSpec:
    coupling: Callable[[float], float]
    beta: float
    domain: tuple = (-math.inf, math.inf)
    kind: str = "classical"
    spectral_density: Callable[[float], float] = _one
    one_sided: bool = False
    points: tuple = ()
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("classical", "quantum"):
            raise ValueError(f"unknown bath kind {self.kind!r}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        lo, hi = self.domain
        if not lo < hi:
            raise ValueError(f"empty domain {self.domain}")
        if self.kind == "classical" and lo != -hi:
            raise ValueError("classical domain must be symmetric about 0")
        if self.kind == "quantum" and lo < 0:
            raise ValueError("quantum domain must lie in w > 0")

    def validate(self, samples: int = 17):
        """Check evenness of a two-sided classical coupling on sample points."""
        if self.kind == "classical" and not self.one_sided:
            hi = self.domain[1] if math.isfinite(self.domain[1]) else 5.0
            for w in np.linspace(hi / samples, hi * (1 - 1 / samples), samples):
                a, b = self.coupling(w), self.coupling(-w)
                if not math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-14):
                    raise ValueError(f"classical coupling is not even at w={w}: {a} vs {b}")
        return self

    @property
    def rate_factor(self) -> float:
        """1/4 for a one-sided classical spectrum, else 1."""
        return 0.25 if self.one_sided else 1.0

    def weight(self, w):
        """``u(w)**2 * sigma(w)`` (classical) or ``|eps(w)|**2 * sigma(w)`` (quantum)."""
        lo, hi = self.domain
        if not lo <= w <= hi:
            return 0.0
        return abs(self.coupling(w)) ** 2 * self.spectral_density(w)

    def with_beta(self, beta: float) -> "BathSpec":
        return replace(self, beta=beta)


def _ratio(func, power):
    """``func(w)/w**power`` with the removable point w=0 set to 0 (u^2 = o(w^2))."""

    def f(w):
        if w == 0.0:
            return 0.0
        return func(w) / w**power

    return f


def _interior(spec: BathSpec, w: float):
    lo, hi = spec.domain
    if not lo < w < hi:
        raise DomainError(f"frequency {w} not interior to the bath domain {spec.domain}")


def time_correlations(spec: BathSpec, s: float, epsrel: float = 1e-9):
    """``h(s) = int u^2 cos(ws)/(beta w^2)`` and ``g(s) = int u^2 sin(ws)/w``."""
    lo, hi = spec.domain
    pts = list(spec.points) or None
    h = quad_trig(_ratio(spec.weight, 2), lo, hi, s, "cos", epsrel=epsrel, points=pts) / spec.beta
    g = quad_trig(_ratio(spec.weight, 1), lo, hi, s, "sin", epsrel=epsrel, points=pts)
    return h, g


def mode_sum_correlations(omegas, c2, beta: float, s):
    """Discrete analogue of ``h(s)``: ``sum_m c_m^2 cos(w_m s)/(beta w_m^2)``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    omegas = np.asarray(omegas, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    return (np.cos(np.outer(s, omegas)) @ (c2 / omegas**2)) / beta


class SpectralCorrelations(NamedTuple):
    h_tilde: float
    g_tilde: complex
    h_bar: complex
    g_bar: complex


def spectral_correlations(spec: BathSpec, omega: float, epsrel: float = 1e-8) -> SpectralCorrelations:
    """Full and half-range Fourier transforms of ``h`` and ``g`` at ``omega``."""
    if omega == 0:
        raise DomainError("omega must be nonzero")
    lo, hi = spec.domain
    if omega in (lo, hi) or -omega in (lo, hi):
        raise DomainError(f"omega {omega} sits on the domain boundary")
    w2 = spec.weight(omega) if lo < omega < hi else 0.0
    h_tilde = 2 * math.pi * w2 / (spec.beta * omega**2)
    g_tilde = 1j * spec.beta * omega * h_tilde

    # omega/(omega^2 - w^2) = (1/2)[1/(w + omega) - 1/(w - omega)]
    f_h = _ratio(spec.weight, 2)
    pv_h = 0.5 * (_pv(spec, f_h, -omega, epsrel) - _pv(spec, f_h, omega, epsrel)) / spec.beta
    # 1/(omega^2 - w^2) = (1/(2 omega))[1/(w + omega) - 1/(w - omega)]
    pv_g = (_pv(spec, spec.weight, -omega, epsrel) - _pv(spec, spec.weight, omega, epsrel)) / (2 * omega)
    return SpectralCorrelations(h_tilde, g_tilde, h_tilde / 2 + 1j * pv_h, g_tilde / 2 - pv_g)


def _pv(spec: BathSpec, func, c: float, epsrel: float) -> float:
    """PV of func(w)/(w-c) over the domain; plain quadrature when c is outside."""
    lo, hi = spec.domain
    pts = list(spec.points) or None
    if lo < c < hi:
        return principal_value(func, c, lo, hi, epsrel=epsrel, points=pts)
    return quad(lambda w: func(w) / (w - c), lo, hi, epsrel=epsrel, points=pts)


def stability_check(spec: BathSpec, lam: float, omega0: float):
    """Return ``(ok, margin)`` with ``margin = omega0^2 - lam^2 int u^2/w^2``."""
    if lam == 0:
        return True, omega0**2
    lo, hi = spec.domain
    integral = quad(_ratio(spec.weight, 2), lo, hi, epsrel=1e-10, points=list(spec.points) or None)
    margin = omega0**2 - lam**2 * integral
    return margin >= 0, margin


class FrequencyShifts(NamedTuple):
    delta: float
    chi: Optional[float]


def frequency_shifts(spec: BathSpec, omega0: float, epsrel: float = 1e-9) -> FrequencyShifts:
    """Energy shift ``Delta(omega0)`` and, for classical baths, ``chi(omega0)``."""
    if not omega0 > 0:
        raise DomainError("omega0 must be positive")
    _interior(spec, omega0)
    if spec.kind == "classical":
        delta = _pv(spec, _ratio(spec.weight, 1), omega0, epsrel) / (2 * omega0)
        chi = _pv(spec, _ratio(spec.weight, 2), omega0, epsrel)
        return FrequencyShifts(delta, chi)
    lo, hi = spec.domain
    near = _pv(spec, spec.weight, omega0, epsrel)
    far = quad(lambda w: spec.weight(w) / (w + omega0), lo, hi, epsrel=epsrel, points=list(spec.points) or None)
    return FrequencyShifts(near + far, None)


def occupancy(beta: float, hbar: float, omega):
    """``n(w) = hbar/(exp(beta hbar w) - 1)``; the hbar -> 0 value is ``1/(beta w)``."""
    omega = np.asarray(omega, dtype=float)
    if hbar == 0:
        return 1.0 / (beta * omega)
    return hbar / np.expm1(beta * hbar * omega)


class QuantumSpectra(NamedTuple):
    h_minus: float
    h_plus: float
    n: float
    gamma_sq: float


def quantum_spectra(spec: BathSpec, hbar: float, omega: float) -> QuantumSpectra:
    """Continuum quantum spectrum at ``-omega`` and ``+omega`` plus ``n`` and ``gamma^2``."""
    if spec.kind != "quantum":
        raise DomainError("quantum_spectra needs a quantum bath")
    if hbar < 0:
        raise DomainError("hbar must be nonnegative")
    _interior(spec, omega)
    w2 = spec.weight(omega)
    n = float(occupancy(spec.beta, hbar, omega))
    # 2 pi hbar^2 w2 (n/hbar + 1) written without dividing by hbar
    return QuantumSpectra(
        h_minus=2 * math.pi * hbar * w2 * (n + hbar),
        h_plus=2 * math.pi * hbar * w2 * n,
        n=n,
        gamma_sq=math.pi * w2,
    )


def gamma_squared(spec: BathSpec, omega0: float) -> float:
    return math.pi * spec.weight(omega0)


def classical_correspondence(spec_q: BathSpec, omega0: float) -> BathSpec:
    """Classical one-sided bath with ``u^2(w) = 4 eps^2(w) sigma(w) w omega0`` for w > 0."""
    if spec_q.kind != "quantum":
        raise DomainError("classical_correspondence needs a quantum bath")
    w_max = spec_q.domain[1]

    def u(w):
        if w <= 0:
            return 0.0
        return math.sqrt(4.0 * spec_q.weight(w) * w * omega0)

    pts = tuple(sorted({0.0, *spec_q.points}))
    return BathSpec(
        coupling=u,
        beta=spec_q.beta,
        domain=(-w_max, w_max),
        kind="classical",
        one_sided=True,
        points=pts,
        label=f"classical({spec_q.label})" if spec_q.label else "classical",
    )


@dataclass(frozen=True)
class BathCorrelations:
    """Quantities at the oscillator frequency consumed by the kinetic operators."""

    omega0: float
    h_tilde: float
    g_tilde: complex
    h_bar: complex
    g_bar: complex
    delta_shift: float
    chi_coeff: Optional[float]
    occupancy: Optional[float] = None
    gamma_sq: Optional[float] = None
    u2: float = field(default=0.0)


def bath_correlations(spec: BathSpec, omega0: float, hbar: Optional[float] = None) -> BathCorrelations:
    shifts = frequency_shifts(spec, omega0)
    sc = spectral_correlations(spec, omega0)
    n = g2 = None
    if spec.kind == "quantum":
        n = float(occupancy(spec.beta, hbar or 0.0, omega0))
        g2 = gamma_squared(spec, omega0)
    return BathCorrelations(
        omega0=omega0,
        h_tilde=sc.h_tilde,
        g_tilde=sc.g_tilde,
        h_bar=sc.h_bar,
        g_bar=sc.g_bar,
        delta_shift=shifts.delta,
        chi_coeff=shifts.chi,
        occupancy=n,
        gamma_sq=g2,
        u2=spec.weight(omega0),
    )


# ---------------------------------------------------------------- couplings

class TabulatedCoupling:
    """Cubic-spline coupling from ``(w, value)`` samples; zero outside the table.

    With ``even=True`` the spline is built on ``|w|`` (negative samples are
    mirrored and averaged with their positive partners) and has zero slope
    at the origin, so the interpolant is exactly even.
    """

    def __init__(self, omega, values, even: bool = False):
        omega = np.asarray(omega, dtype=float)
        values = np.asarray(values, dtype=float)
        if omega.ndim != 1 or omega.shape != values.shape or omega.size < 4:
            raise ValueError("need at least 4 (w, value) pairs")
        if np.any(np.diff(omega) <= 0):
            raise ValueError("w must be strictly increasing")
        self.even = even
        if even:
            a = np.abs(omega)
            keys = np.unique(np.round(a, 12))
            merged = np.array([values[np.isclose(a, k, rtol=0, atol=1e-12)].mean() for k in keys])
            self._spline = CubicSpline(keys, merged, bc_type=((1, 0.0), "not-a-knot") if keys[0] == 0 else "not-a-knot")
            self.lo, self.hi = -keys[-1], keys[-1]
            self._min = keys[0]
        else:
            self._spline = CubicSpline(omega, values)
            self.lo, self.hi = omega[0], omega[-1]
            self._min = None

    def __call__(self, w):
        x = abs(w) if self.even else w
        lo = self._min if self.even else self.lo
        if x < lo or x > self.hi:
            return 0.0
        return float(self._spline(x))


def load_table(path, even: bool = False) -> TabulatedCoupling:
    """Two-column text table, ``#`` comments, strictly increasing ``w``."""
    data = np.loadtxt(Path(path), comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, found {data.shape[1]}")
    return TabulatedCoupling(data[:, 0], data[:, 1], even=even)


def gaussian_coupling(scale: float = 1.0):
    """``u(w) = scale * w^2 exp(-w^2)``."""

    def u(w):
        x = w * w
        # QAWF samples very large w, where x*exp(-x) would be inf*0
        return scale * x * math.exp(-x) if x < 700.0 else 0.0

    return u


def window_coupling(lo: float, hi: float, scale: float = 1.0):
    """Constant ``scale`` on ``lo < |w| < hi``, zero elsewhere (even)."""
    return lambda w: scale if lo < abs(w) < hi else 0.0


def chain_coupling(h0: float, h1: float, eps: float):
    """Symmetric-domain ``u(w)`` of a periodic nearest-neighbour chain with one coupled site.

    The single-site coupling spectrum is ``J(w) = eps^2 w / (pi |h1| sin theta(w))``
    on the band ``w^2 = h0 + 2 h1 cos theta``; on a domain symmetric about 0
    each mode is split between +-w, so ``u^2 = J(|w|)/2``.
    """
    w_lo = math.sqrt(h0 - 2 * abs(h1))
    w_hi = math.sqrt(h0 + 2 * abs(h1))

    def u(w):
        x = abs(w)
        if not w_lo < x < w_hi:
            return 0.0
        c = (x * x - h0) / (2 * h1)
        s = math.sqrt(max(1.0 - c * c, 0.0))
        if s == 0.0:
            return 0.0
        return math.sqrt(eps * eps * x / (2 * math.pi * abs(h1) * s))

    return u, (w_lo, w_hi)


BUILTIN_COUPLINGS = {
    "gauss2": gaussian_coupling,
    "window": window_coupling,
}
