import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import hermite
from scipy import ndimage
from scipy.linalg import expm

from moyalkin.errors import GridUnderResolved, KernelDivergence, NonQuadraticKernel
from moyalkin.fock import FockBasis, coherent_state, fock_state, position_momentum, pure_state, thermal_state
from moyalkin.grid import PhaseGrid, PhaseSpaceField
from moyalkin.wigner import (
    OrderingKernel,
    characteristic_function,
    displacement_matrix,
    generalized_wigner,
    inverse_transform,
    psi_correction,
)


def thermal_gaussian(grid, hbar, omega0, beta, shift):
    """Closed-form thermal field; ``shift`` is 1/2 (Weyl), 1 (Husimi) or 0 (Glauber)."""
    nbar = 1 / math.expm1(beta * hbar * omega0) + shift
    qq, pp = grid.mesh()
    return np.exp(-(omega0**2 * qq**2 + pp**2) / (2 * hbar * omega0 * nbar)) / (2 * math.pi * hbar * nbar)


# ---------------------------------------------------- characteristic fn

def test_characteristic_against_expm():
    b = FockBasis(25, hbar=0.6, omega0=1.4)
    big = FockBasis(140, hbar=0.6, omega0=1.4)
    qb, pb = position_momentum(big)
    rho = pure_state(b, [0.3, 0.5j, -0.2, 0.1, 0.6])
    padded = np.zeros((140, 140), dtype=complex)
    padded[:25, :25] = rho.entries
    for eta, xi in ((0.4, -0.7), (-1.2, 0.3), (0.0, 2.0)):
        exact = np.trace(padded @ expm(1j * (eta * qb + xi * pb)))
        got = characteristic_function(rho, (np.array([eta]), np.array([xi])))[0, 0]
        assert got == pytest.approx(exact, abs=1e-12)


def test_displacement_unitary_block():
    b = FockBasis(60)
    d = displacement_matrix(b, 0.7 - 0.4j)
    assert np.allclose((d @ d.conj().T)[:20, :20], np.eye(20), atol=1e-12)


def test_characteristic_at_origin_and_vacuum():
    b = FockBasis(15)
    eta = np.linspace(-3, 3, 7)
    chi = characteristic_function(fock_state(b, 0), (eta, eta))
    e, x = np.meshgrid(eta, eta, indexing="ij")
    assert np.allclose(chi, np.exp(-(e**2 + x**2) / 4), atol=1e-14)
    for rho in (thermal_state(b, 2.0), fock_state(b, 3), coherent_state(b, 0.5)):
        assert characteristic_function(rho, ([0.0], [0.0]))[0, 0] == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=25, deadline=None)
@given(eta=st.floats(-3, 3), xi=st.floats(-3, 3), re=st.floats(-1, 1), im=st.floats(-1, 1))
def test_characteristic_conjugation_symmetry(eta, xi, re, im):
    rho = coherent_state(FockBasis(20), complex(re, im))
    plus = characteristic_function(rho, ([eta], [xi]))[0, 0]
    minus = characteristic_function(rho, ([-eta], [-xi]))[0, 0]
    assert minus == pytest.approx(np.conj(plus), abs=1e-13)


def test_characteristic_grid_too_coarse():
    b = FockBasis(40)
    with pytest.raises(GridUnderResolved):
        characteristic_function(fock_state(b, 30), PhaseGrid.symmetric(10, 10, 16))


# ------------------------------------------------------------ kernels

def test_kernel_basics():
    k = OrderingKernel(-1.0, omega0=2.0, hbar=0.5).check()
    assert k.omega(0.0, 0.0) == 1.0
    assert k.chi(1.0, 0.0) == pytest.approx(0.5 / 4 / 2.0)


def test_psi_correction_coefficients():
    assert psi_correction(OrderingKernel(0.0)).c_qq == 0.0
    c = psi_correction(OrderingKernel(1.0, omega0=2.0, hbar=0.5))
    assert (c.c_qq, c.c_pp) == (0.5, 2.0)
    assert c.prefactor == pytest.approx(-0.125)
    with pytest.raises(NonQuadraticKernel):
        psi_correction(lambda s: s)


def test_psi_correction_on_gaussian_second_order():
    c = psi_correction(OrderingKernel(-1.0, omega0=1.5, hbar=0.8))
    errs = []
    for n in (64, 128):
        g = PhaseGrid.symmetric(6, 6, n)
        qq, pp = g.mesh()
        f = np.exp(-(qq**2) / 2 - pp**2 / 3)
        fqq = (qq**2 - 1) * f
        fpp = (4 * pp**2 / 9 - 2 / 3) * f
        exact = c.prefactor * (c.c_qq * fqq + c.c_pp * fpp)
        errs.append(np.abs(c.apply(f, g) - exact).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


# ------------------------------------------------------------- fields

def test_vacuum_weyl_closed_form():
    g = PhaseGrid.symmetric(7, 7, 64)
    w = generalized_wigner(fock_state(FockBasis(10), 0), OrderingKernel(0.0), g)
    qq, pp = g.mesh()
    assert np.abs(w.values - np.exp(-(qq**2 + pp**2)) / math.pi).max() < 1e-14


@pytest.mark.parametrize(
    "a,shift,beta,grid",
    [
        (0.0, 0.5, 1.0, PhaseGrid(-8, 8, -10, 10, 96, 96)),
        (-1.0, 1.0, 1.0, PhaseGrid(-8, 8, -10, 10, 96, 96)),
        # normal ordering divides round-off by a decaying Gaussian, so the frequency
        # grid has to stop soon after the characteristic function falls below 1e-10
        (1.0, 0.0, 0.5, PhaseGrid(-12, 12, -16, 16, 68, 70)),
    ],
)
def test_thermal_fields_closed_form(a, shift, beta, grid):
    hbar, w0 = 0.5, 1.3
    g = grid
    b = FockBasis(160, hbar=hbar, omega0=w0)
    w = generalized_wigner(thermal_state(b, beta), OrderingKernel(a, w0, hbar), g)
    exact = thermal_gaussian(g, hbar, w0, beta, shift)
    assert np.abs(w.values - exact).max() < 1e-10 * exact.max()
    assert w.integral() == pytest.approx(1.0, abs=1e-8)


def test_normal_ordering_of_vacuum_diverges():
    g = PhaseGrid.symmetric(7, 7, 64)
    with pytest.raises(KernelDivergence):
        generalized_wigner(fock_state(FockBasis(10), 0), OrderingKernel(1.0), g)


def test_fock_one_negative_at_origin():
    g = PhaseGrid.symmetric(8, 8, 64)  # cell centres straddle 0
    w = generalized_wigner(fock_state(FockBasis(12), 1), OrderingKernel(0.0), g)
    qq, pp = g.mesh()
    r2 = qq**2 + pp**2
    assert np.abs(w.values - (2 * r2 - 1) * np.exp(-r2) / math.pi).max() < 1e-13
    assert w.values.min() < 0


def test_weyl_position_marginal_matches_hermite():
    hbar, w0 = 0.8, 1.2
    b = FockBasis(70, hbar=hbar, omega0=w0)
    rho = thermal_state(b, 1.0)
    g = PhaseGrid.symmetric(9, 9, 128)
    w = generalized_wigner(rho, OrderingKernel(0.0, w0, hbar), g)
    # position eigenfunctions psi_n(q) through physicists' Hermite polynomials
    s = np.sqrt(w0 / hbar) * g.q
    dens = np.zeros_like(g.q)
    diag = np.real(np.diag(rho.entries))
    for n in range(b.dim):
        c = np.zeros(n + 1)
        c[n] = 1
        norm = (w0 / (math.pi * hbar)) ** 0.25 / math.sqrt(2.0**n * math.factorial(n))
        psi = norm * hermite.hermval(s, c) * np.exp(-s * s / 2)
        dens += diag[n] * psi**2
    assert np.abs(w.marginal_q() - dens).max() < 1e-8


@pytest.mark.parametrize("a", [-1.0, -0.5, 0.0, 0.3])
def test_normalization_and_reality(a):
    b = FockBasis(30, hbar=0.7)
    rho = pure_state(b, [0.4, 0.3 + 0.2j, 0, -0.5, 0.1j])
    w = generalized_wigner(rho, OrderingKernel(a, 1.0, 0.7), PhaseGrid.symmetric(8, 8, 96))
    assert w.integral() == pytest.approx(1.0, abs=1e-8)


def test_ordering_covariance_gaussian_filter():
    hbar, w0 = 0.6, 1.0
    b = FockBasis(30, hbar=hbar, omega0=w0)
    rho = coherent_state(b, 0.8 + 0.2j)
    g = PhaseGrid.symmetric(7, 7, 128)
    weyl = generalized_wigner(rho, OrderingKernel(0.0, w0, hbar), g)
    husimi = generalized_wigner(rho, OrderingKernel(-1.0, w0, hbar), g)
    sq = math.sqrt(hbar / (2 * w0)) / g.dq
    sp = math.sqrt(hbar * w0 / 2) / g.dp
    smoothed = ndimage.gaussian_filter(weyl.values, (sq, sp), mode="constant", truncate=12)
    assert np.abs(smoothed - husimi.values).max() < 1e-6 * husimi.values.max()


# --------------------------------------------------------- round trips

def test_round_trip_vacuum_weyl():
    b = FockBasis(16)
    rho = fock_state(b, 0)
    g = PhaseGrid.symmetric(7, 7, 64)
    back = inverse_transform(generalized_wigner(rho, OrderingKernel(0.0), g), OrderingKernel(0.0), b)
    assert np.abs(back.entries - rho.entries).max() < 1e-10
    assert np.array_equal(back.entries, back.entries.conj().T)


def test_round_trip_thermal_husimi():
    b = FockBasis(40)
    rho = thermal_state(b, 1.0)
    k = OrderingKernel(-1.0)
    g = PhaseGrid.symmetric(9, 9, 96)
    back = inverse_transform(generalized_wigner(rho, k, g), k, b)
    assert np.abs(back.entries - rho.entries).max() < 1e-9


def test_round_trip_coherent_superposition():
    b = FockBasis(24, hbar=0.9, omega0=1.1)
    rho = pure_state(b, [0.5, 0, 0.5j, 0.2, 0, -0.3])
    k = OrderingKernel(-0.4, 1.1, 0.9)
    g = PhaseGrid.symmetric(9, 9, 96)
    back = inverse_transform(generalized_wigner(rho, k, g), k, b)
    assert np.abs(back.entries - rho.entries).max() < 1e-9


# ---------------------------------------------------------------- I/O

def test_field_io(tmp_path):
    g = PhaseGrid(-1.0, 2.0, -3.0, 3.0, 8, 6)
    vals = np.random.default_rng(0).normal(size=(8, 6))
    f = PhaseSpaceField(g, vals)
    f.to_binary(tmp_path / "f.bin")
    back = PhaseSpaceField.from_binary(tmp_path / "f.bin")
    assert back.grid == g and np.array_equal(back.values, vals)
    f.to_csv(tmp_path / "f.csv", header="kind=test\nseed=0")
    back = PhaseSpaceField.from_csv(tmp_path / "f.csv", g)
    assert np.array_equal(back.values, vals)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:8] == b"MKFIELD1"


def test_grid_validation():
    with pytest.raises(ValueError):
        PhaseGrid(0, 1, 0, 1, 5, 4)
    g = PhaseGrid.symmetric(2, 3, 8)
    assert g.q[0] == -g.q[-1] and g.p[0] == -g.p[-1]
