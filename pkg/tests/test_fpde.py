import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moyalkin.bath import BathSpec, classical_correspondence, gaussian_coupling, occupancy
from moyalkin.errors import BoundaryLeak, CFLViolation, GridUnderResolved, MissingBathQuantity, NonHurwitzDrift
from moyalkin.fpde import (
    Discretization,
    FPOperator,
    Variant,
    build,
    coherent_rescale,
    evolve_field,
    gaussian_field,
    h_functional,
    lyapunov_2x2,
    mb_distribution,
    moments,
    stationarity_residual,
)
from moyalkin.grid import PhaseGrid
from moyalkin.lindblad import coefficients_from_model


def classical_spec(beta=1.0):
    return BathSpec(gaussian_coupling(), beta=beta)


def ohmic(beta=1.0):
    return BathSpec(lambda w: math.sqrt(w) * math.exp(-w / 4), beta=beta, domain=(0.0, 40.0), kind="quantum")


@pytest.fixture(scope="module")
def ops():
    p = dict(spec=classical_spec(), lam=0.3, omega0=1.0, beta=1.0)
    return build("CLASSICAL", p), build("GME", p)


# ------------------------------------------------------------ building

def test_classical_coefficients(ops):
    cl, _ = ops
    u2 = math.exp(-2.0)
    d_pp = 0.09 * math.pi / 2 * u2
    assert cl.d_pp == pytest.approx(d_pp, rel=1e-12)
    assert cl.d_qq == pytest.approx(d_pp, rel=1e-12)
    assert cl.drift[0, 0] == cl.drift[1, 1] == pytest.approx(d_pp)  # Gamma = beta D
    assert cl.drift[1, 0] == -cl.drift[0, 1] == cl.renorm_factor


def test_gme_determinant_negative(ops):
    _, gm = ops
    assert gm.d_qq == 0.0 and gm.params["chi"] != 0
    assert np.linalg.det(gm.diffusion) < 0
    assert gm.drift[1, 1] == pytest.approx(2 * math.pi * 0.09 * math.exp(-2.0))
    flat = build("GME", dict(lam=0.3, omega0=1.0, beta=1.0, u2=0.1, delta=0.0, chi=0.0))
    assert np.linalg.det(flat.diffusion) == 0.0


def test_missing_quantities():
    with pytest.raises(MissingBathQuantity):
        build("CLASSICAL", dict(lam=0.3, omega0=1.0))
    with pytest.raises(MissingBathQuantity):
        build("GME", dict(lam=0.3, omega0=1.0, beta=1.0, u2=0.1, delta=0.0))
    with pytest.raises(MissingBathQuantity):
        build("GENERAL", dict(d1=1.0))


def test_classical_limit_matches_quantum_ps():
    spec = ohmic()
    q0 = build(Variant.QUANTUM_PS, dict(spec=spec, lam=0.2, omega0=1.3, beta=0.7, hbar=0.0))
    cl = build(Variant.CLASSICAL, dict(spec=classical_correspondence(spec, 1.3), lam=0.2, omega0=1.3, beta=0.7,
                                       delta=q0.params.get("delta", None) or 0.0))
    assert q0.d_pp == pytest.approx(cl.d_pp, rel=1e-10)
    assert q0.drift[0, 0] == pytest.approx(cl.drift[0, 0], rel=1e-10)


def test_hbar_zero_is_ordering_independent():
    spec = ohmic()
    base = build("QUANTUM_PS", dict(spec=spec, lam=0.3, omega0=1.0, beta=1.0, hbar=0.0, a=0.0))
    for a in (-1.0, 0.5, 1.0):
        op = build("QUANTUM_PS", dict(spec=spec, lam=0.3, omega0=1.0, beta=1.0, hbar=0.0, a=a))
        assert np.array_equal(op.diffusion, base.diffusion)
        assert np.array_equal(op.drift, base.drift)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-1, 1), s=st.floats(0.2, 2.0), lam=st.floats(0.01, 1.0), d=st.floats(-0.3, 0.3))
def test_ordering_shift_keeps_cross_diffusion(a, s, lam, d):
    p = dict(d1=1.0, d2=0.8, d=d, lam_friction=lam, kappa=0.0, omega0=1.4, hbar=0.5, scale=s)
    w = build("GENERAL", dict(p, a=0.0))
    op = build("GENERAL", dict(p, a=a))
    assert op.d_qp == pytest.approx(w.d_qp, abs=1e-14)
    assert op.d_pp == pytest.approx(1.0 - a * 0.5 * lam * 1.4 / 2, rel=1e-12)


def test_json_dump(ops, tmp_path):
    cl, _ = ops
    text = cl.to_json(tmp_path / "op.json")
    back = json.loads((tmp_path / "op.json").read_text())
    assert back == json.loads(text)
    assert back["variant"] == "CLASSICAL" and np.allclose(back["diffusion"], cl.diffusion)


# ------------------------------------------------------------- moments

def test_lyapunov_solver():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.normal(size=(2, 2)) - 3 * np.eye(2)
        q = rng.normal(size=(2, 2))
        q = q @ q.T
        s = lyapunov_2x2(a, q)
        assert np.allclose(a @ s + s @ a.T + q, 0, atol=1e-12)


def test_classical_stationary_covariance():
    for beta, w0 in ((1.0, 1.0), (2.5, 0.7)):
        op = build("CLASSICAL", dict(spec=classical_spec(beta), lam=0.3, omega0=w0, beta=beta))
        cov = moments(op).covariance
        assert np.allclose(cov, np.diag([1 / (beta * w0**2), 1 / beta]), rtol=1e-12, atol=1e-15)


def test_general_weyl_stationary_momentum():
    hbar, w0, beta = 0.4, 1.2, 0.9
    op = build("QUANTUM_PS", dict(spec=ohmic(), lam=0.3, omega0=w0, beta=beta, hbar=hbar, a=0.0))
    n = float(occupancy(beta, hbar, w0))
    assert moments(op).covariance[1, 1] == pytest.approx(w0 * (n + hbar / 2), rel=1e-12)


def test_non_hurwitz():
    op = FPOperator(np.array([[0.0, -1.0], [1.0, 0.0]]), np.eye(2))
    with pytest.raises(NonHurwitzDrift):
        moments(op)


def test_gme_covariance_loses_positivity():
    # a state thin along the negative-diffusion direction stops being a covariance
    gm = build("GME", dict(spec=classical_spec(), lam=0.5, omega0=1.0, beta=1.0))
    v = np.linalg.eigh(gm.diffusion)[1][:, 0]
    s0 = 0.07**2 * np.outer(v, v) + 0.2**2 * (np.eye(2) - np.outer(v, v))
    m = moments(gm)
    ev = [np.linalg.eigvalsh(m.cov(s0, t))[0] for t in np.linspace(0, 1, 101)]
    assert min(ev) < -1e-3
    cl = build("CLASSICAL", dict(spec=classical_spec(), lam=0.5, omega0=1.0, beta=1.0))
    mc = moments(cl)
    assert min(np.linalg.eigvalsh(mc.cov(s0, t))[0] for t in np.linspace(0, 1, 101)) > 0


def test_gme_field_turns_negative():
    p = dict(spec=classical_spec(), lam=0.5, omega0=1.0, beta=1.0)
    gm, cl = build("GME", p), build("CLASSICAL", p)
    v = np.linalg.eigh(gm.diffusion)[1][:, 0]
    s0 = 0.07**2 * np.outer(v, v) + 0.2**2 * (np.eye(2) - np.outer(v, v))
    g = PhaseGrid.symmetric(2, 2, 128)
    f0 = gaussian_field(g, (0, 0), s0)
    lows = []
    for op in (gm, cl):
        dt = 0.5 / math.ceil(0.5 / (0.5 * Discretization(op, g, 6).max_dt()))
        tr = evolve_field(op, f0, 0.5, dt, order=6, every=1, leak_tol=math.inf)
        lows.append(tr.min_ratio.min())
    assert lows[0] < -1e-4
    assert lows[1] >= -1e-8


# ------------------------------------------------------------ solver

def test_mb_distribution():
    g = PhaseGrid.symmetric(7, 7, 128)
    f = mb_distribution(2.0, 1.5, g)
    assert f.integral() == pytest.approx(1.0, abs=1e-12)
    assert f.moment(0, 2) == pytest.approx(0.5, rel=1e-8)
    with pytest.raises(GridUnderResolved):
        mb_distribution(0.1, 1.0, g)


def test_heat_kernel_variance():
    d = np.array([[0.3, 0.05], [0.05, 0.2]])
    op = FPOperator(np.zeros((2, 2)), d)
    g = PhaseGrid.symmetric(5, 5, 128)
    f0 = gaussian_field(g, (0, 0), 0.2 * np.eye(2))
    tr = evolve_field(op, f0, 1.0, 0.005, every=100)
    var = np.array([[f.moment(2, 0), f.moment(1, 1), f.moment(0, 2)] for f in tr.fields])
    slopes = (var[-1] - var[0]) / (tr.times[-1] - tr.times[0])
    assert slopes == pytest.approx(2 * np.array([0.3, 0.05, 0.2]), rel=1e-2)


def test_mb_stationary_under_classical(ops):
    cl, gm = ops
    g = PhaseGrid.symmetric(7, 7, 256)
    mb = mb_distribution(1.0, 1.0, g)
    r_cl = stationarity_residual(cl, mb, order=6)
    r_gm = stationarity_residual(gm, mb, order=6)
    assert r_cl <= 1e-8
    assert r_gm >= 1e-3
    assert r_gm / r_cl >= 1e4


def test_second_order_residual_halving(ops):
    cl, _ = ops
    r = [stationarity_residual(cl, mb_distribution(1.0, 1.0, PhaseGrid.symmetric(7, 7, n))) for n in (64, 128)]
    assert r[0] / r[1] == pytest.approx(4.0, rel=0.05)


def test_mean_follows_moment_ode(ops):
    cl, _ = ops
    g = PhaseGrid.symmetric(6, 6, 128)
    f0 = gaussian_field(g, (1.5, -0.5), 0.5 * np.eye(2))
    tr = evolve_field(cl, f0, 2.0, 0.01, order=4)
    want = moments(cl).mean([1.5, -0.5], 2.0)
    got = [tr.final.moment(1, 0), tr.final.moment(0, 1)]
    assert np.allclose(got, want, atol=1e-6)
    assert abs(tr.mass[-1] - tr.mass[0]) < 1e-8


def test_h_functional_decreases(ops):
    cl, _ = ops
    g = PhaseGrid.symmetric(7, 7, 128)
    mb = mb_distribution(1.0, 1.0, g)
    f0 = gaussian_field(g, (1.0, 0.5), np.diag([0.4, 0.7]))
    hs = []
    evolve_field(cl, f0, 3.0, 0.01, order=4, observer=lambda t, v: hs.append(h_functional(type(mb)(g, v), mb)))
    assert hs[0] > hs[-1] > 0
    assert np.max(np.diff(hs)) <= 1e-8


def test_cfl_violation(ops):
    cl, _ = ops
    g = PhaseGrid.symmetric(6, 6, 64)
    limit = Discretization(cl, g, 2).max_dt(safety=1.0)
    with pytest.raises(CFLViolation):
        evolve_field(cl, mb_distribution(1.0, 1.0, g), 10 * limit, 2 * limit)


def test_boundary_leak():
    out = FPOperator(-np.eye(2), 0.01 * np.eye(2))  # pushes everything outward
    g = PhaseGrid.symmetric(3, 3, 64)
    with pytest.raises(BoundaryLeak):
        evolve_field(out, gaussian_field(g, (0, 0), 0.2 * np.eye(2)), 3.0, 0.01, every=10)


# ------------------------------------------------------ coherent scaling

def test_coherent_rescale_coefficients():
    hbar, w0 = 0.3, 1.7
    c = coefficients_from_model(ohmic(), 0.3, w0, 1.0, hbar)
    op = build("GENERAL", dict(coeffs=c, a=0.0))
    x = coherent_rescale(op, hbar, w0)
    assert x.diffusion[1, 1] == pytest.approx(c.d1 / (2 * hbar * w0), rel=1e-12)
    assert x.diffusion[0, 0] == pytest.approx(c.d2 * w0 / (2 * hbar), rel=1e-12)
    s = c.hamiltonian_scale
    assert x.drift[0, 1] == pytest.approx(-s * w0) and x.drift[1, 0] == pytest.approx(s * w0)
    back = coherent_rescale(x, hbar, w0, inverse=True)
    assert np.allclose(back.drift, op.drift, rtol=1e-13) and np.allclose(back.diffusion, op.diffusion, rtol=1e-13)


def test_coherent_rescale_field_preserves_mass():
    g = PhaseGrid.symmetric(6, 6, 64)
    f = gaussian_field(g, (0.5, 0.2), np.diag([0.5, 0.8]))
    x = coherent_rescale(f, 0.5, 2.0)
    assert x.integral() == pytest.approx(f.integral(), rel=1e-12)
    back = coherent_rescale(x, 0.5, 2.0, inverse=True)
    assert np.allclose(back.values, f.values, rtol=1e-13)
    assert back.grid.q_max == pytest.approx(6.0)
