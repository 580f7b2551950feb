import math

import numpy as np
import pytest

from moyalkin.bath import BathSpec, chain_coupling, time_correlations
from moyalkin.chain import (
    RECORDABLE,
    ChainConfig,
    empirical_correlation,
    gibbs_sample,
    integrate,
    relaxation_experiment,
    shadow_energy,
    write_summary_csv,
)
from moyalkin.errors import DomainError, UnstableStep


def chain(k=64, **kw):
    return ChainConfig.nearest_neighbor(k, 2.5, -1.0, **{"beta": 1.0, **kw})


def z_score(est, want, se):
    return abs(est - want) / se


# ------------------------------------------------------------ config

def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2), beta=1.0)  # indefinite
    with pytest.raises(ValueError):
        ChainConfig(np.array([[1.0, 0.1], [0.0, 1.0]]), np.ones(2), beta=1.0)
    c = chain(16)
    assert c.frequencies.min() == pytest.approx(math.sqrt(0.5))
    assert c.frequencies.max() == pytest.approx(math.sqrt(4.5))
    assert c.epsilons.sum() == 1.0 and c.epsilons[8] == 1.0


def test_stability_check():
    c = chain(32, lam=0.1, omega0=1.2)
    assert c.stability_check() == pytest.approx(1.44 - 0.01 * 2 / 3, rel=1e-10)  # (h^-1)_jj = 2/3
    with pytest.raises(DomainError):
        chain(32, lam=2.0, omega0=1.0).stability_check()


# ---------------------------------------------------------- sampling

def test_gibbs_identity_covariance():
    n, beta = 10_000, 2.0
    c = ChainConfig(np.eye(2), np.array([1.0, 0.0]), beta=beta)
    x = gibbs_sample(c, n, seed=11)
    for i, j in ((0, 0), (1, 1), (0, 1)):
        prod = x.bath_q[i] * x.bath_q[j]
        assert z_score(prod.mean(), (i == j) / beta, prod.std() / math.sqrt(n)) < 3
    for i in range(2):
        for j in range(2):
            prod = x.bath_q[i] * x.bath_p[j]
            assert z_score(prod.mean(), 0.0, prod.std() / math.sqrt(n)) < 3


def test_gibbs_temperature_scaling():
    n = 10_000
    v1 = gibbs_sample(chain(8, beta=1.0), n, 5).bath_p[3]
    v4 = gibbs_sample(chain(8, beta=4.0), n, 6).bath_p[3]
    ratio = v1.var() / v4.var()
    # the variance of a sample variance is about 2 sigma^4 / n
    assert z_score(ratio, 4.0, 4.0 * math.sqrt(4 / n)) < 3


def test_gibbs_reproducible_across_sizes():
    c = chain(8)
    big = gibbs_sample(c, 2500, seed=3)
    small = gibbs_sample(c, 1500, seed=3)
    assert np.array_equal(big.bath_q[:, :1024], small.bath_q[:, :1024])
    assert np.array_equal(big.bath_p[:, 1024:1500], small.bath_p[:, 1024:1500])
    assert not np.array_equal(gibbs_sample(c, 10, seed=4).bath_q, small.bath_q[:, :10])


# ------------------------------------------------------- integration

def test_free_oscillator_matches_closed_form():
    c = chain(16, lam=0.0, omega0=1.3)
    x0 = gibbs_sample(c, 3, 1, q0=0.7, p0=-0.4)
    errs = []
    for dt in (0.02, 0.01):
        ens = integrate(c, x0, 10.0, dt, record_every=int(round(1 / dt)), record=("q",), method="verlet")
        t = ens.times
        exact = 0.7 * np.cos(1.3 * t) + (-0.4 / 1.3) * np.sin(1.3 * t)
        errs.append(np.abs(ens["q"][:, 0] - exact).max())
    assert errs[0] < 1e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_single_mode_energy_bounded_second_order():
    c = ChainConfig(np.array([[2.0]]), np.array([1.0]), beta=1.0)
    x0 = gibbs_sample(c, 1, 2)
    x0.bath_p[:] = 1.0
    devs = []
    for dt in (0.1, 0.05):
        ens = integrate(c, x0, 20 * math.pi, dt, record=("total",), method="verlet")
        e = ens["total"][:, 0]
        devs.append(np.abs(e - e[0]).max() / e[0])
    assert devs[0] / devs[1] == pytest.approx(4.0, rel=0.1)


def test_modal_and_direct_verlet_agree():
    c = chain(64, lam=0.3, omega0=1.2)
    x0 = gibbs_sample(c, 5, 1, 1.0, 0.5)
    a = integrate(c, x0, 50, 0.05, record_every=10, record=RECORDABLE, method="verlet")
    b = integrate(c, x0, 50, 0.05, record_every=10, record=RECORDABLE, method="modal")
    assert np.array_equal(a.times, b.times)
    for name in RECORDABLE:
        assert np.abs(a[name] - b[name]).max() < 1e-10
    assert np.abs(a.final.bath_p - b.final.bath_p).max() < 1e-10


def test_energy_drift_over_thousand_periods():
    c = chain(64, lam=0.3, omega0=1.2)
    x0 = gibbs_sample(c, 4, 1, 1.0, 0.0)
    t_min = 2 * math.pi / c.max_frequency()
    dt = t_min / 100
    ens = integrate(c, x0, 1000 * t_min, dt, record_every=5, record=("total",), method="verlet")
    e = ens["total"]
    w = len(e) // 10
    # Verlet energy oscillates at O(dt^2); compare averages over the first and last 100 periods
    drift = np.abs(e[-w:].mean(axis=0) - e[:w].mean(axis=0)) / e[0]
    assert drift.max() < 1e-6
    s0, s1 = shadow_energy(c, x0, dt), shadow_energy(c, ens.final, dt)
    assert np.abs(s1 / s0 - 1).max() < 1e-12


def test_unstable_step():
    c = chain(16)
    with pytest.raises(UnstableStep):
        integrate(c, gibbs_sample(c, 2, 0), 1.0, 2.1 / c.max_frequency())


# ------------------------------------------------------- correlations

def test_mode_sum_matches_continuum_spectrum():
    c = chain(512)
    u, (lo, hi) = chain_coupling(2.5, -1.0, 1.0)
    spec = BathSpec(u, beta=1.0, domain=(-hi, hi), points=(-lo, lo))
    for s in (0.0, 1.0, 5.0, 20.0):
        assert c.mode_sum(s)[0] == pytest.approx(time_correlations(spec, s)[0], rel=1e-8, abs=1e-10)


def test_correlation_at_zero_lag_and_zero_coupling():
    c = chain(128)
    ens = integrate(c, gibbs_sample(c, 4000, 9), 30.0, 0.05, record_every=20, record=("W",))
    est = empirical_correlation(c, ens)
    exact0 = c.epsilons @ np.linalg.solve(c.beta * c.h_matrix, c.epsilons)
    assert z_score(est.mean[0], exact0, est.stderr[0]) < 3
    z = (est.mean - c.mode_sum(est.s)) / est.stderr
    assert np.all(np.abs(z[::5]) < 3)
    silent = ChainConfig(c.h_matrix, np.zeros(128), beta=1.0)
    ens0 = integrate(silent, gibbs_sample(silent, 50, 9), 5.0, 0.05, record_every=20, record=("W",))
    assert np.all(empirical_correlation(silent, ens0).mean == 0.0)


def test_correlation_time_translation_invariant():
    c = chain(256)
    ens = integrate(c, gibbs_sample(c, 4000, 21), 60.0, 0.05, record_every=20, record=("W",))
    lags = np.array([0.0, 2.0, 7.0, 15.0])
    a = empirical_correlation(c, ens, lags, origin=0.0)
    b = empirical_correlation(c, ens, lags, origin=40.0)
    assert np.all(np.abs(a.mean - b.mean) < 3 * np.hypot(a.stderr, b.stderr))


def test_correlation_requires_free_chain():
    c = chain(16, lam=0.1)
    ens = integrate(c, gibbs_sample(c, 10, 0), 1.0, 0.05, record=("W",))
    with pytest.raises(DomainError):
        empirical_correlation(c, ens)


# ---------------------------------------------------------- relaxation

def test_relaxation_flat_without_coupling():
    dt = 0.05
    r = relaxation_experiment(chain(64, omega0=1.2), 0.0, 50.0, dt=dt, n_samples=50, record_every=100)
    # flat up to the bounded O(dt^2) Verlet energy ripple
    assert np.allclose(r.energy.mean, r.energy.mean[0], rtol=dt**2 * 1.2**2 / 4 * 1.01)
    assert np.all(r.energy.stderr < 1e-12)
    assert r.rate == 0.0


def test_relaxation_rate_scales_with_coupling_squared():
    c = chain(256, omega0=1.2)
    t_max = 0.9 * c.recurrence_time()
    fast = relaxation_experiment(c, 0.2, t_max, dt=0.01, n_samples=1000, seed=1, record_every=100)
    slow = relaxation_experiment(c, 0.1, t_max, dt=0.01, n_samples=1000, seed=2, record_every=100)
    assert fast.rate / slow.rate == pytest.approx(4.0, rel=0.1)
    assert fast.rate_ci[0] < fast.rate < fast.rate_ci[1]


def test_summary_csv(tmp_path):
    write_summary_csv(tmp_path / "e.csv", [0.0, 1.0], [2.0, 3.0], [0.1, 0.2])
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "time,mean,stderr" and lines[2] == "1.0,3.0,0.2"
