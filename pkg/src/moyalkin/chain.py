"""Classical oscillator coupled to a finite harmonic chain: Monte-Carlo oracle.

Total Hamiltonian (unit masses)

    H = p^2/2 + omega0^2 q^2/2 + sum p_k^2/2 + q_k h_kl q_l/2 + lam q sum eps_k q_k.

Ensembles are arrays with one column per trajectory.  Bath coordinates are
drawn from the canonical ensemble of the free chain; the oscillator starts from
caller-given values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .bath import mode_sum_correlations
from .errors import DomainError, UnstableStep

CHUNK = 1024  # trajectories per RNG stream


@dataclass(frozen=True)
class ChainConfig:
    h_matrix: np.ndarray = field(repr=False)
    epsilons: np.ndarray = field(repr=False)
    beta: float
    lam: float = 0.0
    omega0: float = 1.0
    # (h0, h1) when h is the nearest-neighbour circulant; enables the fast stencil
    stencil: Optional[tuple] = None

    def __post_init__(self):
        h = np.array(self.h_matrix, dtype=float)
        eps = np.array(self.epsilons, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or eps.shape != (h.shape[0],):
            raise ValueError("h_matrix must be K x K and epsilons length K")
        if not np.array_equal(h, h.T):
            raise ValueError("h_matrix must be symmetric")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        h.setflags(write=False)
        eps.setflags(write=False)
        object.__setattr__(self, "h_matrix", h)
        object.__setattr__(self, "epsilons", eps)
        if self.frequencies[0] <= 0:
            raise ValueError("h_matrix must be positive definite")

    @classmethod
    def nearest_neighbor(cls, n_modes: int, h0: float, h1: float, beta: float, eps: float = 1.0,
                         sites: Optional[Sequence[int]] = None, lam: float = 0.0, omega0: float = 1.0):
        """Periodic chain ``h = h0 I + h1 (shift + shift^T)`` coupled at ``sites`` (default: mid-chain)."""
        k = n_modes
        h = h0 * np.eye(k) + h1 * (np.eye(k, k=1) + np.eye(k, k=-1))
        h[0, -1] += h1
        h[-1, 0] += h1
        e = np.zeros(k)
        e[list(sites) if sites is not None else [k // 2]] = eps
        return cls(h, e, beta, lam, omega0, stencil=(h0, h1))

    def with_lambda(self, lam: float) -> "ChainConfig":
        return replace(self, lam=lam)

    @property
    def n_modes(self) -> int:
        return self.h_matrix.shape[0]

    @cached_property
    def _modes(self):
        w2, v = np.linalg.eigh(self.h_matrix)
        return np.sqrt(np.clip(w2, 0, None)) * np.sign(w2), v

    @property
    def frequencies(self) -> np.ndarray:
        return self._modes[0]

    @property
    def mode_vectors(self) -> np.ndarray:
        return self._modes[1]

    @property
    def mode_couplings(self) -> np.ndarray:
        """``c_m = eps . v_m`` for each normal mode of the chain."""
        return self.mode_vectors.T @ self.epsilons

    def mode_sum(self, s) -> np.ndarray:
        """Exact canonical ``<W W(s)>`` of the free chain."""
        return mode_sum_correlations(self.frequencies, self.mode_couplings**2, self.beta, s)

    def static_shift(self) -> float:
        """``lam^2 eps^T h^-1 eps``: the softening of the oscillator spring by the chain."""
        c = self.mode_couplings
        return self.lam**2 * float(np.sum(c**2 / self.frequencies**2))

    def stability_check(self) -> float:
        """Effective squared frequency ``omega0^2 - lam^2 eps^T h^-1 eps``; raises if not positive."""
        eff = self.omega0**2 - self.static_shift()
        if eff <= 0:
            raise DomainError(f"coupled system is unstable (effective omega0^2 = {eff:.4g})")
        return eff

    def stiffness(self) -> np.ndarray:
        """Full (1+K) x (1+K) potential matrix, oscillator first."""
        k = self.n_modes
        m = np.zeros((k + 1, k + 1))
        m[0, 0] = self.omega0**2
        m[0, 1:] = m[1:, 0] = self.lam * self.epsilons
        m[1:, 1:] = self.h_matrix
        return m

    def max_frequency(self) -> float:
        ev = np.linalg.eigvalsh(self.stiffness())
        return math.sqrt(ev[-1])

    def recurrence_time(self) -> float:
        """``K / v_max`` for the nearest-neighbour chain (unit lattice spacing)."""
        if self.stencil is None:
            raise DomainError("recurrence time is defined for the nearest-neighbour chain")
        h0, h1 = self.stencil
        th = np.linspace(1e-6, math.pi - 1e-6, 20001)
        v = np.abs(h1) * np.sin(th) / np.sqrt(h0 + 2 * h1 * np.cos(th))
        return self.n_modes / float(v.max())

    def bath_force(self, bath_q: np.ndarray) -> np.ndarray:
        """``W = sum eps_k q_k`` for each column."""
        return self.epsilons @ bath_q

    def apply_h(self, bath_q: np.ndarray) -> np.ndarray:
        if self.stencil is not None:
            h0, h1 = self.stencil
            return h0 * bath_q + h1 * (np.roll(bath_q, 1, axis=0) + np.roll(bath_q, -1, axis=0))
        return self.h_matrix @ bath_q


@dataclass
class PhasePoints:
    """Ensemble state: oscillator ``q, p`` of shape (N,), bath ``Q, P`` of shape (K, N)."""

    q: np.ndarray
    p: np.ndarray
    bath_q: np.ndarray = field(repr=False)
    bath_p: np.ndarray = field(repr=False)
    seed: Optional[int] = None

    @property
    def n_samples(self) -> int:
        return self.q.shape[0]

    def copy(self) -> "PhasePoints":
        return PhasePoints(self.q.copy(), self.p.copy(), self.bath_q.copy(), self.bath_p.copy(), self.seed)


def _stream(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed).jumped(chunk))


def gibbs_sample(config: ChainConfig, n_samples: int, seed: int, q0=0.0, p0=0.0) -> PhasePoints:
    """Canonical chain samples with the oscillator at ``(q0, p0)``.

    Trajectory ``i`` draws from Philox stream ``i // CHUNK`` so any sample is
    reproducible from ``seed`` alone.
    """
    k = config.n_modes
    w, v = config.frequencies, config.mode_vectors
    root_beta = math.sqrt(config.beta)
    bq = np.empty((k, n_samples))
    bp = np.empty((k, n_samples))
    for c, start in enumerate(range(0, n_samples, CHUNK)):
        stop = min(start + CHUNK, n_samples)
        # one row per trajectory, so a sample does not depend on how many follow it
        z = _stream(seed, c).standard_normal((stop - start, 2 * k)).T
        bq[:, start:stop] = v @ (z[:k] / (root_beta * w)[:, None])
        bp[:, start:stop] = z[k:] / root_beta
    q = np.broadcast_to(np.asarray(q0, dtype=float), (n_samples,)).copy()
    p = np.broadcast_to(np.asarray(p0, dtype=float), (n_samples,)).copy()
    return PhasePoints(q, p, bq, bp, seed)


def system_energy(config: ChainConfig, q, p):
    return 0.5 * p**2 + 0.5 * config.omega0**2 * q**2


def total_energy(config: ChainConfig, x: PhasePoints) -> np.ndarray:
    bath = 0.5 * np.sum(x.bath_p**2, axis=0) + 0.5 * np.sum(x.bath_q * config.apply_h(x.bath_q), axis=0)
    inter = config.lam * x.q * config.bath_force(x.bath_q)
    return system_energy(config, x.q, x.p) + bath + inter


def shadow_energy(config: ChainConfig, x: PhasePoints, dt: float) -> np.ndarray:
    """Quadratic invariant conserved exactly by velocity Verlet on this linear system.

    ``p^T (I - dt^2 A/4)^-1 p / 2 + x^T A x / 2`` with ``A`` the full stiffness matrix.
    """
    a = config.stiffness()
    pos = np.vstack([x.q, x.bath_q])
    mom = np.vstack([x.p, x.bath_p])
    kin = np.linalg.solve(np.eye(a.shape[0]) - dt**2 * a / 4, mom)
    return 0.5 * np.sum(mom * kin, axis=0) + 0.5 * np.sum(pos * (a @ pos), axis=0)


@dataclass
class TrajectoryEnsemble:
    """Recorded observables on ``times``; each record has shape (len(times), N)."""

    times: np.ndarray
    records: dict = field(repr=False)
    final: PhasePoints = field(repr=False)
    time_step: float
    seed: Optional[int]
    lam: float

    def __getitem__(self, name) -> np.ndarray:
        return self.records[name]


RECORDABLE = ("q", "p", "W", "energy", "total")


def integrate(config: ChainConfig, initial: PhasePoints, t_max: float, dt: float, record_every: int = 1,
              record: Sequence[str] = ("q", "p", "W", "energy"), method: str = "modal") -> TrajectoryEnsemble:
    """Velocity-Verlet integration of the full linear system.

    ``method="verlet"`` steps the equations of motion directly.  ``method="modal"``
    evaluates the same discrete Verlet flow in closed form in the normal modes of the
    coupled system: n steps of Verlet on a mode of frequency w rotate it by
    ``n theta`` with ``cos theta = 1 - dt^2 w^2/2`` at the modified frequency
    ``w sqrt(1 - dt^2 w^2/4)``.  Both agree to rounding; the modal form costs
    O(N K) per recorded time instead of per step.

    Raises :class:`UnstableStep` unless ``dt < 2/omega_max`` of the coupled system.
    """
    bad = set(record) - set(RECORDABLE)
    if bad:
        raise ValueError(f"cannot record {sorted(bad)}")
    w_max = config.max_frequency()
    if not dt < 2.0 / w_max:
        raise UnstableStep(f"dt={dt:.4g} violates the Verlet bound 2/omega_max={2 / w_max:.4g}")
    n_steps = int(round(t_max / dt))
    if method == "modal":
        return _integrate_modal(config, initial, n_steps, dt, record_every, record)
    if method != "verlet":
        raise ValueError(f"unknown method {method!r}")
    lam, w02 = config.lam, config.omega0**2
    x = initial.copy()
    eps = config.epsilons[:, None]

    def forces(x):
        wf = config.bath_force(x.bath_q)
        fq = -w02 * x.q - lam * wf
        fb = -config.apply_h(x.bath_q)
        if lam:
            fb -= lam * eps * x.q
        return fq, fb, wf

    times, rec = [], {name: [] for name in record}

    def snapshot(t, wf):
        times.append(t)
        for name in record:
            if name == "q":
                rec[name].append(x.q.copy())
            elif name == "p":
                rec[name].append(x.p.copy())
            elif name == "W":
                rec[name].append(wf.copy())
            elif name == "energy":
                rec[name].append(system_energy(config, x.q, x.p))
            else:
                rec[name].append(total_energy(config, x))

    fq, fb, wf = forces(x)
    snapshot(0.0, wf)
    half = 0.5 * dt
    for step in range(1, n_steps + 1):
        x.p += half * fq
        x.bath_p += half * fb
        x.q += dt * x.p
        x.bath_q += dt * x.bath_p
        fq, fb, wf = forces(x)
        x.p += half * fq
        x.bath_p += half * fb
        if step % record_every == 0 or step == n_steps:
            snapshot(step * dt, wf)
    return TrajectoryEnsemble(np.array(times), {k: np.array(v) for k, v in rec.items()}, x, dt,
                              initial.seed, config.lam)


def _integrate_modal(config, initial, n_steps, dt, record_every, record):
    w2, v = np.linalg.eigh(config.stiffness())
    w_mod = np.sqrt(w2 * (1 - dt**2 * w2 / 4))
    theta = np.arccos(1 - dt**2 * w2 / 2)
    pos = v.T @ np.vstack([initial.q, initial.bath_q])
    mom = v.T @ np.vstack([initial.p, initial.bath_p])
    row_q, row_w = v[0], config.epsilons @ v[1:]
    steps = sorted(set(range(0, n_steps + 1, record_every)) | {n_steps})
    rec = {name: [] for name in record}
    for n in steps:
        c, s = np.cos(n * theta), np.sin(n * theta)
        if "total" in record:
            rec["total"].append(total_energy(config, _state(v, pos, mom, c, s, w_mod, initial.seed)))
        q = (row_q * c) @ pos + (row_q * s / w_mod) @ mom
        p = (row_q * c) @ mom - (row_q * w_mod * s) @ pos
        for name in record:
            if name == "q":
                rec[name].append(q)
            elif name == "p":
                rec[name].append(p)
            elif name == "W":
                rec[name].append((row_w * c) @ pos + (row_w * s / w_mod) @ mom)
            elif name == "energy":
                rec[name].append(system_energy(config, q, p))
    c, s = np.cos(n_steps * theta), np.sin(n_steps * theta)
    final = _state(v, pos, mom, c, s, w_mod, initial.seed)
    return TrajectoryEnsemble(np.array(steps) * dt, {k: np.array(r) for k, r in rec.items()}, final, dt,
                              initial.seed, config.lam)


def _state(v, pos, mom, c, s, w_mod, seed) -> PhasePoints:
    c, s, w_mod = c[:, None], s[:, None], w_mod[:, None]
    x = v @ (c * pos + s / w_mod * mom)
    p = v @ (c * mom - w_mod * s * pos)
    return PhasePoints(x[0].copy(), p[0].copy(), x[1:], p[1:], seed)


@dataclass(frozen=True)
class Estimate:
    """Monte-Carlo means with standard errors on a grid of times or lags."""

    s: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int

    def to_csv(self, path, column: str = "s"):
        write_summary_csv(path, self.s, self.mean, self.stderr, column)


def empirical_correlation(config: ChainConfig, ensemble: TrajectoryEnsemble, s_grid=None, origin: float = 0.0
                          ) -> Estimate:
    """Monte-Carlo ``<W(t0) W(t0 + s)>`` from a free-chain ensemble.

    ``s_grid`` values must lie on the recorded time grid (default: all recorded lags).
    """
    if ensemble.lam != 0:
        raise DomainError("correlations are defined on the free chain (lam = 0)")
    w = ensemble["W"]
    t = ensemble.times
    i0 = _index(t, origin)
    lags = t[i0:] - t[i0] if s_grid is None else np.atleast_1d(np.asarray(s_grid, dtype=float))
    idx = np.array([_index(t, t[i0] + s) for s in lags])
    prod = w[i0][None, :] * w[idx]
    n = w.shape[1]
    return Estimate(lags, prod.mean(axis=1), prod.std(axis=1, ddof=1) / math.sqrt(n), n)


def _index(times, t) -> int:
    i = int(np.argmin(np.abs(times - t)))
    if not math.isclose(times[i], t, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError(f"time {t} is not on the recorded grid")
    return i


@dataclass(frozen=True)
class RelaxationResult:
    energy: Estimate
    rate: float
    rate_ci: tuple
    equilibrium: float
    amplitude: float

    @property
    def times(self) -> np.ndarray:
        return self.energy.s


def relaxation_experiment(config: ChainConfig, lam: float, t_max: float, dt: float = 0.05, n_samples: int = 1000,
                          seed: int = 0, q0: float = 0.0, p0: float = 5.0, record_every: int = 20,
                          t_fit: Optional[tuple] = None) -> RelaxationResult:
    """Ensemble-averaged oscillator energy from ``(q0, p0)`` in a thermal chain.

    The rate comes from a weighted fit of ``A exp(-rate t) + E_eq``; ``rate_ci``
    is the 95% interval from the fit covariance.
    """
    cfg = config.with_lambda(lam)
    if lam:
        cfg.stability_check()
    x0 = gibbs_sample(cfg, n_samples, seed, q0, p0)
    ens = integrate(cfg, x0, t_max, dt, record_every, record=("energy",))
    e = ens["energy"]
    est = Estimate(ens.times, e.mean(axis=1), e.std(axis=1, ddof=1) / math.sqrt(n_samples), n_samples)
    e0 = float(system_energy(cfg, q0, p0))
    if lam == 0:
        return RelaxationResult(est, 0.0, (0.0, 0.0), e0, 0.0)
    lo, hi = t_fit if t_fit is not None else (0.0, t_max)
    sel = (est.s >= lo) & (est.s <= hi)
    sigma = np.maximum(est.stderr[sel], 1e-12)
    excess = est.mean[sel] - 1 / cfg.beta
    early = excess > 0.2 * excess[0]
    if excess[0] > 0 and early.sum() >= 2:
        slope = np.polyfit(est.s[sel][early], np.log(excess[early]), 1)[0]
        rate0 = max(-slope, 1e-12)
    else:
        rate0 = 1.0 / max(t_max, 1e-12)
    guess = (e0 - 1 / cfg.beta, rate0, 1 / cfg.beta)
    (amp, rate, eq), cov = curve_fit(lambda t, a, r, c: a * np.exp(-r * t) + c, est.s[sel], est.mean[sel],
                                     p0=guess, sigma=sigma, absolute_sigma=True, maxfev=20000)
    half = 1.96 * math.sqrt(cov[1, 1])
    return RelaxationResult(est, float(rate), (rate - half, rate + half), float(eq), float(amp))


def write_summary_csv(path, times, mean, stderr, column: str = "time"):
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow([column, "mean", "stderr"])
        for row in zip(times, mean, stderr):
            out.writerow([repr(float(v)) for v in row])
