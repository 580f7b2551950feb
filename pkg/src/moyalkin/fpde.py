"""Phase-space Fokker-Planck operators with affine drift and constant diffusion.

Every operator has the form

    df/dt = d_q(A_q f) + d_p(A_p f) + Dqq f_qq + 2 Dqp f_qp + Dpp f_pp,
    (A_q, A_p) = M (q, p),

so the moments obey ``d<x>/dt = -M <x>`` and ``dS/dt = -M S - S M^T + 2 D``.
The Hamiltonian is ``H = p^2/2 + omega0^2 q^2/2`` (unit mass).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import linalg
from scipy.ndimage import correlate1d

from .bath import BathSpec, frequency_shifts
from .errors import BoundaryLeak, CFLViolation, GridUnderResolved, MissingBathQuantity, NonHurwitzDrift
from .grid import PhaseGrid, PhaseSpaceField
from .lindblad import LindbladCoefficients, coefficients_from_model


class Variant(str, enum.Enum):
    CLASSICAL = "CLASSICAL"
    GME = "GME"
    GENERAL = "GENERAL"
    QUANTUM_PS = "QUANTUM_PS"


@dataclass(frozen=True)
class FPOperator:
    drift: np.ndarray
    diffusion: np.ndarray
    renorm_factor: float = 1.0
    variant: Variant = Variant.GENERAL
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = np.array(self.drift, dtype=float)
        d = np.array(self.diffusion, dtype=float)
        if m.shape != (2, 2) or d.shape != (2, 2):
            raise ValueError("drift and diffusion must be 2x2")
        if d[0, 1] != d[1, 0]:
            raise ValueError("diffusion matrix must be symmetric")
        m.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "drift", m)
        object.__setattr__(self, "diffusion", d)

    def drift_fields(self, q, p):
        """``(A_q, A_p)`` evaluated at ``(q, p)``."""
        m = self.drift
        return m[0, 0] * q + m[0, 1] * p, m[1, 0] * q + m[1, 1] * p

    @property
    def d_qq(self) -> float:
        return float(self.diffusion[0, 0])

    @property
    def d_qp(self) -> float:
        return float(self.diffusion[0, 1])

    @property
    def d_pp(self) -> float:
        return float(self.diffusion[1, 1])

    def diffusion_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.diffusion)

    def is_psd(self, tol: float = 0.0) -> bool:
        return bool(self.diffusion_eigenvalues()[0] >= -tol)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "drift": self.drift.tolist(),
            "diffusion": self.diffusion.tolist(),
            "renorm_factor": self.renorm_factor,
            "params": {k: v for k, v in self.params.items() if isinstance(v, (int, float, str, bool))},
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


ZERO = FPOperator(np.zeros((2, 2)), np.zeros((2, 2)))


# ------------------------------------------------------------------ build

def _require(params, *keys):
    missing = [k for k in keys if k not in params]
    if missing:
        raise MissingBathQuantity(f"missing parameters: {', '.join(missing)}")
    return [params[k] for k in keys]


def _classical_bath(params, need_chi=False):
    lam, omega0, beta = _require(params, "lam", "omega0", "beta")
    spec: Optional[BathSpec] = params.get("spec")
    if spec is not None:
        u2 = spec.weight(omega0)
        factor = spec.rate_factor
        if "delta" in params and (not need_chi or "chi" in params):
            delta, chi = params["delta"], params.get("chi")
        elif lam == 0:
            delta, chi = 0.0, 0.0
        else:
            delta, chi = frequency_shifts(spec, omega0)
    else:
        u2, delta = _require(params, "u2", "delta")
        chi = params.get("chi")
        factor = 0.25 if params.get("one_sided", False) else 1.0
    if need_chi and chi is None:
        raise MissingBathQuantity("the GME operator needs chi(omega0)")
    return lam, omega0, beta, u2, delta, chi, factor


def _general_from_coeffs(c: LindbladCoefficients, a: float, variant: Variant, extra=None) -> FPOperator:
    w0, s = c.omega0, c.hamiltonian_scale
    m = np.array([[c.lam - c.kappa, -s], [s * w0**2, c.lam + c.kappa]])
    # Weyl-ordered diffusion in (q, p) order
    d = np.array([[c.d2, c.d], [c.d, c.d1]])
    if a:
        # ordering shift -(a hbar/4)(M C + C M^T), C = diag(1/omega0, omega0)
        cmat = np.diag([1 / w0, w0])
        shift = -(a * c.hbar / 4) * (m @ cmat + cmat @ m.T)
        d = d + shift
        d[0, 1] = d[1, 0] = 0.5 * (d[0, 1] + d[1, 0])
    params = {"a": a, "hbar": c.hbar, "omega0": w0, "lam_friction": c.lam, "kappa": c.kappa,
              "d1": c.d1, "d2": c.d2, "d": c.d}
    params.update(extra or {})
    return FPOperator(m, d, renorm_factor=s, variant=variant, params=params)


def build(variant, params: Mapping) -> FPOperator:
    """Construct a phase-space operator.

    CLASSICAL / GME need ``lam, omega0, beta`` and either ``spec`` (a classical
    :class:`BathSpec`) or the bath numbers ``u2, delta`` (and ``chi`` for GME).
    GENERAL takes ``coeffs`` (:class:`LindbladCoefficients`) or the numbers
    ``d1, d2, d, lam_friction, kappa, omega0, hbar``, plus the ordering ``a``.
    QUANTUM_PS takes a quantum ``spec`` with ``lam, omega0, beta, hbar, a``;
    ``hbar = 0`` gives the classical limit.
    """
    variant = Variant(variant)
    params = dict(params)
    if variant is Variant.CLASSICAL:
        lam, w0, beta, u2, delta, _, factor = _classical_bath(params)
        r = 1 - lam**2 * delta / w0
        d_pp = lam**2 * math.pi / (2 * beta) * u2 / w0**2 * factor
        gam = beta * d_pp
        m = np.array([[gam, -r], [r * w0**2, gam]])
        d = np.diag([d_pp / w0**2, d_pp])
        return FPOperator(m, d, r, variant, {"lam": lam, "omega0": w0, "beta": beta, "u2": u2, "delta": delta,
                                             "rate_factor": factor})
    if variant is Variant.GME:
        lam, w0, beta, u2, delta, chi, _ = _classical_bath(params, need_chi=True)
        r = 1 - lam**2 * delta / w0
        d_pp = lam**2 * math.pi * u2 / (beta * w0**2)
        d_qp = lam**2 * chi / (2 * w0)
        m = np.array([[0.0, -1.0], [r * w0**2, 2 * math.pi * lam**2 * u2 / w0**2]])
        d = np.array([[0.0, d_qp], [d_qp, d_pp]])
        return FPOperator(m, d, r, variant, {"lam": lam, "omega0": w0, "beta": beta, "u2": u2, "delta": delta,
                                             "chi": chi})
    if variant is Variant.GENERAL:
        a = params.get("a", 0.0)
        if "coeffs" in params:
            c = params["coeffs"]
        else:
            d1, d2, d, lam_f, kappa, w0, hbar = _require(params, "d1", "d2", "d", "lam_friction", "kappa",
                                                         "omega0", "hbar")
            c = LindbladCoefficients(d1, d2, d, lam_f, kappa, w0, hbar, params.get("scale", 1.0))
        return _general_from_coeffs(c, a, variant)
    spec, lam, w0, beta, hbar = _require(params, "spec", "lam", "omega0", "beta", "hbar")
    a = params.get("a", 0.0)
    c = coefficients_from_model(spec, lam, w0, beta, hbar)
    return _general_from_coeffs(c, a, variant, {"lam": lam, "beta": beta})


# ------------------------------------------------------------ MB state

def mb_distribution(beta: float, omega0: float, grid: PhaseGrid, min_sd: float = 6.0) -> PhaseSpaceField:
    """Normalized ``exp(-beta H)`` on the grid."""
    sq, sp = 1 / (math.sqrt(beta) * omega0), 1 / math.sqrt(beta)
    reach_q = min(-grid.q_min, grid.q_max) / sq
    reach_p = min(-grid.p_min, grid.p_max) / sp
    if min(reach_q, reach_p) < min_sd:
        raise GridUnderResolved(f"grid covers only {min(reach_q, reach_p):.2f} thermal widths")
    qq, pp = grid.mesh()
    f = np.exp(-beta * (pp**2 + omega0**2 * qq**2) / 2)
    return PhaseSpaceField(grid, f / (f.sum() * grid.cell))


def gaussian_field(grid: PhaseGrid, mean, cov) -> PhaseSpaceField:
    """Normalized bivariate Gaussian with ``mean`` and covariance ``cov`` in (q, p)."""
    qq, pp = grid.mesh()
    x = np.stack([qq - mean[0], pp - mean[1]])
    inv = np.linalg.inv(cov)
    quad = inv[0, 0] * x[0] ** 2 + 2 * inv[0, 1] * x[0] * x[1] + inv[1, 1] * x[1] ** 2
    f = np.exp(-quad / 2) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))
    return PhaseSpaceField(grid, f)


# -------------------------------------------------------------- stencils

# central-difference weights for orders 2, 4, 6 (first and second derivatives)
_D1 = {
    2: np.array([-1, 0, 1]) / 2,
    4: np.array([1, -8, 0, 8, -1]) / 12,
    6: np.array([-1, 9, -45, 0, 45, -9, 1]) / 60,
}
_D2 = {
    2: np.array([1, -2, 1]),
    4: np.array([-1, 16, -30, 16, -1]) / 12,
    6: np.array([2, -27, 270, -490, 270, -27, 2]) / 180,
}


def _symbol_max(order):
    th = np.linspace(0, np.pi, 2001)
    m = np.arange(len(_D1[order])) - len(_D1[order]) // 2
    s1 = np.abs(np.sin(np.outer(th, m)) @ _D1[order]).max()
    s2 = np.abs(np.cos(np.outer(th, m)) @ _D2[order]).max()
    return s1, s2


_SYMBOLS = {k: _symbol_max(k) for k in _D1}
# RK4 reaches 2.78 on the negative real axis and 2.83 on the imaginary axis
_RK4_REAL, _RK4_IMAG = 2.78, 2.83


class Discretization:
    """Central-difference realization of an operator on a grid (zero padding)."""

    def __init__(self, op: FPOperator, grid: PhaseGrid, order: int = 2):
        if order not in _D1:
            raise ValueError(f"order must be one of {sorted(_D1)}")
        self.op, self.grid, self.order = op, grid, order
        qq, pp = grid.mesh()
        self.a_q, self.a_p = op.drift_fields(qq, pp)
        self.div = float(op.drift[0, 0] + op.drift[1, 1])
        self.w1q = _D1[order] / grid.dq
        self.w1p = _D1[order] / grid.dp
        # diffusion coefficients folded into the second-derivative weights
        self.w2q = op.d_qq * _D2[order] / grid.dq**2
        self.w2p = op.d_pp * _D2[order] / grid.dp**2
        self.wqp = 2 * op.d_qp * self.w1p
        self._buf = np.empty((grid.n_q, grid.n_p))
        self._buf2 = np.empty((grid.n_q, grid.n_p))

    def _d(self, f, w, axis, output):
        # correlate1d with origin 0 centres the odd-length stencil; mode=constant pads with zeros
        return correlate1d(f, w, axis=axis, output=output, mode="constant", cval=0.0)

    def apply(self, f: np.ndarray) -> np.ndarray:
        op, buf = self.op, self._buf
        out = np.multiply(f, self.div)
        self._d(f, self.w1q, 0, buf)
        if op.d_qp:
            out += self._d(buf, self.wqp, 1, self._buf2)
        buf *= self.a_q
        out += buf
        self._d(f, self.w1p, 1, buf)
        buf *= self.a_p
        out += buf
        if op.d_qq:
            out += self._d(f, self.w2q, 0, buf)
        if op.d_pp:
            out += self._d(f, self.w2p, 1, buf)
        return out

    def rates(self):
        """Estimated (real, imaginary) extents of the discrete operator spectrum."""
        s1, s2 = _SYMBOLS[self.order]
        g, op = self.grid, self.op
        re = s2 * (abs(op.d_qq) / g.dq**2 + abs(op.d_pp) / g.dp**2) + 2 * abs(op.d_qp) * s1**2 / (g.dq * g.dp)
        re += abs(self.div)
        im = s1 * (np.abs(self.a_q).max() / g.dq + np.abs(self.a_p).max() / g.dp)
        return re, im

    def max_dt(self, safety: float = 0.9) -> float:
        re, im = self.rates()
        return safety / (re / _RK4_REAL + im / _RK4_IMAG)


def stationarity_residual(op: FPOperator, f: PhaseSpaceField, order: int = 2) -> float:
    """``||L f||_1 / ||f||_1`` with the solver's stencils."""
    v = f.values
    norm = np.abs(v).sum()
    if norm == 0:
        return 0.0
    return float(np.abs(Discretization(op, f.grid, order).apply(v)).sum() / norm)


@dataclass
class FieldTrajectory:
    times: np.ndarray
    fields: list = field(repr=False)
    mass: np.ndarray = None
    min_ratio: np.ndarray = None

    @property
    def final(self) -> PhaseSpaceField:
        return self.fields[-1]


def evolve_field(op: FPOperator, f0: PhaseSpaceField, t_max: float, dt: float, order: int = 2,
                 every: Optional[int] = None, observer: Optional[Callable] = None,
                 leak_tol: float = 1e-6) -> FieldTrajectory:
    """RK4 time stepping of the discretized operator.

    ``every`` keeps every k-th step (default: only the endpoints); ``observer(t, values)``
    sees every step.  Raises :class:`CFLViolation` if ``dt`` is outside the RK4
    stability estimate and :class:`BoundaryLeak` if mass drifts by more than ``leak_tol``.
    """
    disc = Discretization(op, f0.grid, order)
    limit = disc.max_dt(safety=1.0)
    if dt > limit:
        raise CFLViolation(f"dt={dt:.4g} exceeds the RK4 stability estimate {limit:.4g}")
    n_steps = int(round(t_max / dt))
    if not math.isclose(n_steps * dt, t_max, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("t_max must be a multiple of dt")
    cell = f0.grid.cell
    f = np.array(f0.values, dtype=float)
    m0 = f.sum() * cell
    times, fields, mass, mins = [0.0], [f0], [m0], [f.min() / max(f.max(), 1e-300)]
    if observer:
        observer(0.0, f)
    for k in range(1, n_steps + 1):
        k1 = disc.apply(f)
        k2 = disc.apply(f + 0.5 * dt * k1)
        k3 = disc.apply(f + 0.5 * dt * k2)
        k4 = disc.apply(f + dt * k3)
        f = f + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if observer:
            observer(k * dt, f)
        last = k == n_steps
        if last or (every and k % every == 0):
            m = f.sum() * cell
            if abs(m - m0) > leak_tol * max(abs(m0), 1e-300):
                raise BoundaryLeak(f"mass changed from {m0:.12g} to {m:.12g} at t={k * dt:.4g}")
            times.append(k * dt)
            fields.append(PhaseSpaceField(f0.grid, f))
            mass.append(m)
            mins.append(f.min() / max(f.max(), 1e-300))
    return FieldTrajectory(np.array(times), fields, np.array(mass), np.array(mins))


def h_functional(f: PhaseSpaceField, ref: PhaseSpaceField) -> float:
    """``int f ln(f/ref)`` over cells where both are positive."""
    v, r = f.values, ref.values
    ok = (v > 0) & (r > 0)
    return float(np.sum(v[ok] * np.log(v[ok] / r[ok])) * f.grid.cell)


# ---------------------------------------------------------------- moments

@dataclass(frozen=True)
class Moments:
    first: np.ndarray  # d<x>/dt = first @ <x>
    lyapunov_a: np.ndarray  # dS/dt = A S + S A^T + 2D
    diffusion: np.ndarray
    covariance: np.ndarray  # stationary S

    def mean(self, x0, t):
        return linalg.expm(self.first * t) @ np.asarray(x0, dtype=float)

    def cov(self, s0, t):
        """Covariance at time ``t`` from ``s0``."""
        e = linalg.expm(self.first * t)
        return self.covariance + e @ (np.asarray(s0, dtype=float) - self.covariance) @ e.T


def lyapunov_2x2(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve ``A S + S A^T + Q = 0`` for symmetric 2x2 ``S`` by a direct 3x3 solve."""
    (a11, a12), (a21, a22) = a
    # unknowns (s11, s12, s22)
    mat = np.array([
        [2 * a11, 2 * a12, 0.0],
        [a21, a11 + a22, a12],
        [0.0, 2 * a21, 2 * a22],
    ])
    rhs = -np.array([q[0, 0], q[0, 1], q[1, 1]])
    s11, s12, s22 = np.linalg.solve(mat, rhs)
    return np.array([[s11, s12], [s12, s22]])


def moments(op: FPOperator) -> Moments:
    a = -op.drift
    ev = np.linalg.eigvals(a)
    if np.max(ev.real) >= 0:
        raise NonHurwitzDrift(f"drift eigenvalues {ev} are not all in the left half plane")
    cov = lyapunov_2x2(a, 2 * op.diffusion)
    return Moments(a, a, op.diffusion, cov)


# ------------------------------------------------------- coherent scaling

def _scaling(hbar: float, omega0: float) -> np.ndarray:
    if not hbar > 0:
        raise ValueError("coherent rescaling needs hbar > 0")
    return np.diag([math.sqrt(omega0 / (2 * hbar)), 1 / math.sqrt(2 * hbar * omega0)])


def coherent_rescale(obj, hbar: float, omega0: float, inverse: bool = False):
    """Express an operator or field in ``x1 = sqrt(omega0/2hbar) q``, ``x2 = p/sqrt(2 hbar omega0)``.

    ``inverse=True`` maps back.  Fields are rescaled so their integral is preserved.
    """
    s = _scaling(hbar, omega0)
    if inverse:
        s = np.linalg.inv(s)
    if isinstance(obj, FPOperator):
        si = np.linalg.inv(s)
        params = dict(obj.params, coordinates="q,p" if inverse else "x1,x2")
        return FPOperator(s @ obj.drift @ si, s @ obj.diffusion @ s.T, obj.renorm_factor, obj.variant, params)
    if isinstance(obj, PhaseSpaceField):
        g = obj.grid
        sq, sp = s[0, 0], s[1, 1]
        new = PhaseGrid(g.q_min * sq, g.q_max * sq, g.p_min * sp, g.p_max * sp, g.n_q, g.n_p)
        return PhaseSpaceField(new, obj.values / (sq * sp))
    raise TypeError(f"cannot rescale {type(obj).__name__}")
