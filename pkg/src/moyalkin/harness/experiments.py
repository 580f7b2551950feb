"""Experiment pipelines.

Each kind maps to a function ``ExperimentConfig -> ExperimentResult``;
:func:`run_experiment` runs one and writes its tables and manifest.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import RectBivariateSpline

from ..bath import bath_correlations, frequency_shifts, quantum_spectra, stability_check, time_correlations
from ..chain import ChainConfig, empirical_correlation, gibbs_sample, integrate, relaxation_experiment
from ..errors import ConfigError
from ..fock import (DensityMatrix, FockBasis, coherent_state, dims_for, fock_state, number_operator,
                    thermal_state)
from ..fpde import (Discretization, build, evolve_field, gaussian_field, mb_distribution, moments,
                    stationarity_residual)
from ..grid import PhaseGrid
from ..lindblad import (RK4_LIMIT, coefficients_from_model, evolve, general_generator, model_rates,
                        oscillator_generator, redfield_generator, relative_entropy, secular_average)
from ..wigner import OrderingKernel, displacement_matrix, generalized_wigner, inverse_transform
from .baths import bath_kind, make_bath
from .config import ExperimentConfig, _as_list
from .output import ExperimentResult, Table, write_outputs

# first-order convergence window for error ratios under hbar halving
RATIO_WINDOW = (1.6, 2.4)


def _spec(cfg: ExperimentConfig, need: Optional[str] = None):
    if not cfg.bath:
        raise ConfigError(f"kind {cfg.kind!r} needs a bath")
    if need and bath_kind(cfg.bath) != need:
        raise ConfigError(f"kind {cfg.kind!r} needs a {need} bath, got {cfg.bath['id']!r}")
    return make_bath(cfg.bath, cfg.physics["beta"], cfg.resolve)


def _steps(t_max: float, dt_max: float) -> float:
    """Largest ``dt <= dt_max`` dividing ``t_max``."""
    return t_max / math.ceil(t_max / dt_max - 1e-12)


# ------------------------------------------------------------ bath-corr

def bath_corr(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.kind)
    spec = _spec(cfg)
    ph, nu = cfg.physics, cfg.numerics
    w0 = ph["omega0"]
    if spec.kind == "classical":
        table = Table(("s", "h", "g"))
        for s in np.linspace(0.0, nu["s_max"], nu["n_s"]):
            table.add(s, *time_correlations(spec, s))
        h = table.column("h")
        worst = float(np.abs(h[1:]).max() / h[0]) if h[0] > 0 else math.inf
        res.check("h_bounded_by_h0", worst <= 1 + 1e-9, worst, 1.0)
        bc = bath_correlations(spec, w0)
        res.check("h_tilde_nonnegative", bc.h_tilde >= 0, bc.h_tilde, 0.0)
        res.tables["correlations"] = table
    else:
        hb = ph["hbar"]
        lo, hi = spec.domain
        table = Table(("omega", "h_minus", "h_plus", "n"))
        worst = 0.0
        for w in np.linspace(lo, min(hi, nu["w_max"]), nu["n_w"] + 2)[1:-1]:
            qs = quantum_spectra(spec, hb, w)
            table.add(w, qs.h_minus, qs.h_plus, qs.n)
            if qs.h_plus > 0 and hb > 0:
                worst = max(worst, abs(qs.h_minus / qs.h_plus * math.exp(-spec.beta * hb * w) - 1))
        res.check("detailed_balance", worst <= 1e-10, worst, 1e-10)
        res.tables["spectra"] = table
        res.derived["at_omega0"] = {**quantum_spectra(spec, hb, w0)._asdict(),
                                    "delta_shift": frequency_shifts(spec, w0).delta}
        return res
    res.derived["at_omega0"] = asdict(bc)
    return res


# ------------------------------------------------------------ stability

def stability(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.kind)
    ph = cfg.physics
    ok, margin = stability_check(_spec(cfg), ph["lam"], ph["omega0"])
    res.derived.update(ok=ok, margin=margin)
    res.check("ok", ok, margin, 0.0)
    return res


# ------------------------------------------------------ evolve-lindblad

def _generator(cfg, basis, spec):
    ph, name = cfg.physics, cfg.numerics["generator"]
    lam = ph["lam"]
    if name == "oscillator":
        return oscillator_generator(basis, spec, lam)
    if name == "general":
        return general_generator(basis, coefficients_from_model(spec, lam, basis.omega0, spec.beta, basis.hbar))
    if name == "redfield":
        return redfield_generator(basis, spec, lam)
    if name == "secular":
        return secular_average(redfield_generator(basis, spec, lam))
    raise ConfigError(f"unknown generator {name!r}; use oscillator, general, redfield or secular")


def _initial_state(cfg, basis):
    nu = cfg.numerics
    name = nu["initial"]
    if name == "fock":
        if nu["n0"] >= basis.dim:
            raise ConfigError("n0 must be below dim")
        return fock_state(basis, nu["n0"])
    if name == "coherent":
        return coherent_state(basis, nu["alpha"])
    if name == "thermal":
        return thermal_state(basis, cfg.physics["beta"])
    raise ConfigError(f"unknown initial state {name!r}; use fock, coherent or thermal")


def evolve_lindblad(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.kind)
    ph, nu = cfg.physics, cfg.numerics
    spec = _spec(cfg, "quantum")
    basis = FockBasis(nu["dim"], ph["hbar"], ph["omega0"])
    L = _generator(cfg, basis, spec)
    rho0 = _initial_state(cfg, basis)
    bound = L.norm_bound()
    dt = nu["dt"] or _steps(nu["t_max"], 0.5 * RK4_LIMIT / bound)
    # the truncated Gibbs state is the exact stationary state of the oscillator generator
    ref = thermal_state(basis, spec.beta, tail_tol=1.0)
    num = number_operator(basis)
    rows = []

    def observe(t, x):
        ev = np.linalg.eigvalsh(0.5 * (x + x.conj().T))
        rho = DensityMatrix(basis, x)
        rows.append((t, float(np.trace(x).real), float(abs(np.trace(x).imag)),
                     float(np.abs(x - x.conj().T).max()), float(ev[0]), float(np.real(np.trace(num @ x))),
                     relative_entropy(rho, ref)))

    evolve(L, rho0, nu["t_max"], dt, every=10**9, observer=observe)
    table = Table(("t", "trace", "trace_imag", "hermiticity", "min_eig", "mean_n", "rel_entropy"))
    for i, row in enumerate(rows):
        if i % nu["every"] == 0 or i == len(rows) - 1:
            table.add(*row)
    res.tables["trajectory"] = table
    arr = np.array(rows)
    trace_err = float(np.max(np.hypot(arr[:, 1] - 1.0, arr[:, 2])))
    herm = float(arr[:, 3].max())
    min_eig = float(arr[:, 4].min())
    rise = float(np.max(np.diff(arr[:, 6]))) if len(arr) > 1 else 0.0
    res.check("trace_preserved", trace_err <= 1e-9, trace_err, 1e-9)
    res.check("hermitian", herm <= 1e-12, herm, 1e-12)
    if nu["generator"] == "redfield":
        # second-order non-secular dynamics need not be positive or contractive
        res.reported.update(min_eigenvalue=min_eig, max_entropy_increase=rise)
    else:
        res.check("positive", min_eig >= -1e-9, min_eig, -1e-9)
        res.check("entropy_nonincreasing", rise <= 1e-10, rise, 1e-10)
    res.derived.update(dim=basis.dim, dt=dt, steps=len(rows) - 1, norm_bound=bound,
                       rates=asdict(model_rates(spec, ph["lam"], basis.omega0, basis.hbar)))
    return res


# ------------------------------------------------------------ evolve-fp

def _moment_ode(op, x0, s0, times):
    """Mean and covariance of the linear FP dynamics by direct integration."""
    a, dd = -op.drift, op.diffusion

    def rhs(_, y):
        m, s = y[:2], y[2:].reshape(2, 2)
        return np.concatenate([a @ m, (a @ s + s @ a.T + 2 * dd).ravel()])

    y0 = np.concatenate([x0, np.asarray(s0, dtype=float).ravel()])
    sol = solve_ivp(rhs, (0.0, times[-1]), y0, t_eval=times, rtol=1e-11, atol=1e-13, method="DOP853")
    return sol.y.T


def _field_moments(f):
    mass = f.integral()
    mq, mp = f.moment(1, 0) / mass, f.moment(0, 1) / mass
    vq = f.moment(2, 0) / mass - mq**2
    cqp = f.moment(1, 1) / mass - mq * mp
    vp = f.moment(0, 2) / mass - mp**2
    return mass, mq, mp, vq, cqp, vp


def _variant_operator(cfg, variant, lam=None, hbar=None, a=None):
    ph = cfg.physics
    lam = ph["lam"] if lam is None else lam
    if variant in ("CLASSICAL", "GME"):
        spec = _spec(cfg, "classical")
        return build(variant, {"spec": spec, "lam": lam, "omega0": ph["omega0"], "beta": ph["beta"]})
    if variant == "QUANTUM_PS":
        spec = _spec(cfg, "quantum")
        return build(variant, {"spec": spec, "lam": lam, "omega0": ph["omega0"], "beta": ph["beta"],
                               "hbar": ph["hbar"] if hbar is None else hbar, "a": ph["a"] if a is None else a})
    raise ConfigError(f"unknown variant {variant!r}; use CLASSICAL, GME or QUANTUM_PS")


def evolve_fp(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.kind)
    nu = cfg.numerics
    op = _variant_operator(cfg, nu["variant"])
    grid = PhaseGrid.symmetric(nu["half_width"], nu["half_width"], nu["n_grid"])
    x0 = np.array([nu["mean_q"], nu["mean_p"]])
    s0 = np.array([[nu["var_q"], nu["cov_qp"]], [nu["cov_qp"], nu["var_p"]]])
    f0 = gaussian_field(grid, x0, s0)
    disc = Discretization(op, grid, nu["order"])
    t_max = nu["t_max"]
    n_rec = nu["n_records"]
    dt = _steps(t_max / n_rec, nu["safety"] * disc.max_dt())
    every = int(round(t_max / n_rec / dt))
    traj = evolve_field(op, f0, t_max, dt, order=nu["order"], every=every)
    pred = _moment_ode(op, x0, s0, traj.times)
    table = Table(("t", "mass", "mean_q", "mean_p", "var_q", "cov_qp", "var_p", "min_ratio",
                   "ode_mean_q", "ode_mean_p", "ode_var_q", "ode_cov_qp", "ode_var_p"))
    worst = 0.0
    for t, f, mn, y in zip(traj.times, traj.fields, traj.min_ratio, pred):
        m = _field_moments(f)
        ode = (y[0], y[1], y[2], y[3], y[5])
        worst = max(worst, max(abs(u - v) for u, v in zip(m[1:], ode)))
        table.add(t, *m, mn, *ode)
    res.tables["moments"] = table
    drift = float(abs(traj.mass[-1] / traj.mass[0] - 1))
    res.check("mass_conserved", drift <= 1e-6, drift, 1e-6)
    res.check("moments_match_ode", worst <= nu["moment_tol"], worst, nu["moment_tol"])
    res.reported["min_ratio"] = float(traj.min_ratio.min())
    res.derived.update(operator=op.to_dict(), dt=dt, steps=int(round(t_max / dt)))
    if nu["save_field"]:
        res.tables["field"] = _field_table(traj.final)
    return res


def _field_table(f) -> Table:
    qq, pp = f.grid.mesh()
    t = Table(("q", "p", "value"))
    t.rows = list(zip(qq.ravel().tolist(), pp.ravel().tolist(), f.values.ravel().tolist()))
    return t


# --------------------------------------------------------------- wigner

def _closed_form(grid, hbar, w0, beta, a, state):
    """Gaussian field of the vacuum or a thermal state; ``None`` if it is singular."""
    c = 1.0 / math.tanh(beta * hbar * w0 / 2) if state == "thermal" else 1.0
    vq, vp = hbar / (2 * w0) * (c - a), hbar * w0 / 2 * (c - a)
    if vq <= 0:
        return None
    qq, pp = grid.mesh()
    return np.exp(-qq**2 / (2 * vq) - pp**2 / (2 * vp)) / (2 * math.pi * math.sqrt(vq * vp))


def wigner(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.kind)
    ph, nu = cfg.physics, cfg.numerics
    hb, w0 = ph["hbar"], ph["omega0"]
    basis = FockBasis(nu["dim"], hb, w0)
    state = nu["state"]
    if state == "thermal":
        rho = thermal_state(basis, ph["beta"])
    elif state in ("fock", "vacuum"):
        rho = fock_state(basis, 0 if state == "vacuum" else nu["n0"])
    else:
        raise ConfigError(f"unknown state {state!r}; use thermal, vacuum or fock")
    grid = PhaseGrid(-nu["q_half"], nu["q_half"], -nu["p_half"], nu["p_half"], nu["n_q"], nu["n_p"])
    table = Table(("a", "integral", "min_value", "max_value", "round_trip", "closed_form"))
    for a in _as_list(ph["a"]):
        k = OrderingKernel(a, w0, hb)
        f = generalized_wigner(rho, k, grid)
        back = inverse_transform(f, k, basis)
        rt = float(np.abs(back.entries - rho.entries).max())
        norm = abs(f.integral() - 1)
        tol = 1e-10 if a == 0 else 1e-9
        res.check(f"normalized_a{a:+g}", norm <= 1e-8, norm, 1e-8)
        res.check(f"round_trip_a{a:+g}", rt <= tol, rt, tol)
        exact = None if state == "fock" else _closed_form(grid, hb, w0, ph["beta"], a, state)
        cf = math.nan
        if exact is not None:
            cf = float(np.abs(f.values - exact).max() / exact.max())
            res.check(f"closed_form_a{a:+g}", cf <= 1e-8, cf, 1e-8)
        table.add(a, f.integral(), float(f.values.min()), float(f.values.max()), rt, cf)
        if nu["save_field"]:
            res.tables[f"field_a{a:+g}"] = _field_table(f)
    res.tables["checks"] = table
    return res


# -------------------------------------------------------- hbar sweeps

@dataclass(frozen=True)
class SweepSetup:
    """Everything that determines one phase-space run apart from ``(hbar, a, n)``."""

    bath: tuple
    beta: float
    omega0: float
    lam: float
    half_width: float
    order: int
    safety: float
    periods: float
    mean_q: float
    mean_p: float
    variance: float

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "SweepSetup":
        _spec(cfg, "quantum")
        bath = dict(cfg.bath)
        if bath.get("table"):
            bath["table"] = str(cfg.resolve(bath["table"]))
        ph, nu = cfg.physics, cfg.numerics
        return cls(tuple(sorted(bath.items())), ph["beta"], ph["omega0"], ph["lam"], nu["half_width"],
                   nu["order"], nu["safety"], nu["periods"], nu["mean_q"], nu["mean_p"], nu["variance"])

    @property
    def t_max(self) -> float:
        return self.periods * 2 * math.pi / self.omega0

    def spec(self):
        return make_bath(dict(self.bath), self.beta)

    def grid(self, n: int) -> PhaseGrid:
        return PhaseGrid.symmetric(self.half_width, self.half_width, n)

    def initial(self, grid: PhaseGrid):
        """Gaussian with covariance ``diag(v/omega0, v omega0)``."""
        cov = np.diag([self.variance / self.omega0, self.variance * self.omega0])
        return gaussian_field(grid, (self.mean_q, self.mean_p), cov)

    def operator(self, hbar: float, a: float):
        return build("QUANTUM_PS", {"spec": self.spec(), "lam": self.lam, "omega0": self.omega0,
                                    "beta": self.beta, "hbar": hbar, "a": a})


@lru_cache(maxsize=64)
def solve_sweep_point(setup: SweepSetup, hbar: float, a: float, n: int) -> np.ndarray:
    """Field at ``t_max`` on an ``n x n`` grid (cached: sweeps share runs)."""
    op = setup.operator(hbar, a)
    grid = setup.grid(n)
    dt = _steps(setup.t_max, setup.safety * Discretization(op, grid, setup.order).max_dt())
    return evolve_field(op, setup.initial(grid), setup.t_max, dt, order=setup.order).final.values


def _solve(setup, hbar, a, n):
    # at hbar = 0 the operator is a-independent (checked separately), so one run serves all a
    return solve_sweep_point(setup, float(hbar), 0.0 if hbar == 0 else float(a), int(n))


def _distance(f, g, grid):
    d = np.abs(f - g)
    return float(d.max()), float(d.sum() * grid.cell)


def grid_error(setup: SweepSetup, hbar: float, a: float, n: int) -> float:
    """Sup-norm difference between the ``n`` and ``n/2`` runs at the coarse cell centres.

    This estimates the error of the coarse run, an upper bound for the fine one.
    """
    fine, coarse = _solve(setup, hbar, a, n), _solve(setup, hbar, a, n // 2)
    gf, gc = setup.grid(n), setup.grid(n // 2)
    interp = RectBivariateSpline(gf.q, gf.p, fine, kx=5, ky=5)(gc.q, gc.p)
    return float(np.abs(interp - coarse).max())


def _hbar0_identical(setup, a_values):
    ops = [setup.operator(0.0, a) for a in sorted(set(a_values) | {-1.0, 0.0, 1.0})]
    return all(np.array_equal(o.drift, ops[0].drift) and np.array_equal(o.diffusion, ops[0].diffusion)
               for o in ops[1:]), ops[0]


def _ratio_check(res, name, values):
    ratios = [x / y for x, y in zip(values, values[1:])]
    ok = all(RATIO_WINDOW[0] <= r <= RATIO_WINDOW[1] for r in ratios)
    res.check(name, ok, ratios, list(RATIO_WINDOW))
    return ratios


def fock_route(setup: SweepSetup, hbar: float, n: int, tail: float = 1e-12):
    """Weyl field at ``t_max`` from the Fock-space master equation.

    The initial state is the displaced thermal state whose Weyl field is the
    sweep's Gaussian; the dimension is chosen so the occupation tail of both
    the initial state and the bath equilibrium is below ``tail``.
    Returns ``(values, dim)``.
    """
    w0 = setup.omega0
    nbar = setup.variance / hbar - 0.5
    if nbar <= 0:
        raise ConfigError("the initial Gaussian is narrower than the vacuum at this hbar")
    alpha = (w0 * setup.mean_q + 1j * setup.mean_p) / math.sqrt(2 * hbar * w0)
    n_bath = 1.0 / math.expm1(setup.beta * hbar * w0)
    x = max(n_bath, nbar + abs(alpha) ** 2)
    dim = max(dims_for(setup.beta, hbar, w0), math.ceil(math.log(tail) / math.log(x / (x + 1))))
    basis = FockBasis(dim, hbar, w0)
    beta_eff = math.log1p(1 / nbar) / (hbar * w0)
    th = thermal_state(basis, beta_eff, tail_tol=1.0)
    disp = displacement_matrix(basis, alpha)
    rho0 = DensityMatrix(basis, disp @ th.entries @ disp.conj().T)
    L = oscillator_generator(basis, setup.spec(), setup.lam)
    dt = _steps(setup.t_max, 2.0 / L.norm_bound())
    rho = evolve(L, rho0, setup.t_max, dt, every=10**9).states[-1]
    return generalized_wigner(rho, OrderingKernel(0.0, w0, hbar), setup.grid(n)).values, dim


def classical_limit_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Distance of the hbar > 0 phase-space solutions from the hbar = 0 one."""
    res = ExperimentResult(cfg.kind)
    setup = SweepSetup.from_config(cfg)
    nu = cfg.numerics
    n = nu["n_grid"]
    hbars = _as_list(cfg.physics["hbar"])
    a_values = _as_list(cfg.physics["a"])
    grid = setup.grid(n)
    table = Table(("hbar", "a", "sup", "l1", "ratio_sup", "ratio_l1"))
    ref = _solve(setup, 0.0, 0.0, n)
    for a in a_values:
        dist = [_distance(_solve(setup, h, a, n), ref, grid) for h in hbars]
        sup, l1 = [d[0] for d in dist], [d[1] for d in dist]
        for i, h in enumerate(hbars):
            r_sup = sup[i - 1] / sup[i] if i else math.nan
            r_l1 = l1[i - 1] / l1[i] if i else math.nan
            table.add(h, a, sup[i], l1[i], r_sup, r_l1)
        tag = f"a{a:+g}"
        res.check(f"monotone_{tag}", all(x > y for x, y in zip(sup, sup[1:])), sup)
        slope = float(np.polyfit(np.log(hbars), np.log(sup), 1)[0]) if len(hbars) > 1 else math.nan
        if a == 0:
            # the Weyl-ordered coefficients differ from hbar = 0 only at O(hbar^2)
            res.reported[f"ratios_{tag}"] = [x / y for x, y in zip(sup, sup[1:])]
            res.reported[f"slope_{tag}"] = slope
        else:
            _ratio_check(res, f"first_order_{tag}", sup)
            lo, hi = (math.log2(r) for r in RATIO_WINDOW)
            res.check(f"slope_{tag}", lo <= slope <= hi, slope, [lo, hi])
        res.derived[f"operators_{tag}"] = {str(h): setup.operator(h, a).to_dict() for h in hbars}
    same, op0 = _hbar0_identical(setup, a_values)
    res.check("hbar0_a_independent", same)
    res.derived["operator_hbar0"] = op0.to_dict()
    res.tables["sweep"] = table
    if nu["fock_check"]:
        nf = nu["fock_grid"]
        ft = Table(("hbar", "dim", "sup", "l1", "grid_error"))
        for h in (h for h in hbars if h >= nu["fock_hbar_min"]):
            fock, dim = fock_route(setup, h, nf, nu["fock_tail"])
            pde = _solve(setup, h, 0.0, nf)
            sup, l1 = _distance(fock, pde, setup.grid(nf))
            err = grid_error(setup, h, 0.0, nf)
            ft.add(h, dim, sup, l1, err)
            res.check(f"fock_route_agrees_hbar{h:g}", sup <= err, sup, err)
        res.tables["fock_route"] = ft
    res.derived["t_max"] = setup.t_max
    return res


def ordering_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Pairwise distances between orderings and their shrinkage as hbar halves."""
    res = ExperimentResult(cfg.kind)
    setup = SweepSetup.from_config(cfg)
    nu = cfg.numerics
    n = nu["n_grid"]
    hbars = _as_list(cfg.physics["hbar"])
    a_values = _as_list(cfg.physics["a"])
    grid = setup.grid(n)
    table = Table(("hbar", "a1", "a2", "sup", "l1", "ratio_sup"))
    for a1, a2 in itertools.combinations(a_values, 2):
        dist = [_distance(_solve(setup, h, a1, n), _solve(setup, h, a2, n), grid) for h in hbars]
        sup = [d[0] for d in dist]
        for i, h in enumerate(hbars):
            table.add(h, a1, a2, sup[i], dist[i][1], sup[i - 1] / sup[i] if i else math.nan)
        tag = f"a{a1:+g}_a{a2:+g}"
        res.check(f"monotone_{tag}", all(x > y for x, y in zip(sup, sup[1:])), sup)
        _ratio_check(res, f"first_order_{tag}", sup)
    res.tables["distances"] = table

    h0 = nu["grid_check_hbar"]
    gt = Table(("hbar", "a", "grid_error"))
    errs = {}
    for a in a_values:
        errs[a] = grid_error(setup, h0, a, n)
        gt.add(h0, a, errs[a])
    res.tables["grid"] = gt
    factor = nu["distinct_factor"]
    for a1, a2 in itertools.combinations(a_values, 2):
        d = _distance(_solve(setup, h0, a1, n), _solve(setup, h0, a2, n), grid)[0]
        bound = factor * max(errs[a1], errs[a2])
        res.check(f"distinct_hbar{h0:g}_a{a1:+g}_a{a2:+g}", d > bound, d, bound)

    same, op0 = _hbar0_identical(setup, a_values)
    res.check("hbar0_a_independent", same)
    res.derived["operator_hbar0"] = op0.to_dict()
    # two independently built runs of one ordering coincide exactly
    small = setup.grid(max(8, n // 4))
    runs = []
    for _ in range(2):
        op = setup.operator(hbars[0], a_values[0])
        dt = setup.safety * Discretization(op, small, setup.order).max_dt()
        runs.append(evolve_field(op, setup.initial(small), 10 * dt, dt, order=setup.order).final.values)
    self_d = _distance(runs[0], runs[1], small)[0]
    res.check("self_distance_zero", self_d == 0.0, self_d, 0.0)
    res.derived["t_max"] = setup.t_max
    return res


# ---------------------------------------------------------- gme-compare

def gme_compare(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.kind)
    ph, nu = cfg.physics, cfg.numerics
    gme, cl = _variant_operator(cfg, "GME"), _variant_operator(cfg, "CLASSICAL")
    det = float(np.linalg.det(gme.diffusion))
    chi = gme.params["chi"]
    if chi != 0:
        res.check("gme_determinant_negative", det < 0, det, 0.0)
    else:
        res.reported["gme_determinant"] = det
    grid = PhaseGrid.symmetric(nu["half_width"], nu["half_width"], nu["n_grid"])
    mb = mb_distribution(ph["beta"], ph["omega0"], grid)
    r_cl = stationarity_residual(cl, mb, nu["order"])
    r_gme = stationarity_residual(gme, mb, nu["order"])
    ratio = r_gme / r_cl if r_cl > 0 else math.inf
    res.check("residual_ratio", ratio >= nu["ratio_min"], ratio, nu["ratio_min"])

    # a Gaussian narrow along the negative-diffusion direction
    lam_n = ph["lam_negativity"]
    gme_n = _variant_operator(cfg, "GME", lam=lam_n)
    cl_n = _variant_operator(cfg, "CLASSICAL", lam=lam_n)
    v = np.linalg.eigh(gme_n.diffusion)[1][:, 0]
    proj = np.outer(v, v)
    s0 = nu["neg_sd_minor"] ** 2 * proj + nu["neg_sd_major"] ** 2 * (np.eye(2) - proj)
    g2 = PhaseGrid.symmetric(nu["neg_half_width"], nu["neg_half_width"], nu["neg_n_grid"])
    f0 = gaussian_field(g2, (0.0, 0.0), s0)
    t_max = nu["neg_t_max"]
    dt = _steps(t_max, nu["neg_safety"] * min(Discretization(op, g2, nu["order"]).max_dt() for op in (gme_n, cl_n)))
    runs = {name: evolve_field(op, f0, t_max, dt, order=nu["order"], every=1, leak_tol=math.inf)
            for name, op in (("gme", gme_n), ("classical", cl_n))}
    neg = Table(("t", "gme_min_ratio", "classical_min_ratio", "exact_gme_min_cov_eig"))
    m = moments(gme_n)
    onset = math.nan
    for t, a, b in zip(runs["gme"].times, runs["gme"].min_ratio, runs["classical"].min_ratio):
        e = float(np.linalg.eigvalsh(m.cov(s0, t))[0])
        if e < 0 and math.isnan(onset):
            onset = t
        neg.add(t, a, b, e)
    gme_min, cl_min = float(runs["gme"].min_ratio.min()), float(runs["classical"].min_ratio.min())
    res.check("gme_goes_negative", gme_min < -nu["neg_threshold"], gme_min, -nu["neg_threshold"])
    res.check("classical_stays_nonnegative", cl_min >= -nu["pos_threshold"], cl_min, -nu["pos_threshold"])
    summary = Table(("quantity", "value"))
    for name, value in (("gme_determinant", det), ("chi", chi), ("residual_classical", r_cl),
                        ("residual_gme", r_gme), ("residual_ratio", ratio), ("gme_min_ratio", gme_min),
                        ("classical_min_ratio", cl_min), ("exact_covariance_indefinite_at", onset)):
        summary.add(name, value)
    res.tables["summary"] = summary
    res.tables["negativity"] = neg
    res.derived.update(gme=gme.to_dict(), classical=cl.to_dict(), gme_negativity=gme_n.to_dict(),
                       classical_negativity=cl_n.to_dict(), negativity_dt=dt)
    return res


# ---------------------------------------------------------- chain-oracle

def chain_oracle(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.kind)
    ph, nu, bath = cfg.physics, cfg.numerics, cfg.bath
    if bath.get("id") != "chain":
        raise ConfigError("chain-oracle needs bath id 'chain'")
    chain = ChainConfig.nearest_neighbor(nu["n_modes"], bath["h0"], bath["h1"], ph["beta"], bath["eps"],
                                         omega0=ph["omega0"])
    rec = chain.recurrence_time()

    # correlation of the free bath force on an a-priori lag grid
    dt = nu["dt"]
    n_lags = nu["n_lags"]
    stride = max(1, round(nu["lag_fraction"] * rec / max(n_lags - 1, 1) / dt))
    t_corr = stride * dt * (n_lags - 1)
    ens = integrate(chain, gibbs_sample(chain, nu["n_samples"], cfg.seed), t_corr, dt, stride, record=("W",))
    est = empirical_correlation(chain, ens)
    exact = chain.mode_sum(est.s)
    z = (est.mean - exact) / est.stderr
    corr = Table(("s", "mean", "stderr", "exact", "z"))
    for row in zip(est.s, est.mean, est.stderr, exact, z):
        corr.add(*row)
    zmax = float(np.abs(z).max())
    res.check("correlation_within_z", zmax < nu["z_max"], zmax, nu["z_max"])
    res.reported["mean_z_squared"] = float(np.mean(z**2))

    # oscillator energy relaxation against the CLASSICAL moment equations
    lam = ph["lam"]
    op = build("CLASSICAL", {"spec": _spec(cfg, "classical"), "lam": lam, "omega0": ph["omega0"],
                             "beta": ph["beta"]})
    predicted = float(-2 * np.linalg.eigvals(moments(op).first).real.max())
    block = nu["relax_dt"] * nu["relax_every"]
    t_relax = block * math.floor(nu["fit_fraction"] * rec / block)
    r = relaxation_experiment(chain, lam, t_relax, dt=nu["relax_dt"], n_samples=nu["relax_samples"],
                              seed=cfg.seed + 1, q0=ph["q0"], p0=ph["p0"], record_every=nu["relax_every"])
    rel = abs(r.rate / predicted - 1)
    res.check("relaxation_rate", rel <= nu["rate_tol"], rel, nu["rate_tol"])
    relax = Table(("t", "mean", "stderr", "fit"))
    fit = r.amplitude * np.exp(-r.rate * r.times) + r.equilibrium
    for row in zip(r.times, r.energy.mean, r.energy.stderr, fit):
        relax.add(*row)
    res.tables["correlation"] = corr
    res.tables["relaxation"] = relax
    res.derived.update(recurrence_time=rec, lag_spacing=stride * dt, relaxation_t_max=t_relax,
                       predicted_rate=predicted, fitted_rate=r.rate, rate_ci=list(r.rate_ci),
                       fitted_equilibrium=r.equilibrium, operator=op.to_dict(),
                       seeds={"correlation": cfg.seed, "relaxation": cfg.seed + 1})
    return res


# ---------------------------------------------------------- secular-check

def secular_check(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.kind)
    ph, nu = cfg.physics, cfg.numerics
    spec = _spec(cfg, "quantum")
    basis = FockBasis(nu["dim"], ph["hbar"], ph["omega0"])
    red = redfield_generator(basis, spec, ph["lam"])
    sec = secular_average(red)
    osc = oscillator_generator(basis, spec, ph["lam"]).to_dense()
    diff = float(np.abs(sec.to_dense() - osc).max())
    idem = float(np.abs(secular_average(sec).to_dense() - sec.to_dense()).max())
    tol = nu["tol"]
    res.check("secular_equals_oscillator", diff <= tol, diff, tol)
    res.check("idempotent", idem <= tol, idem, tol)
    nonsec = float(np.abs(red.to_dense() - osc).max())
    res.reported["redfield_minus_oscillator"] = nonsec
    summary = Table(("quantity", "value"))
    for row in (("secular_minus_oscillator", diff), ("secular_idempotence", idem),
                ("redfield_minus_oscillator", nonsec)):
        summary.add(*row)
    res.tables["summary"] = summary
    return res


PIPELINES = {
    "bath-corr": bath_corr,
    "stability": stability,
    "evolve-lindblad": evolve_lindblad,
    "evolve-fp": evolve_fp,
    "wigner": wigner,
    "classical-limit": classical_limit_sweep,
    "ordering-sweep": ordering_sweep,
    "gme-compare": gme_compare,
    "chain-oracle": chain_oracle,
    "secular-check": secular_check,
}


def execute(config: ExperimentConfig) -> ExperimentResult:
    """Run the pipeline of ``config.kind`` without writing anything."""
    config.validate()
    return PIPELINES[config.kind](config)


def run_experiment(config: ExperimentConfig, out_dir=None):
    """Run an experiment and write its CSV tables and ``manifest.json``.

    Output goes to ``out_dir``, else ``config.out``.  Returns ``(manifest, result)``.
    """
    result = execute(config)
    target = out_dir if out_dir is not None else config.out
    if target is None:
        raise ConfigError("no output directory given")
    return write_outputs(config, result, target), result
