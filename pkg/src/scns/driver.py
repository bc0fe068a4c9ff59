"""Splitting schedule, single-path runs, ensembles and tau-refinement sweeps."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .deterministic import Context, PositivityError, SimState, StepSizeError, deterministic_halfstep
from .model import InitialData, SimParams, pressure, potential_density, regularize_initial_data, validate_params
from .noise import BrownianPaths, NoiseOperator, stochastic_halfstep
from .operators import SolverError, grad_neumann, solve_velocity

WORKERS_ENV = "SCNS_WORKERS"

SCALAR_COLUMNS = (
    "energy",
    "kinetic",
    "potential",
    "mass",
    "dissipation",
    "ito",
    "qv",
    "work",
    "residual",
    "rho_min",
    "div_int",
    "h1_int",
    "grad_int",
    "kin2",
    "rho_gamma",
    "rho_beta",
)


class RunError(RuntimeError):
    """A substep failed; carries the interval index and the original cause."""

    def __init__(self, interval: int, kind: str, cause: Exception):
        self.interval = interval
        self.kind = kind
        self.cause = cause
        super().__init__(f"interval {interval} ({kind} half-step): {cause}")


def h_det(s: float, tau: float) -> int:
    """1 on ``(t_2j, t_2j+1]``, 0 on ``(t_2j+1, t_2j+2]``; ``h_det(0) = 0``."""
    r = s / tau
    j = math.ceil(r - 1e-12 * max(1.0, abs(r)))
    return 1 if j % 2 == 1 else 0


def h_st(s: float, tau: float) -> int:
    return 1 - h_det(s, tau)


def brownian_level(params: SimParams) -> int:
    return int(round(math.log2(params.t_final / params.dt_st)))


@dataclass
class Trajectory:
    """Output samples of one path together with all ledger accumulators."""

    params: SimParams
    path_seed: int
    times: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    u: list = field(default_factory=list)
    mstar: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    scalars: dict = field(default_factory=lambda: {k: [] for k in SCALAR_COLUMNS})
    drift: list = field(default_factory=list)
    pressure_drift: list = field(default_factory=list)
    fint: list = field(default_factory=list)
    qvmat: list = field(default_factory=list)
    adv: list = field(default_factory=list)
    diff: list = field(default_factory=list)
    flux: list = field(default_factory=list)
    rho0: np.ndarray | None = None
    mstar0: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.scalars[name])

    def index_of(self, t: float) -> int:
        ts = np.asarray(self.times)
        i = int(np.argmin(np.abs(ts - t)))
        if abs(ts[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not an output time")
        return i

    @property
    def has_fields(self) -> bool:
        return len(self.adv) > 0


class Recorder:
    """Accumulates the energy ledger and weak-form integrals substep by substep."""

    def __init__(self, ctx: Context, traj: Trajectory, out_every: float | None, full: bool, paths=None):
        self.ctx = ctx
        self.traj = traj
        self.out_every = out_every
        self.full = full
        self.paths = paths
        p = ctx.params
        b = ctx.basis
        self.K = p.noise.k_max
        self.grad_gram = np.diag(b.k2)
        w = b.weights
        self.div_gram = (b.div * w) @ b.div.T
        self.dissipation = 0.0
        self.ito = 0.0
        self.qv = 0.0
        self.work = 0.0
        self.div_int = 0.0
        self.h1_int = 0.0
        self.grad_int = 0.0
        self.drift = np.zeros(b.dim)
        self.pressure_drift = np.zeros(b.dim)
        self.fint = np.zeros((self.K, b.dim))
        self.qvmat = np.zeros((b.dim, b.dim))
        shape = ctx.grid.shape
        self.adv = np.zeros((ctx.grid.d,) + shape) if full else None
        self.diff = np.zeros(shape) if full else None
        self.flux = np.zeros(shape) if full else None
        self.e0 = None

    # -- rates --------------------------------------------------------------

    def viscous_rate(self, c) -> float:
        p = self.ctx.params
        return 2.0 * p.mu * float(c @ self.grad_gram @ c) + p.lam * float(c @ self.div_gram @ c)

    def density_rate(self, rho) -> float:
        p = self.ctx.params
        if p.eps == 0.0:
            return 0.0
        g = grad_neumann(rho, self.ctx.grid.h)
        coef = p.gamma * rho ** (p.gamma - 2.0) + p.delta * p.beta * rho ** (p.beta - 2.0)
        return p.eps * self.ctx.grid.integrate(coef * np.sum(g * g, axis=0))

    def grad_norm_sq(self, rho) -> float:
        p = self.ctx.params
        if p.eps == 0.0:
            return 0.0
        f = rho ** (p.gamma / 2.0) + math.sqrt(p.delta) * rho ** (p.beta / 2.0)
        g = grad_neumann(f, self.ctx.grid.h)
        return p.eps * self.ctx.grid.integrate(np.sum(g * g, axis=0))

    def _flux_acc(self, state: SimState, dt: float):
        if not self.full:
            return
        p = self.ctx.params
        div = self.ctx.basis.evaluate_div(state.u)
        self.flux += dt * ((2.0 * p.mu + p.lam) * div - pressure(state.rho, p)) * state.rho

    # -- hooks --------------------------------------------------------------

    def det_substep(self, s0: SimState, mid: SimState, s1: SimState, dt, info, M):
        p = self.ctx.params
        b = self.ctx.basis
        self.dissipation += 2.0 * dt * (
            0.5 * (self.viscous_rate(mid.u) + self.viscous_rate(s1.u)) + self.density_rate(s1.rho)
        )
        self.drift += info["drift"]
        self.pressure_drift += info["pressure"]
        self.div_int += 2.0 * dt * float(np.max(np.abs(b.evaluate_div(s0.u))))
        self.h1_int += dt * float(s1.u @ s1.u + s1.u @ self.grad_gram @ s1.u)
        self.grad_int += dt * self.grad_norm_sq(s1.rho)
        if self.full:
            self.adv += 2.0 * dt * s0.rho * b.evaluate(s0.u)
            self.diff += 2.0 * dt * p.eps * s1.rho
        self._flux_acc(s0, dt)
        self.maybe_record(s1, M)

    def st_substep(self, s0: SimState, s1: SimState, dt, S, dbeta, M):
        if S.size:
            Me = M.entries
            v = dbeta @ S
            self.work += math.sqrt(2.0) * float(s0.mstar @ v)
            self.qv += float(v @ Me @ v)
            SM = S @ Me
            self.ito += dt * float(np.sum(SM * S))
            F = math.sqrt(2.0) * SM
            self.fint += dt * F
            self.qvmat += dt * (F.T @ F)
        self._flux_acc(s0, dt)
        self.maybe_record(s1, M)

    # -- sampling -----------------------------------------------------------

    def is_output(self, t: float) -> bool:
        if self.out_every is None:
            return True
        r = t / self.out_every
        return abs(r - round(r)) <= 1e-9 * max(1.0, r)

    def maybe_record(self, s: SimState, M, force: bool = False):
        if force or self.is_output(s.t):
            self.record(s, M)

    def record(self, s: SimState, M):
        ctx = self.ctx
        p = ctx.params
        tr = self.traj
        rho = s.rho
        kin2 = float(s.u @ M.entries @ s.u)
        pot = ctx.grid.integrate(potential_density(rho, p))
        energy = 0.5 * kin2 + pot
        if self.e0 is None:
            self.e0 = energy
        resid = energy - self.e0 + self.dissipation - self.work - self.qv
        vals = {
            "energy": energy,
            "kinetic": 0.5 * kin2,
            "potential": pot,
            "mass": ctx.grid.integrate(rho),
            "dissipation": self.dissipation,
            "ito": self.ito,
            "qv": self.qv,
            "work": self.work,
            "residual": resid,
            "rho_min": float(rho.min()),
            "div_int": self.div_int,
            "h1_int": self.h1_int,
            "grad_int": self.grad_int,
            "kin2": kin2,
            "rho_gamma": ctx.grid.integrate(rho**p.gamma),
            "rho_beta": p.delta * ctx.grid.integrate(rho**p.beta),
        }
        tr.times.append(s.t)
        for k, v in vals.items():
            tr.scalars[k].append(v)
        tr.rho.append(rho)
        tr.u.append(s.u)
        tr.mstar.append(s.mstar)
        tr.drift.append(self.drift.copy())
        tr.pressure_drift.append(self.pressure_drift.copy())
        tr.fint.append(self.fint.copy())
        tr.qvmat.append(self.qvmat.copy())
        if self.paths is not None and self.K:
            j = self.paths._index(s.t)
            tr.beta.append(self.paths.values[:, j].copy())
        else:
            tr.beta.append(np.zeros(self.K))
        if self.full:
            tr.adv.append(self.adv.copy())
            tr.diff.append(self.diff.copy())
            tr.flux.append(self.flux.copy())


def initial_state(ctx: Context, data: InitialData) -> tuple[SimState, InitialData]:
    """Regularize data (when ``delta > 0``) and set ``u(0) = M^-1[rho] <m0, e_i>``."""
    p = ctx.params
    reg = regularize_initial_data(data, p.delta, p.beta) if p.delta > 0 else data
    rho = np.asarray(reg.rho0, dtype=float)
    mstar = ctx.basis.project(np.asarray(reg.m0, dtype=float))
    M = ctx.mass(rho)
    if M.rho_min > 0:
        u = solve_velocity(M, mstar)
    elif np.allclose(mstar, 0.0):
        u = np.zeros_like(mstar)
    else:
        raise SolverError("initial density vanishes somewhere and momentum is nonzero")
    return SimState(0.0, rho, u, M.entries @ u), reg


def run_path(
    params: SimParams,
    data: InitialData,
    path_seed: int = 0,
    *,
    out_every: float | None = None,
    full: bool = True,
    paths: BrownianPaths | None = None,
    ctx: Context | None = None,
    validate: bool = True,
) -> Trajectory:
    """Alternate deterministic and stochastic half-steps over ``[0, T]``.

    ``out_every`` is the output stride in time (default: every substep).
    ``full`` also keeps the field accumulators used by the weak-form and
    flux diagnostics.
    """
    if validate:
        validate_params(params)
    ctx = ctx if ctx is not None else Context(params)
    K = params.noise.k_max
    if paths is None and K > 0:
        paths = BrownianPaths.sample(K, params.t_final, brownian_level(params), params.seed, path_seed)
    elif paths is not None and K > 0:
        paths = paths.at_level(brownian_level(params))
    op = NoiseOperator(ctx.basis, params.noise, params.tau, params.delta)
    state, reg = initial_state(ctx, data)
    traj = Trajectory(params=params, path_seed=path_seed, rho0=state.rho, mstar0=state.mstar)
    rec = Recorder(ctx, traj, out_every, full, paths)
    rec.record(state, ctx.mass(state.rho))
    for j in range(params.n_intervals):
        t_start = j * params.tau
        state = SimState(t_start, state.rho, state.u, state.mstar)
        if j % 2 == 0:
            kind = "deterministic"
            try:
                state = deterministic_halfstep(state, ctx, rec)
            except (StepSizeError, PositivityError, SolverError) as exc:
                raise RunError(j, kind, exc) from exc
        else:
            kind = "stochastic"
            try:
                state = stochastic_halfstep(state, paths, ctx, op, rec)
            except (SolverError, ValueError) as exc:
                raise RunError(j, kind, exc) from exc
    if traj.times[-1] < params.t_final - 1e-12:
        rec.record(state, ctx.mass(state.rho))
    return traj


# -- ensembles --------------------------------------------------------------


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return 1


def _run_one(args):
    params, data, seed, out_every, full = args
    try:
        return run_path(params, data, seed, out_every=out_every, full=full, validate=False)
    except RunError as exc:
        return exc


def simulate_ensemble(
    params: SimParams,
    data: InitialData,
    n_paths: int,
    *,
    out_every: float | None = None,
    full: bool = False,
    workers: int | None = None,
    first_seed: int = 0,
) -> list[Trajectory]:
    """Run independent paths with seeds ``first_seed .. first_seed + n_paths - 1``.

    Results are ordered by seed, so they do not depend on the worker count.
    Path failures are collected and re-raised together with their seeds.
    """
    validate_params(params)
    workers = default_workers() if workers is None else workers
    jobs = [(params, data, first_seed + i, out_every, full) for i in range(n_paths)]
    if workers <= 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one, jobs, chunksize=max(1, n_paths // (4 * workers))))
    failures = [(jobs[i][2], r) for i, r in enumerate(results) if isinstance(r, Exception)]
    if failures:
        msg = "; ".join(f"seed {s}: {e}" for s, e in failures[:10])
        raise RuntimeError(f"{len(failures)} of {n_paths} paths failed: {msg}")
    return results


@dataclass
class EnsembleStats:
    """Moment estimates ``E[X**p]`` with standard errors for each tracked quantity."""

    p_list: tuple
    n_paths: int
    estimates: dict  # name -> {p: (estimate, standard error)}
    samples: dict = field(default_factory=dict, repr=False)  # name -> per-path X

    def estimate(self, name: str, p) -> float:
        return self.estimates[name][p][0]

    def stderr(self, name: str, p) -> float:
        return self.estimates[name][p][1]

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "p_list": list(self.p_list),
            "moments": {
                name: {str(p): {"estimate": e, "stderr": s} for p, (e, s) in per.items()}
                for name, per in self.estimates.items()
            },
        }


def run_ensemble(
    params: SimParams,
    data: InitialData,
    n_paths: int,
    p_list=(1, 2),
    *,
    workers: int | None = None,
    out_every: float | None = None,
) -> EnsembleStats:
    if n_paths < 2:
        raise ValueError("run_ensemble needs n_paths >= 2")
    from .diagnostics import moment_summary

    trajs = simulate_ensemble(params, data, n_paths, out_every=out_every, workers=workers)
    return moment_summary(trajs, p_list)


# -- tau refinement ---------------------------------------------------------


@dataclass
class SweepTable:
    taus: list
    rho_diff: list  # L2_{t,x} difference between consecutive levels
    u_diff: list
    moments: list  # per level: name -> value (single path, p = 1)
    seed: int

    def rows(self):
        for i, tau in enumerate(self.taus):
            yield {
                "level": i,
                "tau": tau,
                "rho_diff_to_prev": self.rho_diff[i - 1] if i else float("nan"),
                "u_diff_to_prev": self.u_diff[i - 1] if i else float("nan"),
                **{f"moment_{k}": v for k, v in self.moments[i].items()},
            }


def sweep_params(params: SimParams, levels: int) -> list[SimParams]:
    out = []
    for lv in range(levels):
        tau = params.tau / 2**lv
        out.append(params.with_(tau=tau, dt_det=min(params.dt_det, tau), dt_st=min(params.dt_st, tau)))
    return out


def refine_tau_sweep(params: SimParams, data: InitialData, levels: int, path_seed: int = 0) -> SweepTable:
    """Run ``tau, tau/2, ...`` on one Brownian path and compare consecutive levels."""
    if levels < 2:
        raise ValueError("refine_tau_sweep needs levels >= 2")
    from .diagnostics import path_moments

    plist = sweep_params(params, levels)
    stride = max(max(p.dt_det, p.dt_st) for p in plist)
    finest = min(p.dt_st for p in plist)
    K = params.noise.k_max
    base = None
    if K:
        lvl = int(round(math.log2(params.t_final / finest)))
        base = BrownianPaths.sample(K, params.t_final, lvl, params.seed, path_seed)
    grid_w = None
    trajs = []
    for p in plist:
        tr = run_path(p, data, path_seed, out_every=stride, full=False, paths=base)
        trajs.append(tr)
    ctx = Context(params)
    grid_w = ctx.grid.weights()
    rho_d, u_d = [], []
    for a, b in zip(trajs[:-1], trajs[1:]):
        ra, rb = np.asarray(a.rho), np.asarray(b.rho)
        ua, ub = np.asarray(a.u), np.asarray(b.u)
        rho_d.append(math.sqrt(stride * float(np.sum(grid_w * (ra[1:] - rb[1:]) ** 2))))
        u_d.append(math.sqrt(stride * float(np.sum((ua[1:] - ub[1:]) ** 2))))
    moments = [path_moments(tr) for tr in trajs]
    return SweepTable([p.tau for p in plist], rho_d, u_d, moments, path_seed)
