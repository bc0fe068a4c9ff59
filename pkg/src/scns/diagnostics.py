"""Mass, energy and weak-form residuals, martingale checks, flux and moment summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import build_basis
from .driver import EnsembleStats, Trajectory
from .model import Grid

MOMENT_NAMES = ("kinetic_sup", "rho_gamma_sup", "h1_det", "rho_beta_sup", "grad_det")


class StatisticalPowerError(ValueError):
    pass


class RegionError(ValueError):
    pass


def _grid(traj: Trajectory) -> Grid:
    return Grid(traj.params.d, traj.params.grid_n)


def mass_residual(traj: Trajectory) -> float:
    """Largest deviation of total mass from its initial value over output times."""
    m = traj.column("mass")
    return float(np.max(np.abs(m - m[0])))


@dataclass
class EnergyLedger:
    """Per output time: energy, accumulated dissipation, Ito correction, work and residual.

    ``residual = E(t) - E(0) + dissipation - work - qv`` where ``qv`` is the
    realized quadratic variation of the stochastic kicks; ``ito`` is its
    compensator, the accumulated ``sum_k int rho |sigma_k|^2 dt``.
    """

    times: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    ito: np.ndarray
    work: np.ndarray
    qv: np.ndarray
    residual: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))

    @property
    def martingale_part(self) -> np.ndarray:
        """Energy gain net of dissipation and the Ito compensator."""
        return self.energy - self.energy[0] + self.dissipation - self.ito


def energy_residual(traj: Trajectory) -> EnergyLedger:
    c = traj.column
    return EnergyLedger(
        times=np.asarray(traj.times),
        energy=c("energy"),
        dissipation=c("dissipation"),
        ito=c("ito"),
        work=c("work"),
        qv=c("qv"),
        residual=c("residual"),
    )


def weak_form_residual(traj: Trajectory, phi: np.ndarray, grad_phi: np.ndarray, lap_phi: np.ndarray) -> float:
    """Max over output times of ``|int rho(t) phi - int rho_0 phi - RHS(t)|``.

    The right-hand side is the accumulated ``int 2 h_det [rho u . grad phi + eps rho lap phi]``
    with the solver's own quadrature.
    """
    if not traj.has_fields:
        raise ValueError("weak_form_residual needs a trajectory recorded with full=True")
    g = _grid(traj)
    w = g.weights()
    base = float(np.sum(w * traj.rho[0] * phi))
    out = 0.0
    for rho, adv, diff in zip(traj.rho, traj.adv, traj.diff):
        rhs = float(np.sum(w * np.sum(adv * grad_phi, axis=0))) + float(np.sum(w * diff * lap_phi))
        out = max(out, abs(float(np.sum(w * rho * phi)) - base - rhs))
    return out


# -- martingale checks ------------------------------------------------------


@dataclass
class MartingaleReport:
    phi: object
    s: float
    t: float
    k: int
    n_paths: int
    z: dict  # condition -> {functional: z-score}
    drop_pressure: bool = False

    def max_abs(self, condition: str) -> float:
        return max(abs(v) for v in self.z[condition].values())

    @property
    def worst(self) -> float:
        return max(self.max_abs(c) for c in self.z)

    def to_dict(self) -> dict:
        return {
            "phi": self.phi if isinstance(self.phi, int) else "custom",
            "s": self.s,
            "t": self.t,
            "k": self.k,
            "n_paths": self.n_paths,
            "drop_pressure": self.drop_pressure,
            "z": self.z,
        }


def _zscore(x: np.ndarray) -> float:
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1)) / math.sqrt(x.size)
    scale = float(np.max(np.abs(x))) if x.size else 0.0
    floor = 1e-13 * scale + 1e-300
    return mean / max(se, floor)


def _phi_vector(phi, dim: int) -> np.ndarray:
    if isinstance(phi, (int, np.integer)):
        c = np.zeros(dim)
        c[int(phi)] = 1.0
        return c
    c = np.asarray(phi, dtype=float)
    if c.shape != (dim,):
        raise ValueError(f"test function coefficients must have shape ({dim},)")
    return c


def martingale_series(traj: Trajectory, c: np.ndarray, drop_pressure: bool = False) -> np.ndarray:
    """``M_t(phi) = <m(t) - m(0) - accumulated drift, phi>`` at each output time."""
    ms = np.asarray(traj.mstar)
    dr = np.asarray(traj.drift)
    M = (ms - ms[0] - dr) @ c
    if drop_pressure:
        M = M + np.asarray(traj.pressure_drift) @ c
    return M


def martingale_test(
    trajs: list[Trajectory],
    phi=1,
    s: float | None = None,
    t: float | None = None,
    k: int = 1,
    *,
    drop_pressure: bool = False,
    min_paths: int = 100,
) -> MartingaleReport:
    """z-scores of the three martingale conditions under three adapted functionals.

    ``phi`` is a basis index or a coefficient vector.  ``drop_pressure``
    leaves the pressure drift inside ``M`` (a deliberately wrong compensator).
    """
    n = len(trajs)
    if n < min_paths:
        raise StatisticalPowerError(f"martingale_test needs at least {min_paths} paths, got {n}")
    p = trajs[0].params
    s = p.t_final / 2 if s is None else s
    t = p.t_final if t is None else t
    if not s < t:
        raise ValueError("need s < t")
    if not 1 <= k <= p.noise.k_max:
        raise ValueError(f"k must lie in 1..{p.noise.k_max}")
    dim = np.asarray(trajs[0].mstar[0]).size
    c = _phi_vector(phi, dim)
    g = _grid(trajs[0])
    w = g.weights()
    phi_sum = np.sum(build_basis(g, p.n_modes).evaluate(c), axis=0)

    is_, it_ = trajs[0].index_of(s), trajs[0].index_of(t)
    Ms, Mt, dM, d2, dbk, mass_phi = (np.empty(n) for _ in range(6))
    for i, tr in enumerate(trajs):
        M = martingale_series(tr, c, drop_pressure)
        qv = float(c @ (tr.qvmat[it_] - tr.qvmat[is_]) @ c)
        fk = float((tr.fint[it_][k - 1] - tr.fint[is_][k - 1]) @ c)
        bs, bt = tr.beta[is_][k - 1], tr.beta[it_][k - 1]
        Ms[i], Mt[i] = M[is_], M[it_]
        dM[i] = Mt[i] - Ms[i]
        d2[i] = Mt[i] ** 2 - Ms[i] ** 2 - qv
        dbk[i] = Mt[i] * bt - Ms[i] * bs - fk
        mass_phi[i] = float(np.sum(w * tr.rho[is_] * phi_sum))
    sd = float(np.std(Ms))
    functionals = {
        "one": np.ones(n),
        "sign_mass": np.sign(mass_phi),
        "clamp_M": np.clip(Ms / sd, -1.0, 1.0) if sd > 0 else np.zeros(n),
    }
    z = {}
    for name, series in (("increment", dM), ("quadratic", d2), ("cross", dbk)):
        z[name] = {fn: _zscore(Z * series) for fn, Z in functionals.items()}
    return MartingaleReport(phi if isinstance(phi, int) else "custom", s, t, k, n, z, drop_pressure)


# -- flux diagnostic --------------------------------------------------------


def _region_weights(g: Grid, region) -> np.ndarray:
    """Trapezoid weights of the node-aligned sub-box ``region`` (zero outside)."""
    region = np.asarray(region, dtype=float).reshape(g.d, 2)
    h = g.h
    w = np.ones(())
    for lo, hi in region:
        i0, i1 = int(round(lo / h)), int(round(hi / h))
        if abs(i0 * h - lo) > 1e-9 or abs(i1 * h - hi) > 1e-9:
            raise RegionError(f"region bounds ({lo}, {hi}) are not grid nodes (h = {h})")
        if i0 < 2 or i1 > g.n - 3 or i1 <= i0:
            raise RegionError(f"region ({lo}, {hi}) must lie inside the domain with a margin of 2 cells")
        w1 = np.zeros(g.n)
        w1[i0 : i1 + 1] = h
        w1[i0] = w1[i1] = 0.5 * h
        w = np.multiply.outer(w, w1)
    return w


@dataclass
class FluxEstimate:
    estimate: float
    stderr: float
    n_paths: int
    region: list


def flux_diagnostic(trajs: list[Trajectory], region) -> FluxEstimate:
    """Ensemble estimate of ``E int_0^T int_K ((2mu+lam) div u - P(rho)) rho`` with its SE.

    ``region`` is ``[(lo, hi), ...]`` per axis with node-aligned bounds.
    """
    if not trajs:
        raise ValueError("flux_diagnostic needs a nonempty ensemble")
    g = _grid(trajs[0])
    w = _region_weights(g, region)
    if not all(tr.has_fields for tr in trajs):
        raise ValueError("flux_diagnostic needs trajectories recorded with full=True")
    x = np.array([float(np.sum(w * tr.flux[-1])) for tr in trajs])
    se = float(np.std(x, ddof=1)) / math.sqrt(x.size) if x.size > 1 else 0.0
    return FluxEstimate(float(np.mean(x)), se, x.size, [list(r) for r in np.reshape(region, (g.d, 2))])


# -- moments ----------------------------------------------------------------


def path_moments(traj: Trajectory) -> dict:
    """Per-path surrogates of the uniform-bound norms (before raising to ``p``).

    Sup norms are maxima over output samples; the H1 and density-gradient
    terms only accumulate on deterministic half-intervals.
    """
    c = traj.column
    return {
        "kinetic_sup": float(np.max(c("kin2"))),
        "rho_gamma_sup": float(np.max(c("rho_gamma"))),
        "h1_det": float(c("h1_int")[-1]),
        "rho_beta_sup": float(np.max(c("rho_beta"))),
        "grad_det": float(c("grad_int")[-1]),
    }


def moment_summary(trajs: list[Trajectory], p_list=(1, 2)) -> EnsembleStats:
    """Estimates of ``E[X**p]`` with standard errors for each surrogate ``X``."""
    if not trajs:
        raise ValueError("moment_summary needs a nonempty ensemble")
    per = [path_moments(tr) for tr in trajs]
    n = len(per)
    samples = {name: np.array([m[name] for m in per]) for name in MOMENT_NAMES}
    est = {}
    for name, x in samples.items():
        est[name] = {}
        for p in p_list:
            xp = x**p
            se = float(np.std(xp, ddof=1)) / math.sqrt(n) if n > 1 else 0.0
            est[name][p] = (float(np.mean(xp)), se)
    return EnsembleStats(tuple(p_list), n, est, samples)
