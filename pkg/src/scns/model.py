"""Scheme parameters, fields on the unit box, pressure law and energy."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

COUPLINGS = ("constant", "saturating-momentum", "saturating-density")


class ConfigError(ValueError):
    """Raised when parameters violate a hypothesis or a structural constraint."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class NoiseConfig:
    """Spectral noise family with ``lambda_k = amp * k**(-decay_a)``."""

    k_max: int = 8
    decay_a: float = 2.0
    amp: float = 3e-5
    coupling: str = "saturating-density"

    def lam(self, k: int) -> float:
        return self.amp * float(k) ** (-self.decay_a)

    def lams(self) -> np.ndarray:
        k = np.arange(1, self.k_max + 1, dtype=float)
        return self.amp * k ** (-self.decay_a)


@dataclass(frozen=True)
class SimParams:
    d: int = 1
    tau: float = 1.0 / 8
    n_modes: int = 8
    eps: float = 0.01
    delta: float = 0.01
    mu: float = 0.1
    lam: float = 0.1
    gamma: float = 2.0
    beta: float = 5.0
    t_final: float = 1.0
    dt_det: float = 1.0 / 256
    dt_st: float = 1.0 / 256
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    grid_n: int = 257
    seed: int = 0

    def with_(self, **kw) -> "SimParams":
        noise_kw = {k: kw.pop(k) for k in list(kw) if k in NoiseConfig.__dataclass_fields__}
        p = replace(self, **kw)
        if noise_kw:
            p = replace(p, noise=replace(p.noise, **noise_kw))
        return p

    @property
    def n_intervals(self) -> int:
        return int(round(self.t_final / self.tau))

    @property
    def det_substeps(self) -> int:
        return int(round(self.tau / self.dt_det))

    @property
    def st_substeps(self) -> int:
        return int(round(self.tau / self.dt_st))


@dataclass(frozen=True)
class Grid:
    """Uniform node lattice on ``[0, 1]^d`` including boundary nodes."""

    d: int
    n: int

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def x1(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def coords(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.x1] * self.d), indexing="ij")

    def weights1(self) -> np.ndarray:
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def weights(self) -> np.ndarray:
        """Composite trapezoid weights as a field of ``shape``."""
        w1 = self.weights1()
        w = w1
        for _ in range(self.d - 1):
            w = np.multiply.outer(w, w1)
        return w

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(self.weights() * f))


@dataclass(frozen=True)
class InitialData:
    rho0: np.ndarray
    m0: np.ndarray  # shape (d, *grid.shape)


def _has_negative(rho) -> bool:
    return bool(np.any(np.asarray(rho) < 0))


def pressure(rho, params: SimParams):
    """``rho**gamma + delta * rho**beta``; works on scalars and arrays."""
    if _has_negative(rho):
        raise ValueError("pressure: density must be nonnegative")
    rho = np.asarray(rho, dtype=float)
    out = rho**params.gamma + params.delta * rho**params.beta
    return float(out) if out.ndim == 0 else out


def potential_density(rho, params: SimParams):
    """Pointwise ``rho^g/(g-1) + delta rho^b/(b-1)``."""
    g, b = params.gamma, params.beta
    return rho**g / (g - 1.0) + params.delta * rho**b / (b - 1.0)


def total_energy(rho: np.ndarray, u_field: np.ndarray, grid: Grid, params: SimParams) -> float:
    """Kinetic plus potential energy of a grid state.

    ``u_field`` is the velocity evaluated on the grid, shape ``(d, *grid.shape)``.
    """
    if _has_negative(rho):
        raise ValueError("total_energy: density must be nonnegative")
    kin = 0.5 * rho * np.sum(u_field**2, axis=0)
    return grid.integrate(kin + potential_density(rho, params))


def _gauss_kernel(radius: int = 2, width: float = 1.0) -> np.ndarray:
    j = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (j / width) ** 2)
    return k / k.sum()


def regularize_initial_data(data: InitialData, delta: float, beta: float) -> InitialData:
    """Smooth, clip into ``[delta, delta**(-1/(2 beta))]`` and cut momentum.

    Smoothing is a radius-2 discrete Gaussian with mirrored boundary ghosts,
    which keeps the centered boundary gradient at zero.  Momentum is kept
    where the regularized density did not drop below the original one.
    """
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1) for data regularization, got {delta}")
    rho0 = np.asarray(data.rho0, dtype=float)
    if _has_negative(rho0):
        raise ValueError("initial density must be nonnegative")
    kern = _gauss_kernel()
    sm = rho0
    for ax in range(rho0.ndim):
        sm = ndimage.convolve1d(sm, kern, axis=ax, mode="mirror")
    # a normalized kernel reproduces constants only up to rounding
    sm = np.where(np.abs(sm - rho0) <= 1e-13 * np.maximum(1.0, np.abs(rho0)), rho0, sm)
    hi = delta ** (-1.0 / (2.0 * beta))
    rho_d = np.clip(sm, delta, hi)
    keep = rho_d >= rho0
    m_d = np.where(keep[None], data.m0, 0.0)
    return InitialData(rho0=rho_d, m0=m_d)


def noise_summability(noise: NoiseConfig, d: int) -> tuple[float, float]:
    """Retained sum and tail bound of ``sum_k lambda_k |e_k|_inf^2``.

    Noise modes are sine fields with sup norm ``sqrt(2)**d``.  The tail over
    ``k > k_max`` is bounded by the integral test.
    """
    sup2 = 2.0**d
    retained = float(np.sum(noise.lams())) * sup2
    a = noise.decay_a
    if a <= 1.0:
        return retained, math.inf
    K = max(noise.k_max, 0)
    tail = noise.amp * sup2 * (K ** (1.0 - a) / (a - 1.0) if K > 0 else (1.0 + 1.0 / (a - 1.0)))
    return retained, tail


def _is_int_ratio(a: float, b: float, tol: float = 1e-9) -> bool:
    r = a / b
    return abs(r - round(r)) <= tol * max(1.0, abs(r)) and round(r) >= 1


def validate_params(params: SimParams) -> dict:
    """Check every parameter constraint; raise ``ConfigError`` listing all violations.

    Returns a report with the noise summability sum and tail bound.
    """
    p = params
    v: list[str] = []
    if p.d not in (1, 2):
        v.append(f"d must be 1 or 2, got {p.d}")
    if not p.mu > 0:
        v.append("viscosity mu must be > 0")
    if not p.lam > 0:
        v.append("viscosity lambda must be > 0")
    if not p.eps >= 0:
        v.append("eps must be >= 0")
    if not p.delta >= 0:
        v.append("delta must be >= 0")
    if not p.tau > 0:
        v.append("tau must be > 0")
    if p.d == 2 and not p.gamma > 1.5:
        v.append("Hyp 1.1 violated: need γ > 3/2 for d = 2")
    if p.d == 1:
        if not p.gamma > 1.0:
            v.append("Hyp 1.1 violated: need γ > 1")
        else:
            warnings.warn(
                "d = 1 lies below the dimensions covered by Hyp 1.1; running anyway",
                stacklevel=2,
            )
    bmin = max(p.d, 2.0 * p.gamma, 4.0)
    if not p.beta > bmin:
        v.append(f"β constraint violated: need β > {bmin:g}")
    nz = p.noise
    if not nz.decay_a > 1.0:
        v.append("Hyp 1.4 violated: need decay_a > 1 for summability")
    if nz.amp < 0:
        v.append("noise amp must be >= 0")
    if nz.k_max < 0:
        v.append("noise k_max must be >= 0")
    if nz.coupling not in COUPLINGS:
        v.append(f"unknown noise coupling {nz.coupling!r}")
    if p.tau > 0 and p.t_final > 0:
        r = p.t_final / p.tau
        if abs(r - round(r)) > 1e-9 * r or round(r) % 2 != 0 or round(r) == 0:
            v.append("t_final / tau must be an even integer")
    else:
        v.append("t_final must be > 0")
    for name in ("dt_det", "dt_st"):
        dt = getattr(p, name)
        if not dt > 0 or not _is_int_ratio(p.tau, dt):
            v.append(f"tau / {name} must be a positive integer")
    if p.dt_st > 0 and p.t_final > 0:
        r = p.t_final / p.dt_st
        lvl = math.log2(r) if r > 0 else -1
        if abs(lvl - round(lvl)) > 1e-9:
            v.append("t_final / dt_st must be a power of two (dyadic Brownian grid)")
    if p.n_modes < 1:
        v.append("n_modes must be >= 1")
    if p.grid_n < 3 or not 2 * p.n_modes < p.grid_n:
        v.append("grid too coarse: need 2 * n_modes < grid_n")
    if v:
        raise ConfigError(v)
    retained, tail = noise_summability(nz, p.d)
    return {"noise_sum": retained, "noise_tail_bound": tail}
