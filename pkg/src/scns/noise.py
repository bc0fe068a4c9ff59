"""Noise coefficients, regularized projected noise and Brownian paths with bridge refinement."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .basis import GalerkinBasis
from .deterministic import Context, SimState
from .model import Grid, NoiseConfig

# Path values are kept on a dyadic lattice so that increments and their
# sums are exact in double precision.
_QUANT = 2.0**-36


def _quantize(x):
    return np.round(np.asarray(x) / _QUANT) * _QUANT


class AlignmentError(ValueError):
    pass


# -- noise modes ------------------------------------------------------------


@lru_cache(maxsize=None)
def _mode_multi_indices(d: int, count: int):
    """First ``count`` (wavevector, component) pairs ordered by |k|^2."""
    if d == 1:
        return tuple(((k,), 0) for k in range(1, count + 1))
    side = int(math.isqrt(count)) + 2
    ks = sorted(itertools.product(range(1, side + 1), repeat=d), key=lambda k: (sum(i * i for i in k), k))
    out = [(k, c) for k in ks for c in range(d)]
    return tuple(out[:count])


def mode_vector(k: int, x, d: int):
    """Value of the ``k``-th (1-based) vector noise mode at point(s) ``x``.

    ``x`` has shape ``(d, ...)``; returns an array of shape ``(d, ...)``.
    """
    kv, c = _mode_multi_indices(d, k)[k - 1]
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    amp = np.ones(x.shape[1:])
    for i, ki in enumerate(kv):
        amp = amp * math.sqrt(2.0) * np.sin(ki * math.pi * x[i])
    out = np.zeros(x.shape)
    out[c] = amp
    return out


def mode_fields(grid: Grid, count: int) -> np.ndarray:
    """Noise modes on the grid, shape ``(count, d, *grid.shape)``."""
    d = grid.d
    X = np.stack(grid.coords())
    out = np.empty((count, d) + grid.shape)
    for k in range(1, count + 1):
        out[k - 1] = mode_vector(k, X, d)
    # exact zeros on the boundary
    for ax in range(d):
        idx = [slice(None)] * (d + 2)
        idx[ax + 2] = [0, grid.n - 1]
        out[tuple(idx)] = 0.0
    return out


def _coupling(rho, m, c: int, coupling: str):
    """Scalar bounded Lipschitz factor multiplying the noise mode."""
    if coupling == "constant":
        return np.ones_like(np.asarray(rho, dtype=float))
    if coupling == "saturating-density":
        return rho / (1.0 + rho)
    if coupling == "saturating-momentum":
        m = np.asarray(m, dtype=float)
        return m[c] / (1.0 + np.sqrt(np.sum(m * m, axis=0)))
    raise ValueError(f"unknown coupling {coupling!r}")


def sigma_k(rho_val, m_val, x, k: int, config: NoiseConfig):
    """Pointwise noise coefficient ``lambda_k**0.5 * e_k(x) * g(rho, m)``."""
    if np.any(np.asarray(rho_val) < 0):
        raise ValueError("sigma_k: density must be nonnegative")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[0]
    m_val = np.atleast_1d(np.asarray(m_val, dtype=float))
    _, c = _mode_multi_indices(d, k)[k - 1]
    g = _coupling(rho_val, m_val, c, config.coupling)
    return math.sqrt(config.lam(k)) * mode_vector(k, x, d) * g


def lipschitz_constant(k: int, config: NoiseConfig, d: int) -> float:
    return math.sqrt(config.lam(k)) * math.sqrt(2.0) ** d


# -- mollification ----------------------------------------------------------


@lru_cache(maxsize=None)
def bump_kernel(radius: int) -> np.ndarray:
    """Normalized discrete standard bump; radius 1 is a single cell."""
    j = np.arange(-radius + 1, radius, dtype=float) / radius
    k = np.exp(-1.0 / (1.0 - j**2))
    return k / k.sum()


def mollify(field: np.ndarray, delta: float, h: float, axes=None) -> np.ndarray:
    """Convolve with a compact bump of radius ``max(1, ceil(delta / h))`` cells.

    The field is extended by zero outside the domain, so mass leaks only near
    the boundary.
    """
    if not delta > 0:
        raise ValueError("mollify: delta must be > 0")
    radius = max(1, math.ceil(delta / h - 1e-12))
    kern = bump_kernel(radius)
    if kern.size == 1:
        return np.array(field, dtype=float, copy=True)
    out = np.asarray(field, dtype=float)
    axes = range(out.ndim) if axes is None else axes
    for ax in axes:
        out = ndimage.convolve1d(out, kern, axis=ax, mode="constant", cval=0.0)
    return out


# -- regularized projected noise --------------------------------------------


class NoiseOperator:
    """Projected, regularized noise coefficients for all retained modes at once."""

    def __init__(self, basis: GalerkinBasis, config: NoiseConfig, tau: float, delta: float):
        self.basis = basis
        self.config = config
        self.tau = tau
        self.delta = delta
        grid = basis.grid
        self.grid = grid
        K = config.k_max
        self.K = K
        self.sqrt_lam = np.sqrt(config.lams())
        self.modes = mode_fields(grid, K) if K else np.zeros((0, grid.d) + grid.shape)
        self.components = [c for _, c in _mode_multi_indices(grid.d, K)] if K else []
        # lambda_k^{1/2} Pi_n e_k, the state-independent part
        self.const_proj = (
            basis.project_many(self.modes) * self.sqrt_lam[:, None] if K else np.zeros((0, basis.dim))
        )

    def _moll(self, f, axes_offset=0):
        if self.delta <= 0:
            return np.asarray(f, dtype=float)
        axes = range(axes_offset, axes_offset + self.grid.d)
        return mollify(f, self.delta, self.grid.h, axes=axes)

    def coefficients(self, rho: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Rows ``s_k`` of Galerkin coefficients of the regularized noise, shape ``(K, dim)``."""
        cfg = self.config
        if self.K == 0 or cfg.amp == 0.0:
            return np.zeros((self.K, self.basis.dim))
        if cfg.coupling == "constant":
            return self.const_proj.copy()
        if cfg.coupling == "saturating-density":
            g = _coupling(self._moll(rho), None, 0, cfg.coupling)
            return self.basis.project_many(self.modes * g) * self.sqrt_lam[:, None]
        # saturating-momentum: truncated momentum (rho ^ 1/tau) u, then mollified
        u_nodes = self.basis.evaluate(u)
        m = np.minimum(rho, 1.0 / self.tau) * u_nodes
        m = self._moll(m, axes_offset=1)
        norm = 1.0 + np.sqrt(np.sum(m * m, axis=0))
        fields = np.empty_like(self.modes)
        for i, c in enumerate(self.components):
            fields[i] = self.modes[i] * (m[c] / norm)
        return self.basis.project_many(fields) * self.sqrt_lam[:, None]


def sigma_reg(rho, u, k: int, op: NoiseOperator) -> np.ndarray:
    """Galerkin coefficients of the ``k``-th (1-based) regularized noise coefficient."""
    return op.coefficients(rho, u)[k - 1]


# -- Brownian paths ---------------------------------------------------------


def _rng(base_seed: int, path_index: int, mode: int, level: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(path_index), int(mode), int(level)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class BrownianPaths:
    """``K`` independent Brownian paths stored at the dyadic times ``j T / 2**level``.

    ``values[k, j]`` is ``beta_{k+1}(j T / 2**level)``.  Refinement inserts
    bridge midpoints and never alters stored values.
    """

    values: np.ndarray
    t_final: float
    level: int
    base_seed: int
    path_index: int

    @classmethod
    def sample(cls, k_max: int, t_final: float, level: int, base_seed: int = 0, path_index: int = 0):
        vals = np.zeros((k_max, 2))
        for k in range(k_max):
            vals[k, 1] = _quantize(math.sqrt(t_final) * _rng(base_seed, path_index, k, 0).standard_normal())
        paths = cls(vals, t_final, 0, base_seed, path_index)
        for _ in range(level):
            paths = paths.refine()
        return paths

    @property
    def k_max(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        return self.t_final / 2**self.level

    def refine(self) -> "BrownianPaths":
        lvl = self.level + 1
        K, n = self.values.shape
        half_var = self.dt / 4.0
        new = np.empty((K, 2 * n - 1))
        new[:, ::2] = self.values
        for k in range(K):
            z = _rng(self.base_seed, self.path_index, k, lvl).standard_normal(n - 1)
            mid = 0.5 * (self.values[k, :-1] + self.values[k, 1:]) + math.sqrt(half_var) * z
            new[k, 1::2] = _quantize(mid)
        return BrownianPaths(new, self.t_final, lvl, self.base_seed, self.path_index)

    def at_level(self, level: int) -> "BrownianPaths":
        if level < self.level:
            step = 2 ** (self.level - level)
            return BrownianPaths(self.values[:, ::step].copy(), self.t_final, level, self.base_seed, self.path_index)
        p = self
        while p.level < level:
            p = p.refine()
        return p

    def _index(self, t: float) -> int:
        r = t / self.dt
        j = round(r)
        if abs(r - j) > 1e-9 * max(1.0, abs(r)) or j < 0 or j > 2**self.level:
            raise AlignmentError(f"time {t} is not on the level-{self.level} dyadic grid")
        return j

    def value(self, k: int, t: float) -> float:
        return float(self.values[k - 1, self._index(t)])

    def increment(self, k: int, t0: float, t1: float) -> float:
        """``beta_k(t1) - beta_k(t0)`` for 1-based ``k``."""
        i0, i1 = self._index(t0), self._index(t1)
        return float(self.values[k - 1, i1] - self.values[k - 1, i0])

    def increments(self) -> np.ndarray:
        """All level increments, shape ``(K, 2**level)``."""
        return np.diff(self.values, axis=1)


def refine(paths: BrownianPaths) -> BrownianPaths:
    return paths.refine()


def increment(paths: BrownianPaths, k: int, t0: float, t1: float) -> float:
    return paths.increment(k, t0, t1)


def stochastic_halfstep(state: SimState, paths: BrownianPaths, ctx: Context, op: NoiseOperator, rec=None) -> SimState:
    """Frozen density; Euler-Maruyama for ``du = sqrt(2) sum_k sigma_k dbeta_k`` over ``tau``."""
    p = ctx.params
    dt = p.dt_st
    t0 = state.t
    rho = state.rho
    M = ctx.mass(rho)
    K = op.K
    for i in range(p.st_substeps):
        ta, tb = t0 + i * dt, t0 + (i + 1) * dt
        if K == 0 or op.config.amp == 0.0:
            new = SimState(tb, rho, state.u, state.mstar)
            if rec is not None:
                rec.st_substep(state, new, dt, np.zeros((K, ctx.basis.dim)), np.zeros(K), M)
            state = new
            continue
        dbeta = np.array([paths.increment(k, ta, tb) for k in range(1, K + 1)])
        S = op.coefficients(rho, state.u)
        u = state.u + math.sqrt(2.0) * (dbeta @ S)
        new = SimState(tb, rho, u, M.entries @ u)
        if rec is not None:
            rec.st_substep(state, new, dt, S, dbeta, M)
        state = new
    return state
