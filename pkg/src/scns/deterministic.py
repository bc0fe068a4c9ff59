"""Deterministic half-interval: parabolic continuity equation and Galerkin momentum."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy import fft

from .basis import GalerkinBasis, build_basis
from .model import Grid, SimParams
from .operators import SolverError, apply_N, assemble_mass, pressure_dual, solve_velocity


class StepSizeError(RuntimeError):
    pass


class PositivityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimState:
    t: float
    rho: np.ndarray
    u: np.ndarray
    mstar: np.ndarray


class Context:
    """Parameters plus the grid, basis and cached spectral tables for one run."""

    def __init__(self, params: SimParams, basis: GalerkinBasis | None = None):
        self.params = params
        self.grid = Grid(params.d, params.grid_n)
        self.basis = basis if basis is not None else build_basis(self.grid, params.n_modes)
        self.w1 = self.grid.weights1()

    @cached_property
    def lap_eigs(self) -> np.ndarray:
        """Eigenvalues of the mirrored-ghost Neumann Laplacian in the DCT-I basis."""
        n, h = self.grid.n, self.grid.h
        k = np.arange(n)
        lam1 = (2.0 * np.cos(np.pi * k / (n - 1)) - 2.0) / h**2
        out = np.zeros(self.grid.shape)
        for ax in range(self.grid.d):
            shape = [1] * self.grid.d
            shape[ax] = n
            out = out + lam1.reshape(shape)
        return out

    def mass(self, rho):
        return assemble_mass(rho, self.basis)


def implicit_diffusion(rho: np.ndarray, coef: float, ctx: Context) -> np.ndarray:
    """Solve ``(I - coef * Lap) r = rho`` with the Neumann stencil."""
    if coef == 0.0:
        return rho
    hat = fft.dctn(rho, type=1)
    hat /= 1.0 - coef * ctx.lap_eigs
    return fft.idctn(hat, type=1)


def advective_update(rho: np.ndarray, u_nodes: np.ndarray, dt: float, ctx: Context) -> np.ndarray:
    """Explicit conservative upwind step for ``-2 div(rho u)`` on dual cells.

    Face velocities are averages of the adjacent node values; the outer faces of
    the boundary half-cells are walls.
    """
    out = rho.copy()
    w1 = ctx.w1
    for a in range(ctx.grid.d):
        ua = u_nodes[a]
        n = rho.shape[a]
        lo = [slice(None)] * rho.ndim
        hi = [slice(None)] * rho.ndim
        lo[a] = slice(0, n - 1)
        hi[a] = slice(1, n)
        lo, hi = tuple(lo), tuple(hi)
        uf = 0.5 * (ua[lo] + ua[hi])
        flux = np.where(uf > 0.0, uf * rho[lo], uf * rho[hi])
        net = np.zeros_like(rho)
        net[lo] += flux
        net[hi] -= flux
        shape = [1] * rho.ndim
        shape[a] = n
        out -= 2.0 * dt * net / w1.reshape(shape)
    return out


def cfl_limit(u_nodes: np.ndarray, ctx: Context) -> float:
    umax = float(np.max(np.abs(u_nodes))) if u_nodes.size else 0.0
    if umax == 0.0:
        return np.inf
    return ctx.grid.h / (4.0 * ctx.grid.d * umax)


def density_substep(rho: np.ndarray, u: np.ndarray, dt: float, ctx: Context, eps=None) -> np.ndarray:
    """One IMEX step of ``d_t rho = 2 eps Lap rho - 2 div(rho u)``.

    ``u`` holds Galerkin coefficients.  Upwind advection is explicit, diffusion
    is backward Euler; total trapezoid mass is conserved.
    """
    eps = ctx.params.eps if eps is None else eps
    u_nodes = ctx.basis.evaluate(u)
    lim = cfl_limit(u_nodes, ctx)
    if dt > lim * (1.0 + 1e-12):
        raise StepSizeError(f"advective CFL violated: dt = {dt:.3e} > {lim:.3e}")
    r = advective_update(rho, u_nodes, dt, ctx)
    r = implicit_diffusion(r, 2.0 * eps * dt, ctx)
    if np.any(r <= 0.0):
        raise PositivityError(
            f"density lost positivity (min {r.min():.3e}); refine dt_det or the grid"
        )
    return r


def momentum_substep(state: SimState, dt: float, ctx: Context, M=None, factor=None) -> tuple[SimState, dict]:
    """Heun update of ``m*`` with integrand ``2 N[rho, u]`` at frozen density.

    Returns the new state and the increments used for bookkeeping
    (``drift``: total change of ``m*``; ``pressure``: its pressure part).
    """
    p = ctx.params
    basis = ctx.basis
    rho = state.rho
    if M is None:
        M = ctx.mass(rho)
    if factor is None:
        factor = M.factor()
    k1 = 2.0 * apply_N(rho, state.u, p, basis)
    u1 = solve_velocity(M, state.mstar + dt * k1, factor)
    k2 = 2.0 * apply_N(rho, u1, p, basis)
    drift = 0.5 * dt * (k1 + k2)
    mstar = state.mstar + drift
    u = solve_velocity(M, mstar, factor)
    pres = 2.0 * dt * pressure_dual(rho, p, basis)
    return replace(state, t=state.t + dt, u=u, mstar=mstar), {"drift": drift, "pressure": pres}


def deterministic_halfstep(state: SimState, ctx: Context, rec=None) -> SimState:
    """Advance by ``tau`` with alternating density and momentum substeps.

    During the density substep ``m*`` is held and ``u`` re-solved from the new
    density; the momentum substep then integrates ``m*`` at that density.
    """
    p = ctx.params
    dt = p.dt_det
    t0 = state.t
    for i in range(p.det_substeps):
        try:
            rho1 = density_substep(state.rho, state.u, dt, ctx)
            M = ctx.mass(rho1)
            f = M.factor()
            mid = SimState(state.t, rho1, solve_velocity(M, state.mstar, f), state.mstar)
            new, info = momentum_substep(mid, dt, ctx, M=M, factor=f)
        except (StepSizeError, PositivityError, SolverError) as exc:
            raise type(exc)(f"substep {i} at t = {state.t:.6g}: {exc}") from exc
        new = replace(new, t=t0 + (i + 1) * dt)
        if rec is not None:
            rec.det_substep(state, mid, new, dt, info, M)
        state = new
    return state
