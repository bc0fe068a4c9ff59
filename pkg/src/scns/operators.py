"""Density-weighted mass operator, drift operator and effective viscous pressure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .basis import GalerkinBasis
from .model import SimParams, pressure


class SolverError(RuntimeError):
    pass


def grad_neumann(f: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order centered differences with mirrored ghosts (zero normal derivative)."""
    out = np.empty((f.ndim,) + f.shape)
    for ax in range(f.ndim):
        pad = [(0, 0)] * f.ndim
        pad[ax] = (2, 2)
        g = np.pad(f, pad, mode="reflect")
        n = f.shape[ax]
        sh = lambda o: np.take(g, np.arange(2 + o, n + 2 + o), axis=ax)  # noqa: E731
        out[ax] = (8.0 * (sh(1) - sh(-1)) - (sh(2) - sh(-2))) / (12.0 * h)
    return out


@dataclass(frozen=True)
class MassMatrix:
    entries: np.ndarray
    rho_min: float

    def factor(self):
        """Cholesky factor; raises ``SolverError`` if the matrix is not positive definite."""
        try:
            return linalg.cho_factor(self.entries, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise SolverError(
                f"mass matrix not positive definite (rho_min = {self.rho_min:.3e})"
            ) from exc


def assemble_mass(rho: np.ndarray, basis: GalerkinBasis) -> MassMatrix:
    """``M_ij = int rho e_i . e_j`` by trapezoid quadrature."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("assemble_mass: density must be nonnegative")
    wr = (basis.weights * rho.ravel())
    nm = basis.dim // basis.d
    M = np.zeros((basis.dim, basis.dim))
    phi = basis._phi
    blk = (phi * wr) @ phi.T
    blk = 0.5 * (blk + blk.T)
    for c in range(basis.d):
        sl = slice(c * nm, (c + 1) * nm)
        M[sl, sl] = blk
    return MassMatrix(entries=M, rho_min=float(rho.min()))


def solve_velocity(M: MassMatrix, mstar: np.ndarray, factor=None) -> np.ndarray:
    """Solve ``M u = m*`` by Cholesky."""
    if not M.rho_min > 0:
        raise SolverError(f"mass matrix singular: rho_min = {M.rho_min:.3e} is not positive")
    cf = factor if factor is not None else M.factor()
    return linalg.cho_solve(cf, np.asarray(mstar, dtype=float), check_finite=False)


def _n_parts(rho, c, params: SimParams, basis: GalerkinBasis, drop_pressure=False):
    d = basis.d
    g = basis.grid
    u = basis.evaluate(c)
    gu = basis.evaluate_grad(c)
    div = np.trace(gu) if d > 1 else gu[0, 0]
    T = rho * u[:, None] * u[None, :] - 2.0 * params.mu * gu
    iso = -params.lam * div
    if not drop_pressure:
        iso = iso + pressure(rho, params)
    for a in range(d):
        T[a, a] = T[a, a] + iso
    w = basis.weights
    out = basis._grads_flat @ (T.reshape(d * d, -1) * w).ravel()
    if params.eps != 0.0:
        grho = grad_neumann(rho, g.h)
        V = np.einsum("ab...,b...->a...", gu, grho)
        out -= params.eps * (basis._values_flat @ (V.reshape(d, -1) * w).ravel())
    return out


def apply_N(rho: np.ndarray, c: np.ndarray, params: SimParams, basis: GalerkinBasis) -> np.ndarray:
    """Dual vector ``<N[rho, u], e_i>`` of flux, viscous, pressure and eps-correction terms."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("apply_N: density must be nonnegative")
    return _n_parts(rho, np.asarray(c, dtype=float), params, basis)


def pressure_dual(rho: np.ndarray, params: SimParams, basis: GalerkinBasis) -> np.ndarray:
    """Pressure contribution ``<P(rho), div e_i>`` alone."""
    return basis.div @ (pressure(rho, params).ravel() * basis.weights)


def effective_viscous_pressure(rho, c, params: SimParams, basis: GalerkinBasis) -> np.ndarray:
    return pressure(rho, params) - (2.0 * params.mu + params.lam) * basis.evaluate_div(c)
