import itertools

import numpy as np
import pytest

from scns.cli import InitialSpec, make_initial_data
from scns.model import Grid, InitialData, SimParams, pressure


@pytest.fixture
def params():
    return SimParams()


@pytest.fixture
def grid(params):
    return Grid(params.d, params.grid_n)


@pytest.fixture
def bump(grid):
    """Default smooth initial data: gaussian bump at rest."""
    return make_initial_data(InitialSpec(), grid)


def constant_data(grid, value=1.0):
    return InitialData(np.full(grid.shape, value), np.zeros((grid.d,) + grid.shape))


def smooth_density(x, a):
    """``1 + sum_j a_j cos(j pi x)``: even across both walls."""
    return 1.0 + sum(aj * np.cos((j + 1) * np.pi * x) for j, aj in enumerate(a))


def smooth_density_grad(x, a):
    return sum(-aj * (j + 1) * np.pi * np.sin((j + 1) * np.pi * x) for j, aj in enumerate(a))


def cosine_density(X, amps):
    """``1 + sum_{i,j} amps[i, j] cos((j + 1) pi x_i)`` on coordinate arrays ``X``."""
    d, m = amps.shape
    return 1.0 + sum(amps[i, j] * np.cos((j + 1) * np.pi * X[i]) for i in range(d) for j in range(m))


def cosine_density_grad(X, amps):
    d, m = amps.shape
    return [sum(-amps[b, j] * (j + 1) * np.pi * np.sin((j + 1) * np.pi * X[b]) for j in range(m)) for b in range(d)]


def oracle_tables(d, n_modes, nf):
    """Analytic sine modes and gradients on an ``nf``-node grid, indexed like the solver basis."""
    x = np.linspace(0.0, 1.0, nf)
    X = np.meshgrid(*([x] * d), indexing="ij")
    w1 = np.full(nf, 1.0 / (nf - 1))
    w1[[0, -1]] *= 0.5
    w = w1
    for _ in range(d - 1):
        w = np.multiply.outer(w, w1)
    scal, dscal = [], []
    for ks in itertools.product(range(1, n_modes + 1), repeat=d):
        s = [np.sqrt(2) * np.sin(k * np.pi * X[i]) for i, k in enumerate(ks)]
        c = [np.sqrt(2) * k * np.pi * np.cos(k * np.pi * X[i]) for i, k in enumerate(ks)]
        scal.append(np.prod(s, axis=0))
        dscal.append([np.prod([c[i] if i == b else s[i] for i in range(d)], axis=0) for b in range(d)])
    nm = len(scal)
    E = np.zeros((d * nm, d) + X[0].shape)
    G = np.zeros((d * nm, d, d) + X[0].shape)  # G[i, a, b] = d_b e_i^a
    for c in range(d):
        for j in range(nm):
            E[c * nm + j, c] = scal[j]
            G[c * nm + j, c] = dscal[j]
    return X, w, E, G


def oracle_operators(tables, amps, c, p):
    """Mass matrix and drift dual vector from analytic fields on the oracle grid."""
    X, w, E, G = tables
    d = len(X)
    nd = E.shape[0]
    rho = cosine_density(X, amps)
    Ef = E.reshape(nd, -1)
    M = (Ef * np.tile((w * rho).ravel(), d)) @ Ef.T
    u = np.einsum("i,ia...->a...", c, E)
    gu = np.einsum("i,iab...->ab...", c, G)
    div = sum(gu[a, a] for a in range(d))
    T = rho * u[:, None] * u[None, :] - 2 * p.mu * gu
    for a in range(d):
        T[a, a] = T[a, a] + pressure(rho, p) - p.lam * div
    dr = cosine_density_grad(X, amps)
    V = np.stack([sum(gu[a, b] * dr[b] for b in range(d)) for a in range(d)])
    N = (G * w).reshape(nd, -1) @ T.ravel() - p.eps * (E * w).reshape(nd, -1) @ V.ravel()
    return M, N
