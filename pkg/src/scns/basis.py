"""Sine Galerkin velocity space, L2 projection and trapezoid quadrature."""

from __future__ import annotations

import itertools

import numpy as np

from .model import ConfigError, Grid


def quadrature(field: np.ndarray, grid: Grid) -> float:
    """Composite trapezoid integral over ``[0, 1]^d``."""
    return grid.integrate(field)


def scalar_modes(grid: Grid, n_modes: int):
    """Tensor sine modes ``2**(d/2) prod_i sin(k_i pi x_i)`` and their gradients.

    Returns ``(wavenumbers, values, grads)`` with values of shape
    ``(n_modes**d, *grid.shape)`` and grads of shape ``(n_modes**d, d, *grid.shape)``.
    """
    d = grid.d
    x = grid.x1
    ks = list(itertools.product(range(1, n_modes + 1), repeat=d))
    s1 = {k: np.sqrt(2.0) * np.sin(k * np.pi * x) for k in range(1, n_modes + 1)}
    c1 = {k: np.sqrt(2.0) * k * np.pi * np.cos(k * np.pi * x) for k in range(1, n_modes + 1)}
    # exact zeros on the boundary nodes
    for k in s1:
        s1[k][0] = s1[k][-1] = 0.0

    def outer(factors):
        out = factors[0]
        for f in factors[1:]:
            out = np.multiply.outer(out, f)
        return out

    vals = np.empty((len(ks),) + grid.shape)
    grads = np.empty((len(ks), d) + grid.shape)
    for j, k in enumerate(ks):
        vals[j] = outer([s1[ki] for ki in k])
        for b in range(d):
            grads[j, b] = outer([c1[ki] if i == b else s1[ki] for i, ki in enumerate(k)])
    return np.array(ks), vals, grads


class GalerkinBasis:
    """Velocity space spanned by ``phi_j e_c`` for sine modes ``phi_j`` and components ``c``.

    Index ``i = c * n_modes**d + j``.  Tables are flattened over the grid:
    ``values[i, a, x]``, ``grads[i, a, b, x] = d_b e_i^a`` and ``div[i, x]``.
    """

    def __init__(self, grid: Grid, n_modes: int):
        if n_modes < 1:
            raise ConfigError("n_modes must be >= 1")
        if not 2 * n_modes < grid.n:
            raise ConfigError(
                f"modes unresolvable: need 2 * n_modes < grid_n ({2 * n_modes} >= {grid.n})"
            )
        self.grid = grid
        self.d = d = grid.d
        self.n_modes = n_modes
        ks, phi, dphi = scalar_modes(grid, n_modes)
        self.wavenumbers = ks
        nm = len(ks)
        N = grid.size
        self.dim = dim = d * nm
        w = grid.weights().ravel()
        phi = phi.reshape(nm, N)
        dphi = dphi.reshape(nm, d, N)
        # orthonormalize under the discrete inner product (identity up to rounding)
        gram = (phi * w) @ phi.T
        L = np.linalg.cholesky(gram)
        T = np.linalg.inv(L)
        phi = T @ phi
        dphi = np.einsum("ij,jbx->ibx", T, dphi)
        self._phi = phi
        self._dphi = dphi

        values = np.zeros((dim, d, N))
        grads = np.zeros((dim, d, d, N))
        div = np.zeros((dim, N))
        for c in range(d):
            sl = slice(c * nm, (c + 1) * nm)
            values[sl, c] = phi
            grads[sl, c] = dphi
            div[sl] = dphi[:, c]
        self.values = values
        self.grads = grads
        self.div = div
        self.weights = w
        self._values_flat = values.reshape(dim, d * N)
        self._proj = self._values_flat * np.tile(w, d)
        self._grads_flat = grads.reshape(dim, d * d * N)
        # squared wavenumber per basis index, for spectral H1 norms
        k2 = np.sum(ks.astype(float) ** 2, axis=1) * np.pi**2
        self.k2 = np.tile(k2, d)

    def _check(self, c):
        c = np.asarray(c, dtype=float)
        if c.shape != (self.dim,):
            raise ValueError(f"coefficient vector must have shape ({self.dim},), got {c.shape}")
        return c

    def field_shape(self):
        return (self.d,) + self.grid.shape

    def gram(self) -> np.ndarray:
        return self._proj @ self._values_flat.T

    def project(self, f: np.ndarray) -> np.ndarray:
        """L2-orthogonal projection of a grid vector field onto the span."""
        f = np.asarray(f, dtype=float)
        if f.shape != self.field_shape():
            raise ValueError(f"field must have shape {self.field_shape()}, got {f.shape}")
        return self._proj @ f.ravel()

    def project_many(self, fs: np.ndarray) -> np.ndarray:
        """Project a stack of fields ``(m, d, *grid)``; returns ``(m, dim)``."""
        fs = np.asarray(fs, dtype=float)
        return fs.reshape(fs.shape[0], -1) @ self._proj.T

    def evaluate(self, c) -> np.ndarray:
        c = self._check(c)
        return (c @ self._values_flat).reshape(self.field_shape())

    def evaluate_grad(self, c) -> np.ndarray:
        """Gradient tensor field ``g[a, b] = d_b u_a``."""
        c = self._check(c)
        return (c @ self._grads_flat).reshape((self.d, self.d) + self.grid.shape)

    def evaluate_div(self, c) -> np.ndarray:
        c = self._check(c)
        return (c @ self.div).reshape(self.grid.shape)

    def l2_sq(self, c) -> float:
        return float(np.dot(c, c))

    def h1_seminorm_sq(self, c) -> float:
        """``|grad u|_{L2}^2`` computed spectrally (exact on the span)."""
        return float(np.sum(self.k2 * np.asarray(c) ** 2))


def build_basis(grid: Grid, n_modes: int) -> GalerkinBasis:
    return GalerkinBasis(grid, n_modes)
