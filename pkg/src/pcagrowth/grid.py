"""Uniform structured grids on intervals and rectangles.

Two node layouts share one grid.  Dirichlet fields (phi) live on the ``n``
interior nodes per axis with zero ghosts; Neumann fields (sigma, p) live on all
``n + 2`` nodes including the boundary, with mirrored ghosts.  Interior nodes
of both layouts coincide, so fields couple pointwise.

Neumann quadrature uses trapezoidal weights (half cells at the boundary); with
them the mirrored-ghost Laplacian is symmetric and integrates to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, reduce
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BcMismatch, NoConvergence, ShapeMismatch

DIRICHLET = "dirichlet0"
NEUMANN = "neumann0"


@dataclass(frozen=True)
class Grid:
    n: tuple
    L: tuple

    def __post_init__(self):
        n = tuple(int(k) for k in np.atleast_1d(self.n))
        L = tuple(float(x) for x in np.atleast_1d(self.L))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", L)
        if len(n) not in (1, 2) or len(L) != len(n):
            raise ValueError("grid must be 1D or 2D with one length per axis")
        if min(n) < 3:
            raise ValueError("need n >= 3 interior nodes per axis")
        if min(L) <= 0:
            raise ValueError("extents must be positive")

    @classmethod
    def uniform(cls, n: int, L: float = 1.0, dim: int = 1) -> "Grid":
        return cls((n,) * dim, (L,) * dim)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def h(self) -> tuple:
        return tuple(L / (k + 1) for k, L in zip(self.n, self.L))

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.h))

    @property
    def measure(self) -> float:
        return float(np.prod(self.L))

    @property
    def shape_dirichlet(self) -> tuple:
        return self.n

    @property
    def shape_neumann(self) -> tuple:
        return tuple(k + 2 for k in self.n)

    def shape(self, bc: str) -> tuple:
        return self.shape_dirichlet if bc == DIRICHLET else self.shape_neumann

    def layout_of(self, values) -> str:
        shape = np.shape(values)
        if shape == self.shape_dirichlet:
            return DIRICHLET
        if shape == self.shape_neumann:
            return NEUMANN
        raise ShapeMismatch(f"array of shape {shape} fits neither layout of {self}")

    def coords(self, bc: str) -> list:
        """Node coordinates per axis for the given layout."""
        out = []
        for k, L in zip(self.n, self.L):
            x = np.linspace(0.0, L, k + 2)
            out.append(x[1:-1] if bc == DIRICHLET else x)
        return out

    def mesh(self, bc: str):
        return np.meshgrid(*self.coords(bc), indexing="ij")

    # -- quadrature weights -------------------------------------------------
    @cached_property
    def _trap_1d(self):
        ws = []
        for k, h in zip(self.n, self.h):
            w = np.full(k + 2, h)
            w[0] = w[-1] = h / 2
            ws.append(w)
        return ws

    def weights(self, bc: str) -> np.ndarray:
        if bc == DIRICHLET:
            return np.full(self.shape_dirichlet, self.cell_measure)
        return reduce(np.multiply.outer, self._trap_1d)

    @cached_property
    def w_neumann(self) -> np.ndarray:
        return self.weights(NEUMANN)

    # -- sparse operators ---------------------------------------------------
    @cached_property
    def lap_dirichlet(self) -> sp.csr_matrix:
        mats = []
        for k, h in zip(self.n, self.h):
            mats.append(sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(k, k)) / h**2)
        return _kron_sum(mats)

    @cached_property
    def lap_neumann(self) -> sp.csr_matrix:
        mats = []
        for k, h in zip(self.n, self.h):
            m = k + 2
            T = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(m, m)).tolil()
            T[0, 1] = 2.0
            T[m - 1, m - 2] = 2.0
            mats.append(T.tocsr() / h**2)
        return _kron_sum(mats)

    def extend(self, phi: np.ndarray) -> np.ndarray:
        """Embed a Dirichlet field into the Neumann layout (zero on the boundary)."""
        out = np.zeros(self.shape_neumann)
        out[(slice(1, -1),) * self.dim] = phi
        return out

    def interior(self, values: np.ndarray) -> np.ndarray:
        """Restrict a Neumann field to the interior nodes."""
        return values[(slice(1, -1),) * self.dim]


def _kron_sum(mats):
    if len(mats) == 1:
        return sp.csr_matrix(mats[0])
    A, B = mats
    return sp.csr_matrix(sp.kron(A, sp.identity(B.shape[0])) + sp.kron(sp.identity(A.shape[0]), B))


def _check(grid, values, bc):
    kind = grid.layout_of(values)
    if kind != bc:
        raise BcMismatch(f"expected a {bc} field, got {kind}")
    return np.asarray(values, dtype=float)


def laplacian_dirichlet(grid: Grid, values) -> np.ndarray:
    """Five-point (three-point in 1D) Laplacian with zero ghost values."""
    u = _check(grid, values, DIRICHLET)
    return (grid.lap_dirichlet @ u.ravel()).reshape(u.shape)


def laplacian_neumann(grid: Grid, values) -> np.ndarray:
    """Central-difference Laplacian with mirrored ghosts (zero normal derivative)."""
    u = _check(grid, values, NEUMANN)
    return (grid.lap_neumann @ u.ravel()).reshape(u.shape)


def inner(grid: Grid, a, b) -> float:
    bc = grid.layout_of(a)
    return float(np.sum(grid.weights(bc) * np.asarray(a) * np.asarray(b)))


def norm_l2(grid: Grid, values) -> float:
    return float(np.sqrt(max(inner(grid, values, values), 0.0)))


def seminorm_h1(grid: Grid, values) -> float:
    """Forward-difference gradient seminorm; zero ghosts for Dirichlet fields."""
    u = np.asarray(values, dtype=float)
    bc = grid.layout_of(u)
    if bc == DIRICHLET:
        u = np.pad(u, 1)
    total = 0.0
    for axis, h in enumerate(grid.h):
        d = np.diff(u, axis=axis) / h
        if bc == DIRICHLET:
            # differences along `axis` only; drop the ghost rows of other axes
            idx = tuple(slice(None) if a == axis else slice(1, -1) for a in range(grid.dim))
            total += grid.cell_measure * np.sum(d[idx] ** 2)
        else:
            # edge length h along `axis`, trapezoid weights across it
            w = np.full(d.shape, h)
            for b in range(grid.dim):
                if b != axis:
                    shape = [1] * grid.dim
                    shape[b] = -1
                    w = w * grid._trap_1d[b].reshape(shape)
            total += np.sum(w * d**2)
    return float(np.sqrt(total))


def norm_h1(grid: Grid, values) -> float:
    return float(np.hypot(norm_l2(grid, values), seminorm_h1(grid, values)))


def lambda1(grid: Grid, rtol: float = 1e-10, max_iter: int = 1000) -> float:
    """Smallest eigenvalue of the discrete Dirichlet operator ``-Laplacian``.

    Inverse power iteration with a sparse LU factorization; the estimate is the
    Rayleigh quotient, iterated until its relative change is below ``rtol``.
    """
    A = sp.csc_matrix(-grid.lap_dirichlet)
    lu = spla.splu(A)
    x = np.ones(A.shape[0])
    x /= np.linalg.norm(x)
    mu = x @ (A @ x)
    for _ in range(max_iter):
        y = lu.solve(x)
        x = y / np.linalg.norm(y)
        mu_new = x @ (A @ x)
        if abs(mu_new - mu) <= rtol * abs(mu_new):
            return float(mu_new)
        mu = mu_new
    raise NoConvergence(f"inverse power iteration did not reach rtol={rtol} in {max_iter} steps")


def lambda1_analytic(grid: Grid) -> float:
    """Closed form ``sum_axes (4/h^2) sin^2(pi h / (2 L))``."""
    return float(sum(4.0 / h**2 * np.sin(np.pi * h / (2 * L)) ** 2 for h, L in zip(grid.h, grid.L)))


# -- snapshots --------------------------------------------------------------

def write_snapshot(path, grid: Grid, values) -> None:
    """Plain-text snapshot: header ``dim n... h... bc`` then one value per line."""
    bc = grid.layout_of(values)
    header = " ".join(
        [str(grid.dim)] + [str(k) for k in grid.n] + [repr(h) for h in grid.h] + [bc]
    )
    body = "\n".join(repr(float(v)) for v in np.asarray(values).ravel())
    Path(path).write_text(header + "\n" + body + "\n")


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(grid, values)``."""
    lines = Path(path).read_text().split("\n")
    head = lines[0].split()
    dim = int(head[0])
    n = tuple(int(x) for x in head[1 : 1 + dim])
    h = tuple(float(x) for x in head[1 + dim : 1 + 2 * dim])
    bc = head[1 + 2 * dim]
    grid = Grid(n, tuple(hh * (k + 1) for hh, k in zip(h, n)))
    vals = np.array([float(x) for x in lines[1:] if x.strip()])
    return grid, vals.reshape(grid.shape(bc))
