"""Uniform 1-D grid, second-order difference operators, and trapezoidal quadrature.

All spatial operators in the package are built from the pieces here: central
stencils in the interior, one-sided second-order stencils at the endpoints,
and trapezoid weights (h/2, h, ..., h, h/2). Every quadrature in the package
goes through :func:`weights` / :func:`integrate` so that discrete energy
identities hold bitwise.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

#: Smallest admissible node count (the one-sided stencils plus a usable
#: interior need at least this much support).
MIN_NODES = 9


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform mesh on [0, L] with n nodes and spacing h = L/(n-1)."""

    L: float
    n: int
    h: float
    z: np.ndarray


def make_grid(L: float, n: int) -> Grid:
    """Build a uniform grid on [0, L] with n nodes.

    Rejects degenerate domains (L <= 0) and node counts below
    :data:`MIN_NODES`, which would leave the one-sided stencils without
    support.
    """
    if L <= 0.0:
        raise ValueError(f"domain length must be positive, got L={L}")
    if n < MIN_NODES:
        raise ValueError(f"need at least {MIN_NODES} nodes, got n={n}")
    z = np.linspace(0.0, float(L), int(n))
    z.setflags(write=False)
    return Grid(L=float(L), n=int(n), h=float(L) / (int(n) - 1), z=z)


def grids_compatible(a: Grid, b: Grid) -> bool:
    return a is b or (a.n == b.n and a.L == b.L)


@dataclass(frozen=True, eq=False)
class Field:
    """Discrete real-valued function on a :class:`Grid` (one value per node)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n,):
            raise ValueError(
                f"field has {values.shape} values for a grid with {self.grid.n} nodes"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def _require_same_grid(a: Field, b: Field):
    if not grids_compatible(a.grid, b.grid):
        raise ValueError("fields live on different grids")


def weights(grid: Grid) -> np.ndarray:
    """Trapezoid quadrature weights (h/2, h, ..., h, h/2)."""
    w = np.full(grid.n, grid.h)
    w[0] = 0.5 * grid.h
    w[-1] = 0.5 * grid.h
    return w


def integrate(f: Field) -> float:
    """Trapezoidal quadrature of a field over [0, L]."""
    return float(np.dot(weights(f.grid), f.values))


def boundary_eval(f: Field) -> tuple[float, float]:
    """Endpoint samples (f(0), f(L))."""
    return float(f.values[0]), float(f.values[-1])


def d1(f: Field) -> Field:
    """First derivative: central interior stencil, one-sided 2nd-order ends."""
    v = f.values
    h = f.grid.h
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return Field(f.grid, out)


def d11(f: Field) -> Field:
    """Second derivative: 3-point interior stencil, one-sided 2nd-order ends."""
    v = f.values
    h2 = f.grid.h ** 2
    out = np.empty_like(v)
    out[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / h2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    return Field(f.grid, out)


def d1_matrix(grid: Grid) -> sparse.csr_matrix:
    """Sparse matrix form of :func:`d1`."""
    n, h = grid.n, grid.h
    m = sparse.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1] = -0.5 / h
        m[i, i + 1] = 0.5 / h
    m[0, 0], m[0, 1], m[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
    m[n - 1, n - 1], m[n - 1, n - 2], m[n - 1, n - 3] = 1.5 / h, -2.0 / h, 0.5 / h
    return m.tocsr()


def d11_matrix(grid: Grid) -> sparse.csr_matrix:
    """Sparse matrix form of :func:`d11`."""
    n = grid.n
    h2 = grid.h ** 2
    m = sparse.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1] = 1.0 / h2
        m[i, i] = -2.0 / h2
        m[i, i + 1] = 1.0 / h2
    m[0, 0], m[0, 1], m[0, 2], m[0, 3] = 2.0 / h2, -5.0 / h2, 4.0 / h2, -1.0 / h2
    m[n - 1, n - 1], m[n - 1, n - 2], m[n - 1, n - 3], m[n - 1, n - 4] = (
        2.0 / h2,
        -5.0 / h2,
        4.0 / h2,
        -1.0 / h2,
    )
    return m.tocsr()
