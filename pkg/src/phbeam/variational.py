"""Variational derivative, boundary operators, and power-balance bookkeeping.

Densities are restricted to the quadratic-plus-linear form

    H(z, w, p, w_11) = a_p(z) p^2 + a_m(z) w_11^2 + b_w(z) w + b_p(z) p

which covers the beam energy exactly (a_p = 1/(2 kappa), a_m = Theta/2) and
linear invariant densities (b_w, b_p only). Two gradient routes are exposed:

* :func:`variational_derivative` composes the grid difference operators, i.e.
  the classical Euler operator  delta_a = d/dx_a - d1 d/dx_a^1 + d11 d/dx_a^11
  evaluated nodewise. It is the analysis route.
* :func:`discrete_gradient` differentiates the quadrature-discretized energy
  with respect to the nodal values and rescales by the quadrature weights.
  It is the route the time integrator uses; with it the discrete power
  balance is an exact algebraic identity rather than an O(h^2) statement.

A density may carry its own curvature operator (the beam installs a
clamped-end variant); the default is the plain grid second-difference matrix.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .grid import (
    Field,
    Grid,
    d1,
    d11,
    d11_matrix,
    grids_compatible,
    weights,
)

_PSD_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Density2:
    """Quadratic-plus-linear density for two fields (w, p) on one grid.

    ``curvature`` maps nodal w values to nodal curvature samples; the energy
    and the discrete gradient use it (and its transpose). The partial
    derivative evaluators used by the variational route always use the plain
    grid operators, so the two routes can be cross-checked.
    """

    grid: Grid
    p_sq: Field
    curv_sq: Field
    w_lin: Field | None = None
    p_lin: Field | None = None
    curvature: sparse.spmatrix = None

    def __post_init__(self):
        for f in (self.p_sq, self.curv_sq, self.w_lin, self.p_lin):
            if f is not None and not grids_compatible(f.grid, self.grid):
                raise ValueError("density coefficients live on different grids")
        if self.curvature is None:
            object.__setattr__(self, "curvature", d11_matrix(self.grid))
        if self.curvature.shape != (self.grid.n, self.grid.n):
            raise ValueError("curvature operator has the wrong shape")

    # -- nodewise evaluation ------------------------------------------------

    def curvature_of(self, w: np.ndarray) -> np.ndarray:
        return self.curvature @ w

    def density_values(self, w: np.ndarray, p: np.ndarray) -> np.ndarray:
        m = self.curvature_of(w)
        out = self.p_sq.values * p * p + self.curv_sq.values * m * m
        if self.w_lin is not None:
            out = out + self.w_lin.values * w
        if self.p_lin is not None:
            out = out + self.p_lin.values * p
        return out

    def density(self, state) -> Field:
        return Field(self.grid, self.density_values(state.w.values, state.p.values))

    def energy_wp(self, w: np.ndarray, p: np.ndarray) -> float:
        return float(np.dot(weights(self.grid), self.density_values(w, p)))

    def energy(self, state) -> float:
        """Total energy: trapezoid quadrature of the density."""
        return self.energy_wp(state.w.values, state.p.values)

    # -- partial derivative evaluators (plain grid jets) ---------------------

    def partial_w(self, state) -> Field:
        vals = np.zeros(self.grid.n) if self.w_lin is None else self.w_lin.values.copy()
        return Field(self.grid, vals)

    def partial_p(self, state) -> Field:
        vals = 2.0 * self.p_sq.values * state.p.values
        if self.p_lin is not None:
            vals = vals + self.p_lin.values
        return Field(self.grid, vals)

    def partial_w11(self, state) -> Field:
        return Field(self.grid, 2.0 * self.curv_sq.values * d11(state.w).values)


def _check_state(h: Density2, state):
    if not grids_compatible(state.w.grid, h.grid):
        raise ValueError("state does not live on the density grid")


def variational_derivative(h: Density2, state) -> tuple[Field, Field]:
    """Nodewise Euler operator (delta_w H, delta_p H) via the grid stencils."""
    _check_state(h, state)
    dw = h.partial_w(state).values + d11(h.partial_w11(state)).values
    dp = h.partial_p(state).values
    return Field(h.grid, dw), Field(h.grid, dp)


def discrete_gradient(h: Density2, state) -> tuple[Field, Field]:
    """Gradient of the discrete energy w.r.t. nodal values, over the weights.

    Computed by sequential stencil applications (never through a
    pre-assembled fourth-order matrix) so that the rounding floor stays at
    the level of the local stencil sums.
    """
    _check_state(h, state)
    om = weights(h.grid)
    m = h.curvature_of(state.w.values)
    dw = (h.curvature.T @ (om * 2.0 * h.curv_sq.values * m)) / om
    if h.w_lin is not None:
        dw = dw + h.w_lin.values
    dp = 2.0 * h.p_sq.values * state.p.values
    if h.p_lin is not None:
        dp = dp + h.p_lin.values
    return Field(h.grid, dw), Field(h.grid, dp)


@dataclass(frozen=True)
class BoundaryDelta:
    """Endpoint values of the two boundary operators, per field.

    ``w_first``  : delta^{d,1}_w H = d_w^1 H - d1(d_w^11 H) at (0, L)
    ``w_second`` : delta^{d,2}_w H = d_w^11 H at (0, L)
    and the p analogues (identically zero for the densities handled here,
    but evaluated rather than assumed).
    """

    w_first: tuple[float, float]
    w_second: tuple[float, float]
    p_first: tuple[float, float]
    p_second: tuple[float, float]


def boundary_delta(h: Density2, state) -> BoundaryDelta:
    _check_state(h, state)
    dw11 = h.partial_w11(state)
    w_first_field = -d1(dw11).values
    zeros = (0.0, 0.0)
    return BoundaryDelta(
        w_first=(float(w_first_field[0]), float(w_first_field[-1])),
        w_second=(float(dw11.values[0]), float(dw11.values[-1])),
        p_first=zeros,
        p_second=zeros,
    )


@dataclass(frozen=True, eq=False)
class DissipationProfile:
    """Pointwise symmetric positive-semidefinite 2x2 coefficient matrix R(z)."""

    r_ww: Field
    r_wp: Field
    r_pw: Field
    r_pp: Field

    def __post_init__(self):
        g = self.r_ww.grid
        for f in (self.r_wp, self.r_pw, self.r_pp):
            if not grids_compatible(f.grid, g):
                raise ValueError("dissipation coefficients live on different grids")
        if np.max(np.abs(self.r_wp.values - self.r_pw.values)) > _PSD_TOL:
            raise ValueError("dissipation matrix is not symmetric")
        det = self.r_ww.values * self.r_pp.values - self.r_wp.values * self.r_pw.values
        if (
            np.min(self.r_ww.values) < -_PSD_TOL
            or np.min(self.r_pp.values) < -_PSD_TOL
            or np.min(det) < -_PSD_TOL
        ):
            raise ValueError("dissipation matrix is not positive semidefinite")

    @property
    def grid(self) -> Grid:
        return self.r_ww.grid

    def quadratic_form(self, ew: np.ndarray, ep: np.ndarray) -> np.ndarray:
        """Nodewise e^T R e for effort fields e = (ew, ep)."""
        return (
            self.r_ww.values * ew * ew
            + (self.r_wp.values + self.r_pw.values) * ew * ep
            + self.r_pp.values * ep * ep
        )


def viscous_dissipation(grid: Grid, r_pp) -> DissipationProfile:
    """diag(0, r(z)) profile; r may be a scalar or an array of nodal values."""
    r = np.broadcast_to(np.asarray(r_pp, dtype=float), (grid.n,)).copy()
    zero = Field(grid, np.zeros(grid.n))
    return DissipationProfile(zero, zero, zero, Field(grid, r))


def power_balance_residual(
    h: Density2,
    r: DissipationProfile | None,
    state,
    wdot: Field,
    pdot: Field,
    u: float,
    y: Field,
) -> float:
    """dH/dt minus the power balance right-hand side.

    dH/dt is assembled from the supplied rates and the discrete gradient;
    the right-hand side is -int(dH R dH) + u * int(y). For rates generated
    by the package's own structure-preserving vector fields the residual sits
    at rounding level.
    """
    _check_state(h, state)
    om = weights(h.grid)
    gw, gp = discrete_gradient(h, state)
    dhdt = float(np.dot(om, gw.values * wdot.values + gp.values * pdot.values))
    dissipated = 0.0
    if r is not None:
        dissipated = float(np.dot(om, r.quadratic_form(gw.values, gp.values)))
    supplied = u * float(np.dot(om, y.values))
    return dhdt - (-dissipated + supplied)
