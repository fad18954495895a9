"""Piezo-actuated Euler-Bernoulli cantilever: profiles, energy, dynamics, statics.

The beam is clamped at z = 0 and free at z = L. A pair of symmetrically
bonded piezo patches covering [z_p, z_p + L_p] enters through the smoothed
characteristic

    Gamma(z) = tanh(sigma (z - z_p))/2 - tanh(sigma (z - z_p - L_p))/2

whose analytic derivatives define the spatially varying mass density
kappa(z), bending stiffness Theta(z), and the in-domain input intensity
g(z) = -2 Delta_p Gamma''(z). The state is the deflection w and the momentum
density p = kappa(z) w_t; with the energy density

    H = p^2 / (2 kappa) + Theta w_11^2 / 2

the dynamics take the canonical form  w_t = dH/dp,  p_t = -dH/dw + g u.

Derivatives of Gamma are evaluated from tanh identities, never by
differencing: finite differences of a near-step profile would dominate the
error budget of g.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from .grid import (
    Field,
    Grid,
    boundary_eval,
    d1,
    grids_compatible,
    integrate,
    weights,
)
from .variational import Density2, DissipationProfile, boundary_delta, discrete_gradient

#: Transition-resolution guard: sigma * h above this leaves the tanh ramp
#: (width ~ 2/sigma) with fewer than ~8 nodes and silently corrupts Gamma''.
MAX_SHARPNESS_TIMES_H = 0.5

#: Admissible patch placements must leave the characteristic and its slope
#: below this at both domain ends.
BOUNDARY_TAIL_TOL = 1e-8

_CLAMP_TOL = 1e-9


class ResolutionError(ValueError):
    """Raised when the actuator transition is not resolved by the grid."""


@dataclass(frozen=True)
class BeamParams:
    """Material and geometry data for the beam with one patch pair.

    bending_stiffness : E*I of the bare beam (N m^2)
    beam_mass         : rho_b * A_b, beam mass per length (kg/m)
    patch_mass        : rho_p * A_p, mass per length of one patch (kg/m)
    patch_stiffness   : stiffness contribution Theta_p of one patch (N m^2)
    patch_coupling    : electromechanical coupling Delta_p (N m / V)
    patch_start       : z_p, start of the bonded region (m)
    patch_length      : L_p (m)
    sharpness         : sigma of the tanh characteristic (1/m)
    length            : beam length L (m)
    """

    bending_stiffness: float = 1.0
    beam_mass: float = 1.0
    patch_mass: float = 1.0
    patch_stiffness: float = 1.0
    patch_coupling: float = 1.0
    patch_start: float = 0.2
    patch_length: float = 0.2
    sharpness: float = 100.0
    length: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.patch_start < self.patch_start + self.patch_length < self.length):
            raise ValueError(
                "patch must lie strictly inside the domain: need "
                f"0 < patch_start < patch_start + patch_length < length, got "
                f"patch_start={self.patch_start}, patch_length={self.patch_length}, "
                f"length={self.length}"
            )
        if self.bending_stiffness <= 0.0:
            raise ValueError(f"bending_stiffness must be positive, got {self.bending_stiffness}")
        if self.beam_mass <= 0.0:
            raise ValueError(f"beam_mass must be positive, got {self.beam_mass}")
        if self.patch_mass < 0.0:
            raise ValueError(f"patch_mass must be non-negative, got {self.patch_mass}")
        if self.patch_stiffness < 0.0:
            raise ValueError(f"patch_stiffness must be non-negative, got {self.patch_stiffness}")
        if self.sharpness <= 0.0:
            raise ValueError(f"sharpness must be positive, got {self.sharpness}")


@dataclass(frozen=True, eq=False)
class BeamProfiles:
    """Actuator characteristic, its derivatives, and the derived coefficients."""

    grid: Grid
    params: BeamParams
    gamma: Field
    gamma_z: Field
    gamma_zz: Field
    kappa: Field
    theta: Field
    g: Field


@dataclass(frozen=True, eq=False)
class PlantState:
    """Deflection w (m), momentum density p (kg/s), applied voltage u (V)."""

    w: Field
    p: Field
    u: float = 0.0

    def __post_init__(self):
        if not grids_compatible(self.w.grid, self.p.grid):
            raise ValueError("w and p live on different grids")
        if not np.isfinite(self.u):
            raise ValueError("input voltage is not finite")

    @property
    def grid(self) -> Grid:
        return self.w.grid


def _sech2(s: np.ndarray) -> np.ndarray:
    # 4 e^{-2|s|} / (1 + e^{-2|s|})^2, overflow-free for large |s|
    a = np.exp(-2.0 * np.abs(s))
    return 4.0 * a / (1.0 + a) ** 2


def actuator_characteristic(params: BeamParams, grid: Grid) -> BeamProfiles:
    """Gamma, Gamma', Gamma'' (analytic) and kappa, Theta, g on the grid."""
    if abs(grid.L - params.length) > 1e-12 * params.length:
        raise ValueError(
            f"grid length {grid.L} does not match beam length {params.length}"
        )
    sigma = params.sharpness
    if sigma * grid.h > MAX_SHARPNESS_TIMES_H:
        raise ResolutionError(
            f"sharpness*h = {sigma * grid.h:.3g} exceeds {MAX_SHARPNESS_TIMES_H}; "
            f"the tanh transition needs >= {int(np.ceil(2 * sigma * grid.L / MAX_SHARPNESS_TIMES_H)) + 1} "
            "nodes at this sharpness"
        )
    s1 = sigma * (grid.z - params.patch_start)
    s2 = sigma * (grid.z - params.patch_start - params.patch_length)
    gamma = 0.5 * np.tanh(s1) - 0.5 * np.tanh(s2)
    gamma_z = 0.5 * sigma * (_sech2(s1) - _sech2(s2))
    gamma_zz = -(sigma ** 2) * (np.tanh(s1) * _sech2(s1) - np.tanh(s2) * _sech2(s2))

    tails = (abs(gamma[0]), abs(gamma[-1]), abs(gamma_z[0]), abs(gamma_z[-1]))
    if max(tails) > BOUNDARY_TAIL_TOL:
        raise ValueError(
            "actuator characteristic does not decay at the boundary "
            f"(max tail {max(tails):.3g} > {BOUNDARY_TAIL_TOL:g}); move the patch "
            "inward or increase sharpness"
        )

    kappa = params.beam_mass + 2.0 * params.patch_mass * gamma
    theta = params.bending_stiffness + 2.0 * params.patch_stiffness * gamma
    if np.min(kappa) <= 0.0 or np.min(theta) <= 0.0:
        raise ValueError("kappa and Theta must stay positive on the whole domain")

    profiles = BeamProfiles(
        grid=grid,
        params=params,
        gamma=Field(grid, gamma),
        gamma_z=Field(grid, gamma_z),
        gamma_zz=Field(grid, gamma_zz),
        kappa=Field(grid, kappa),
        theta=Field(grid, theta),
        g=Field(grid, -2.0 * params.patch_coupling * gamma_zz),
    )
    return profiles


def input_profile(profiles: BeamProfiles, coupling: float) -> Field:
    """Input intensity g = -2 * coupling * Gamma'' for a given coupling."""
    return Field(profiles.grid, -2.0 * coupling * profiles.gamma_zz.values)


def clamped_curvature_matrix(grid: Grid) -> sparse.csr_matrix:
    """Curvature samples for a beam clamped at node 0 (w(0) = 0, w_1(0) = 0).

    Row 0 uses the reflected ghost node w(-h) = w(h) (the discrete slope
    constraint), interior rows are central, and the free end keeps the
    one-sided stencil. Column 0 is empty: the clamped deflection is not a
    degree of freedom, and the transpose therefore returns a zero force
    there.
    """
    n = grid.n
    h2 = grid.h ** 2
    m = sparse.lil_matrix((n, n))
    m[0, 1] = 2.0 / h2
    for i in range(1, n - 1):
        if i - 1 > 0:
            m[i, i - 1] = 1.0 / h2
        m[i, i] = -2.0 / h2
        m[i, i + 1] = 1.0 / h2
    m[n - 1, n - 1], m[n - 1, n - 2], m[n - 1, n - 3], m[n - 1, n - 4] = (
        2.0 / h2,
        -5.0 / h2,
        4.0 / h2,
        -1.0 / h2,
    )
    return m.tocsr()


def hamiltonian_density(params: BeamParams, profiles: BeamProfiles) -> Density2:
    """Beam energy density with the clamped-end curvature operator installed."""
    grid = profiles.grid
    return Density2(
        grid=grid,
        p_sq=Field(grid, 0.5 / profiles.kappa.values),
        curv_sq=Field(grid, 0.5 * profiles.theta.values),
        curvature=clamped_curvature_matrix(grid),
    )


def check_clamped(state: PlantState):
    """Hard admissibility at the clamped node: w(0) = 0 and p(0) = 0."""
    scale_w = max(1.0, float(np.max(np.abs(state.w.values))))
    scale_p = max(1.0, float(np.max(np.abs(state.p.values))))
    if abs(state.w.values[0]) > _CLAMP_TOL * scale_w:
        raise ValueError(f"clamped-end constraint violated: w(0) = {state.w.values[0]:.3g}")
    if abs(state.p.values[0]) > _CLAMP_TOL * scale_p:
        raise ValueError(f"clamped-end constraint violated: p(0) = {state.p.values[0]:.3g}")


def plant_rhs(
    density: Density2,
    profiles: BeamProfiles,
    state: PlantState,
    dissipation: DissipationProfile | None = None,
) -> tuple[Field, Field]:
    """Rates (w_t, p_t) of the in-domain-actuated beam.

    w_t = dH/dp, p_t = -dH/dw - R dH + g u, with the clamped node held at
    zero rate. The gradient is the discretize-then-vary one, so the power
    balance along these rates is exact.
    """
    if not grids_compatible(state.grid, profiles.grid):
        raise ValueError("state does not live on the profile grid")
    check_clamped(state)
    gw, gp = discrete_gradient(density, state)
    wdot = gp.values.copy()
    pdot = -gw.values + profiles.g.values * state.u
    if dissipation is not None:
        wdot -= dissipation.r_ww.values * gw.values + dissipation.r_wp.values * gp.values
        pdot -= dissipation.r_pw.values * gw.values + dissipation.r_pp.values * gp.values
    wdot[0] = 0.0
    pdot[0] = 0.0
    return Field(state.grid, wdot), Field(state.grid, pdot)


def output_density(profiles: BeamProfiles, state: PlantState) -> Field:
    """Collocated output density y = g * w_t = g * p / kappa (A/m)."""
    if not grids_compatible(state.grid, profiles.grid):
        raise ValueError("state does not live on the profile grid")
    return Field(profiles.grid, profiles.g.values * state.p.values / profiles.kappa.values)


def equilibrium_profile(a: float, b: float, params: BeamParams, grid: Grid) -> Field:
    """Target deflection: flat, then a*(z-z_p)^2 on the patch, then linear."""
    z = grid.z
    zp = params.patch_start
    ze = params.patch_start + params.patch_length
    on_patch = a * (z - zp) ** 2
    beyond = b * (z - ze) + a * params.patch_length ** 2
    vals = np.where(z < zp, 0.0, np.where(z < ze, on_patch, beyond))
    return Field(grid, vals)


def _clamped_stiffness(density: Density2) -> sparse.csc_matrix:
    """Reduced stiffness C_r^T diag(omega*Theta) C_r over the free w nodes."""
    om = weights(density.grid)
    c_r = density.curvature[:, 1:]
    lam = sparse.diags(om * 2.0 * density.curv_sq.values)
    return (c_r.T @ lam @ c_r).tocsc()


def solve_static(u_stat: float, params: BeamParams, profiles: BeamProfiles) -> Field:
    """Stationary deflection under constant voltage u_stat.

    Solves the discrete stationarity condition dH/dw = g * u_stat over the
    free degrees of freedom (the same operator the dynamics use), with
    iterative refinement against the stencil-evaluated force so the returned
    profile is a fixed point of the simulated system to rounding level.
    """
    density = hamiltonian_density(params, profiles)
    grid = profiles.grid
    om = weights(grid)
    rhs_full = om * profiles.g.values * u_stat
    rhs = rhs_full[1:]

    stiffness = _clamped_stiffness(density)
    lu = sparse_linalg.splu(stiffness)
    w_r = lu.solve(rhs)

    # refine against the sequential-stencil force (assembled-matrix residuals
    # carry a much higher rounding floor than the stencil evaluation)
    c_r = density.curvature[:, 1:]
    scale = max(np.max(np.abs(rhs)), 1e-300)
    for _ in range(3):
        force = c_r.T @ (om * 2.0 * density.curv_sq.values * (c_r @ w_r))
        residual = rhs - force
        if np.max(np.abs(residual)) <= 1e-14 * scale:
            break
        w_r = w_r + lu.solve(residual)

    w = np.concatenate(([0.0], w_r))
    return Field(grid, w)


def stationary_input(
    w_target: Field, params: BeamParams, profiles: BeamProfiles
) -> tuple[float, float]:
    """Least-squares constant voltage holding a target profile.

    Minimizes the quadrature-weighted misfit || dH/dw(w_target) - g*u ||
    over the interior nodes and reports (u, normalized residual). For
    targets that are not exact static solutions (e.g. idealized piecewise
    profiles) the residual is the honest measure of the mismatch.
    """
    if not grids_compatible(w_target.grid, profiles.grid):
        raise ValueError("target does not live on the profile grid")
    density = hamiltonian_density(params, profiles)
    state = PlantState(w_target, Field(profiles.grid, np.zeros(profiles.grid.n)))
    force = discrete_gradient(density, state)[0].values
    om = weights(profiles.grid)
    g = profiles.g.values
    sl = slice(1, profiles.grid.n - 1)
    gg = float(np.dot(om[sl], g[sl] * g[sl]))
    if gg <= 0.0:
        raise ValueError("input profile is identically zero; no voltage can hold the target")
    u_stat = float(np.dot(om[sl], g[sl] * force[sl])) / gg
    misfit = force[sl] - g[sl] * u_stat
    norm_force = float(np.sqrt(np.dot(om[sl], force[sl] ** 2)))
    residual = float(np.sqrt(np.dot(om[sl], misfit ** 2))) / max(norm_force, 1e-300)
    return u_stat, residual


def boundary_condition_residuals(state: PlantState, density: Density2) -> tuple[float, float, float, float]:
    """Boundary products (w_t * shear, w_t1 * moment) at z = 0 and z = L.

    All four vanish for admissible clamped-free states; a nonzero value
    flags either a violated clamp or boundary power flow at the free end.
    """
    bd = boundary_delta(density, state)
    wdot = density.partial_p(state)
    wdot_slope = d1(wdot)
    w0, wl = boundary_eval(wdot)
    s0, sl_ = float(wdot_slope.values[0]), float(wdot_slope.values[-1])
    return (
        w0 * bd.w_first[0],
        wl * bd.w_first[1],
        s0 * bd.w_second[0],
        sl_ * bd.w_second[1],
    )


def clamp_slope_residual(state: PlantState) -> float:
    """One-sided second-order slope estimate at the clamped end."""
    v = state.w.values
    h = state.grid.h
    return float((-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h))
