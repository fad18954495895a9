"""Finite-dimensional port-Hamiltonian controller and Casimir machinery.

The controller is the standard lumped form

    x_c_dot = (J_c - R_c) dH_c + G_c u_c,      y_c = G_c^T dH_c

with one shaped state (index 0) tied to the plant through a structural
invariant and the remaining states used for damping injection. The shaped
part of the controller energy is

    H_c = c1/2 (x_c^1 - x1_target - u_stat/c1)^2 + 1/2 x_mu M x_nu

Candidate invariants are densities linear in (w, p) with spatial coefficient
fields; :func:`casimir_residuals` evaluates the four closure conditions
(structure row, domain cancellation, input obstruction, boundary terms)
numerically instead of assuming them.
"""

from dataclasses import dataclass, replace

import numpy as np

from .grid import Field, boundary_eval, grids_compatible, weights
from .variational import Density2, DissipationProfile, boundary_delta
from .beam import (
    BeamParams,
    BeamProfiles,
    actuator_characteristic,
    equilibrium_profile,
    solve_static,
    stationary_input,
)

_MAT_TOL = 1e-12

#: Published gain set of the energy-Casimir design for the unit beam.
DEFAULT_GAINS = {
    "J23": 1.0,
    "R22": 3.0,
    "R23": -1.0,
    "R33": 1.5,
    "M22": 85.0,
    "M23": 0.0,
    "M33": 60.0,
    "G2": 1.7,
    "G3": 1.7,
    "c1": 0.1,
    "K": 1.0,
}


@dataclass(frozen=True, eq=False)
class ControllerParams:
    """Data of the lumped port-Hamiltonian controller.

    J is skew, R symmetric positive semidefinite, M (the damping-state
    energy metric, indices 1..n_c-1) symmetric positive definite, c1 > 0.
    When ``casimir_row`` is set, that row of (J - R) must vanish; requesting
    a shaped state without that structure is rejected outright.
    """

    J: np.ndarray
    R: np.ndarray
    G: np.ndarray
    K: float
    M: np.ndarray
    c1: float
    u_stat: float
    x1_target: float
    casimir_row: int | None = 0

    def __post_init__(self):
        J = np.array(self.J, dtype=float)
        R = np.array(self.R, dtype=float)
        G = np.array(self.G, dtype=float)
        M = np.array(self.M, dtype=float)
        n = J.shape[0]
        if J.shape != (n, n) or R.shape != (n, n) or G.shape != (n,):
            raise ValueError("controller matrices have inconsistent shapes")
        if M.shape != (n - 1, n - 1):
            raise ValueError("damping metric must cover states 2..n_c")
        if np.max(np.abs(J + J.T)) > _MAT_TOL:
            raise ValueError("J must be skew-symmetric")
        if np.max(np.abs(R - R.T)) > _MAT_TOL:
            raise ValueError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(R)) < -1e-10:
            raise ValueError("R must be positive semidefinite")
        if np.max(np.abs(M - M.T)) > _MAT_TOL:
            raise ValueError("M must be symmetric")
        if np.min(np.linalg.eigvalsh(M)) <= 0.0:
            raise ValueError("M must be positive definite")
        if not self.c1 > 0.0:
            raise ValueError(f"c1 must be positive, got {self.c1}")
        if self.casimir_row is not None:
            row = (J - R)[self.casimir_row]
            if np.max(np.abs(row)) > _MAT_TOL:
                raise ValueError(
                    f"row {self.casimir_row} of (J - R) must vanish for a shaped state; "
                    f"max entry {np.max(np.abs(row)):.3g}"
                )
        for name, value in (("J", J), ("R", R), ("G", G), ("M", M)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_states(self) -> int:
        return self.J.shape[0]

    def effort_map(self) -> tuple[np.ndarray, np.ndarray]:
        """(P, b) with dH_c(x) = P x + b."""
        n = self.n_states
        P = np.zeros((n, n))
        P[0, 0] = self.c1
        P[1:, 1:] = self.M
        b = np.zeros(n)
        b[0] = -self.c1 * self.x1_target - self.u_stat
        return P, b


def hc_value(params: ControllerParams, x_c: np.ndarray) -> float:
    """Controller energy at x_c."""
    x_c = np.asarray(x_c, dtype=float)
    shaped = x_c[0] - params.x1_target - params.u_stat / params.c1
    damping = x_c[1:]
    return float(0.5 * params.c1 * shaped ** 2 + 0.5 * damping @ params.M @ damping)


def hc_gradient(params: ControllerParams, x_c: np.ndarray) -> np.ndarray:
    """Gradient of the controller energy."""
    x_c = np.asarray(x_c, dtype=float)
    grad = np.empty(params.n_states)
    grad[0] = params.c1 * (x_c[0] - params.x1_target) - params.u_stat
    grad[1:] = params.M @ x_c[1:]
    return grad


def controller_rhs(params: ControllerParams, x_c: np.ndarray, u_c: float) -> np.ndarray:
    """x_c_dot = (J - R) dH_c + G u_c."""
    x_c = np.asarray(x_c, dtype=float)
    if x_c.shape != (params.n_states,):
        raise ValueError(
            f"controller state has shape {x_c.shape}, expected ({params.n_states},)"
        )
    return (params.J - params.R) @ hc_gradient(params, x_c) + params.G * u_c


def controller_output(params: ControllerParams, x_c: np.ndarray) -> float:
    """Collocated output y_c = G^T dH_c."""
    return float(params.G @ hc_gradient(params, np.asarray(x_c, dtype=float)))


@dataclass(frozen=True, eq=False)
class CasimirCandidate:
    """Candidate invariant density C = phi_w(z) w + phi_p(z) p for one row."""

    phi_w: Field
    phi_p: Field
    row: int = 0

    def __post_init__(self):
        if not grids_compatible(self.phi_w.grid, self.phi_p.grid):
            raise ValueError("candidate coefficients live on different grids")

    def as_density(self) -> Density2:
        grid = self.phi_w.grid
        zero = Field(grid, np.zeros(grid.n))
        return Density2(grid=grid, p_sq=zero, curv_sq=zero, w_lin=self.phi_w, p_lin=self.phi_p)


@dataclass(frozen=True)
class CasimirResiduals:
    """Norms of the four invariance conditions plus the natural scale max|g|."""

    structure: float
    domain: float
    input_obstruction: float
    boundary: float
    scale: float

    def max_residual(self) -> float:
        return max(self.structure, self.domain, self.input_obstruction, self.boundary)

    def passes(self, rel_tol: float = 1e-10) -> bool:
        return self.max_residual() <= rel_tol * self.scale


def casimir_residuals(
    candidate: CasimirCandidate,
    profiles: BeamProfiles,
    params: ControllerParams,
    dissipation: DissipationProfile | None = None,
) -> CasimirResiduals:
    """Evaluate the four invariance conditions for a candidate density.

    (a) the shaped row of (J_c - R_c) vanishes;
    (b) nodewise cancellation of d C (J - R) against G_c K g, per plant field;
    (c) the integrated obstruction d C . G K G_c^T vanishes componentwise;
    (d) the candidate's boundary operators vanish at both ends.
    """
    if not grids_compatible(candidate.phi_w.grid, profiles.grid):
        raise ValueError("candidate does not live on the plant grid")
    lam = candidate.row
    g = profiles.g.values
    scale = float(np.max(np.abs(g)))
    phi_w = candidate.phi_w.values
    phi_p = candidate.phi_p.values

    res_structure = float(np.max(np.abs((params.J - params.R)[lam])))

    # plant interconnection J = [[0, 1], [-1, 0]], input map (0, g)
    if dissipation is None:
        r_ww = r_wp = r_pw = r_pp = 0.0
    else:
        r_ww, r_wp = dissipation.r_ww.values, dissipation.r_wp.values
        r_pw, r_pp = dissipation.r_pw.values, dissipation.r_pp.values
    coupling = params.G[lam] * params.K
    cond_b_w = phi_w * (-r_ww) + phi_p * (-1.0 - r_pw)
    cond_b_p = phi_w * (1.0 - r_wp) + phi_p * (-r_pp) + coupling * g
    res_domain = float(max(np.max(np.abs(cond_b_w)), np.max(np.abs(cond_b_p))))

    om = weights(profiles.grid)
    obstruction = float(np.dot(om, phi_p * g)) * params.K
    res_input = float(np.max(np.abs(obstruction * params.G)))

    bd = boundary_delta(candidate.as_density(), _zero_state(profiles))
    res_boundary = float(
        max(
            abs(bd.w_first[0]), abs(bd.w_first[1]),
            abs(bd.w_second[0]), abs(bd.w_second[1]),
            abs(bd.p_first[0]), abs(bd.p_first[1]),
            abs(bd.p_second[0]), abs(bd.p_second[1]),
        )
    )
    return CasimirResiduals(
        structure=res_structure,
        domain=res_domain,
        input_obstruction=res_input,
        boundary=res_boundary,
        scale=scale,
    )


def _zero_state(profiles: BeamProfiles):
    from .beam import PlantState

    zero = Field(profiles.grid, np.zeros(profiles.grid.n))
    return PlantState(zero, zero)


def deflection_candidate(profiles: BeamProfiles, params: ControllerParams) -> CasimirCandidate:
    """The canonical valid candidate C = -(G_c^1 K) g(z) w."""
    grid = profiles.grid
    phi_w = Field(grid, -params.G[0] * params.K * profiles.g.values)
    phi_p = Field(grid, np.zeros(grid.n))
    return CasimirCandidate(phi_w=phi_w, phi_p=phi_p, row=0)


def momentum_candidate(profiles: BeamProfiles, params: ControllerParams) -> CasimirCandidate:
    """Deliberately invalid candidate C = -g(z) p (wrong slot)."""
    grid = profiles.grid
    phi_w = Field(grid, np.zeros(grid.n))
    phi_p = Field(grid, -params.G[0] * params.K * profiles.g.values)
    return CasimirCandidate(phi_w=phi_w, phi_p=phi_p, row=0)


def design_energy_casimir_controller(
    params: BeamParams,
    profiles: BeamProfiles,
    a: float = 0.3587,
    b: float = 0.1436,
    gains: dict | None = None,
) -> ControllerParams:
    """Three-state energy-Casimir controller for the quadratic-tip target.

    The target profile is flat before the patch, has curvature 2a on it, and
    tail slope b. The stationary voltage comes from the least-squares fit to
    that target; the shaped-state setpoint is the weighted deflection
    integral of the *achievable* static profile at that voltage, which makes
    the closed-loop equilibrium an exact fixed point of the discrete system.

    ``gains`` may override individual entries of :data:`DEFAULT_GAINS`.
    """
    gain = dict(DEFAULT_GAINS)
    if gains:
        unknown = set(gains) - set(gain)
        if unknown:
            raise ValueError(f"unknown gain overrides: {sorted(unknown)}")
        gain.update(gains)

    J = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.0, 0.0, gain["J23"]],
            [0.0, -gain["J23"], 0.0],
        ]
    )
    R = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.0, gain["R22"], gain["R23"]],
            [0.0, gain["R23"], gain["R33"]],
        ]
    )
    G = np.array([1.0, gain["G2"], gain["G3"]])
    M = np.array([[gain["M22"], gain["M23"]], [gain["M23"], gain["M33"]]])

    w_target = equilibrium_profile(a, b, params, profiles.grid)
    u_stat, _residual = stationary_input(w_target, params, profiles)
    w_static = solve_static(u_stat, params, profiles)
    om = weights(profiles.grid)
    x1_target = float(np.dot(om, profiles.g.values * w_static.values))

    return ControllerParams(
        J=J,
        R=R,
        G=G,
        K=gain["K"],
        M=M,
        c1=gain["c1"],
        u_stat=u_stat,
        x1_target=x1_target,
        casimir_row=0,
    )


def with_unchecked_structure(params: ControllerParams, **overrides) -> ControllerParams:
    """Copy of the controller with structural validation of the shaped row off.

    Used to build deliberately broken closed loops (e.g. a wrong
    interconnection gain) whose failure the diagnostics are supposed to
    flag.
    """
    return replace(params, casimir_row=None, **overrides)
