"""Plant-controller interconnection, affine assembly, and midpoint integration.

Both Hamiltonians are quadratic, so the interconnected system is affine,
x_dot = A x + c, over the stacked unknowns (free deflection nodes, free
momentum nodes, controller states). The implicit midpoint rule is then a
Cayley map: it preserves every quadratic invariant of the flow exactly and
turns the formal energy and Casimir identities into machine-precision test
assertions. The step map and its factorization are computed once per
(system, dt) pair; the system is time-invariant.
"""

import warnings
from dataclasses import dataclass, field as dataclass_field
from typing import Callable

import numpy as np
from scipy import linalg as scipy_linalg

from .grid import Field, Grid, grids_compatible, weights
from .variational import Density2, DissipationProfile, discrete_gradient
from .beam import (
    BeamParams,
    BeamProfiles,
    PlantState,
    actuator_characteristic,
    hamiltonian_density,
    plant_rhs,
    output_density,
    solve_static,
)
from .controller import (
    ControllerParams,
    controller_output,
    controller_rhs,
    hc_gradient,
    hc_value,
)


class NumericalError(RuntimeError):
    """Assembly cross-check or linear-solve failure."""


def interconnect(y_integral: float, y_c: float, coupling: float) -> tuple[float, float]:
    """Power-conserving coupling (u, u_c) = (-K y_c, K int(y)).

    By construction u * int(y) + u_c * y_c = 0.
    """
    return -coupling * y_c, coupling * y_integral


@dataclass(frozen=True, eq=False)
class ClosedLoopState:
    """Plant fields, controller state, and time."""

    w: Field
    p: Field
    x_c: np.ndarray | None
    t: float


@dataclass(eq=False)
class AssembledSystem:
    """Affine closed- or open-loop system x_dot = A x + c (+ b_in * u)."""

    A: np.ndarray
    c: np.ndarray
    b_in: np.ndarray | None
    grid: Grid
    profiles: BeamProfiles
    density: Density2
    controller: ControllerParams | None
    dissipation: DissipationProfile | None
    _steppers: dict = dataclass_field(default_factory=dict)

    @property
    def n_free(self) -> int:
        return self.grid.n - 1

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def pack(self, w: np.ndarray, p: np.ndarray, x_c=None) -> np.ndarray:
        parts = [w[1:], p[1:]]
        if self.controller is not None:
            parts.append(np.asarray(x_c, dtype=float))
        return np.concatenate(parts)

    def unpack(self, x: np.ndarray):
        nf = self.n_free
        w = np.concatenate(([0.0], x[:nf]))
        p = np.concatenate(([0.0], x[nf:2 * nf]))
        x_c = x[2 * nf:].copy() if self.controller is not None else None
        return w, p, x_c

    def rhs(self, x: np.ndarray, u_ext: float = 0.0) -> np.ndarray:
        out = self.A @ x + self.c
        if self.b_in is not None and u_ext != 0.0:
            out = out + self.b_in * u_ext
        return out

    # -- per-state observables -----------------------------------------------

    def output_integral(self, x: np.ndarray) -> float:
        """int(y) dz = int(g p / kappa) dz at the packed state."""
        nf = self.n_free
        om = weights(self.grid)
        gk = self.profiles.g.values / self.profiles.kappa.values
        return float(np.dot(om[1:] * gk[1:], x[nf:2 * nf]))

    def plant_energy(self, x: np.ndarray) -> float:
        w, p, _ = self.unpack(x)
        return self.density.energy_wp(w, p)

    def casimir_value(self, x: np.ndarray) -> float:
        """Designed invariant x_c^1 - int(g w) dz."""
        if self.controller is None:
            raise ValueError("open-loop system has no controller invariant")
        w, _, x_c = self.unpack(x)
        om = weights(self.grid)
        return float(x_c[0] - np.dot(om, self.profiles.g.values * w))

    def dissipation_rate(self, x: np.ndarray) -> float:
        """Instantaneous dissipated power at the packed state."""
        rate = 0.0
        if self.controller is not None:
            grad = hc_gradient(self.controller, x[2 * self.n_free:])
            rate += float(grad @ self.controller.R @ grad)
        if self.dissipation is not None:
            w, p, _ = self.unpack(x)
            state = PlantState(Field(self.grid, w), Field(self.grid, p))
            gw, gp = discrete_gradient(self.density, state)
            om = weights(self.grid)
            rate += float(np.dot(om, self.dissipation.quadratic_form(gw.values, gp.values)))
        return rate


def _diagonal_dissipation(dissipation: DissipationProfile | None, n: int):
    if dissipation is None:
        return np.zeros(n), np.zeros(n)
    off = max(
        np.max(np.abs(dissipation.r_wp.values)),
        np.max(np.abs(dissipation.r_pw.values)),
    )
    if off > 0.0:
        raise ValueError("assembly supports diagonal plant dissipation only")
    return dissipation.r_ww.values, dissipation.r_pp.values


def assemble(
    profiles: BeamProfiles,
    density: Density2,
    controller: ControllerParams | None = None,
    dissipation: DissipationProfile | None = None,
    check: bool = True,
) -> AssembledSystem:
    """Build the affine system and cross-check it against the modular rates.

    The assembled matrix must reproduce plant_rhs + controller_rhs +
    interconnect exactly; a mismatch beyond rounding aborts construction.
    """
    grid = profiles.grid
    n = grid.n
    nf = n - 1
    om = weights(grid)
    kappa = profiles.kappa.values
    g = profiles.g.values

    c_r = density.curvature[:, 1:]
    stiff = (c_r.T @ (np.reshape(om * 2.0 * density.curv_sq.values, (n, 1)) * c_r.toarray()))
    force_map = stiff / om[1:, None]  # rows scaled back to rate units

    r_ww, r_pp = _diagonal_dissipation(dissipation, n)

    n_c = 0 if controller is None else controller.n_states
    dim = 2 * nf + n_c
    A = np.zeros((dim, dim))
    c_vec = np.zeros(dim)
    sl_w = slice(0, nf)
    sl_p = slice(nf, 2 * nf)

    A[sl_w, sl_p] = np.diag(1.0 / kappa[1:])
    A[sl_p, sl_w] = -force_map
    if dissipation is not None:
        A[sl_w, sl_w] = -r_ww[1:, None] * force_map
        A[sl_p, sl_p] = -np.diag(r_pp[1:] / kappa[1:])

    b_in = None
    if controller is None:
        b_in = np.zeros(dim)
        b_in[sl_p] = g[1:]
    else:
        sl_c = slice(2 * nf, dim)
        P, b = controller.effort_map()
        JR = controller.J - controller.R
        K = controller.K
        G = controller.G
        A[sl_p, sl_c] = -K * np.outer(g[1:], G @ P)
        c_vec[sl_p] = -K * float(G @ b) * g[1:]
        A[sl_c, sl_p] = K * np.outer(G, om[1:] * g[1:] / kappa[1:])
        A[sl_c, sl_c] = JR @ P
        c_vec[sl_c] = JR @ b

    system = AssembledSystem(
        A=A,
        c=c_vec,
        b_in=b_in,
        grid=grid,
        profiles=profiles,
        density=density,
        controller=controller,
        dissipation=dissipation,
    )
    if check:
        _cross_check(system)
    return system


def _cross_check(system: AssembledSystem, n_trials: int = 3, tol: float = 1e-12):
    """Compare A x + c against the modular rate evaluation on random states."""
    rng = np.random.default_rng(1234)
    grid = system.grid
    for _ in range(n_trials):
        w = rng.standard_normal(grid.n)
        p = rng.standard_normal(grid.n)
        w[0] = 0.0
        p[0] = 0.0
        if system.controller is not None:
            x_c = rng.standard_normal(system.controller.n_states)
            x = system.pack(w, p, x_c)
            y_c = controller_output(system.controller, x_c)
            int_y = system.output_integral(x)
            u, u_c = interconnect(int_y, y_c, system.controller.K)
            xc_dot = controller_rhs(system.controller, x_c, u_c)
            u_ext = 0.0
        else:
            x_c = None
            x = system.pack(w, p)
            u = u_ext = float(rng.standard_normal())
            xc_dot = None
        state = PlantState(Field(grid, w), Field(grid, p), u=u)
        wdot, pdot = plant_rhs(system.density, system.profiles, state, system.dissipation)
        direct = np.concatenate(
            [wdot.values[1:], pdot.values[1:]] + ([] if xc_dot is None else [xc_dot])
        )
        assembled = system.rhs(x, u_ext=u_ext)
        scale = max(float(np.max(np.abs(direct))), 1e-300)
        mismatch = float(np.max(np.abs(assembled - direct)))
        if mismatch > tol * scale:
            raise NumericalError(
                f"assembled system disagrees with modular rates: "
                f"|mismatch| = {mismatch:.3e} vs {tol:.0e} * {scale:.3e}"
            )


class MidpointStepper:
    """One-step implicit midpoint map for x_dot = A x + c (+ b u(t)).

    x' solves (I - dt/2 A) x' = (I + dt/2 A) x + dt c + dt u_mid b. The
    factorization and the explicit step matrix are formed once.
    """

    def __init__(self, A, c, dt, b_in=None, cond_warn=1e12):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        c = np.atleast_1d(np.asarray(c, dtype=float))
        if dt <= 0.0:
            raise ValueError(f"time step must be positive, got {dt}")
        n = A.shape[0]
        eye = np.eye(n)
        self.dt = float(dt)
        self.m_minus = eye - 0.5 * dt * A
        self.m_plus = eye + 0.5 * dt * A
        cond = np.linalg.cond(self.m_minus, 1)
        if not np.isfinite(cond) or cond > cond_warn:
            warnings.warn(
                f"midpoint matrix condition estimate {cond:.3e} exceeds {cond_warn:.0e}",
                RuntimeWarning,
                stacklevel=2,
            )
        self._lu = scipy_linalg.lu_factor(self.m_minus)
        if not np.all(np.isfinite(self._lu[0])) or np.min(np.abs(np.diag(self._lu[0]))) == 0.0:
            raise NumericalError("singular midpoint matrix")
        self.step_matrix = scipy_linalg.lu_solve(self._lu, self.m_plus)
        self.step_offset = scipy_linalg.lu_solve(self._lu, dt * c)
        self.input_offset = None
        if b_in is not None:
            self.input_offset = scipy_linalg.lu_solve(self._lu, dt * np.asarray(b_in, dtype=float))
        self._c = c
        self._b = None if b_in is None else np.asarray(b_in, dtype=float)

    def step(self, x, u_mid: float = 0.0) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = self.step_matrix @ x + self.step_offset
        if u_mid != 0.0:
            if self.input_offset is None:
                raise ValueError("stepper has no input column")
            out = out + u_mid * self.input_offset
        return out

    def residual(self, x, x_next, u_mid: float = 0.0) -> float:
        rhs = self.m_plus @ x + self.dt * self._c
        if u_mid != 0.0:
            rhs = rhs + self.dt * u_mid * self._b
        r = self.m_minus @ x_next - rhs
        scale = max(float(np.linalg.norm(rhs)), 1e-300)
        return float(np.linalg.norm(r)) / scale

    def step_checked(self, x, u_mid: float = 0.0, tol: float = 1e-12) -> np.ndarray:
        x_next = self.step(x, u_mid)
        if self.residual(x, x_next, u_mid) > tol:
            rhs = self.m_plus @ np.atleast_1d(x) + self.dt * self._c
            if u_mid != 0.0:
                rhs = rhs + self.dt * u_mid * self._b
            x_next = x_next + scipy_linalg.lu_solve(self._lu, rhs - self.m_minus @ x_next)
            if self.residual(x, x_next, u_mid) > tol:
                raise NumericalError("midpoint solve did not reach the residual tolerance")
        return x_next


def step_midpoint(system: AssembledSystem, x: np.ndarray, dt: float) -> np.ndarray:
    """Single midpoint step of an assembled system (factorized once per dt)."""
    stepper = system._steppers.get(dt)
    if stepper is None:
        stepper = MidpointStepper(system.A, system.c, dt, system.b_in)
        system._steppers[dt] = stepper
    return stepper.step_checked(x)


@dataclass(eq=False)
class Scenario:
    """Everything one run needs: plant, controller, integrator, initial data."""

    params: BeamParams
    grid: Grid
    controller: ControllerParams | None
    dissipation: DissipationProfile | None = None
    dt: float = 1e-3
    t_final: float = 30.0
    snapshot_stride: int = 100
    initial_kind: str = "zero"  # "zero" | "static_scaled" | "fields"
    initial_factor: float = 0.0
    w0: Field | None = None
    p0: Field | None = None
    input: Callable[[float], float] | None = None

    def __post_init__(self):
        if self.dt <= 0.0 or self.t_final <= 0.0:
            raise ValueError("dt and t_final must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if self.initial_kind not in ("zero", "static_scaled", "fields"):
            raise ValueError(f"unknown initial condition kind {self.initial_kind!r}")
        if self.initial_kind == "fields" and (self.w0 is None or self.p0 is None):
            raise ValueError("initial_kind='fields' needs explicit w0 and p0")
        if self.controller is not None and self.input is not None:
            raise ValueError("a closed-loop scenario cannot also have a prescribed input")


@dataclass(eq=False)
class Trace:
    """Per-step scalars plus strided deflection snapshots.

    ``diss[k]`` for k < n_steps is the dissipation rate at the midpoint of
    step k (the quantity the midpoint rule balances exactly against the
    energy decrement); the final entry is the instantaneous rate at the end
    state. ``energy_in`` accumulates dt * u * int(y) over step midpoints.
    """

    t: np.ndarray
    H: np.ndarray
    Hc: np.ndarray | None
    Hcl: np.ndarray
    C1: np.ndarray | None
    u: np.ndarray
    uc: np.ndarray | None
    yc: np.ndarray | None
    int_y: np.ndarray
    diss: np.ndarray
    snap_t: np.ndarray
    snap_w: np.ndarray
    grid: Grid
    dt: float
    energy_in: float
    final: ClosedLoopState

    @property
    def has_controller(self) -> bool:
        return self.Hc is not None


def _initial_fields(scenario: Scenario, profiles: BeamProfiles):
    grid = scenario.grid
    if scenario.initial_kind == "zero":
        w0 = np.zeros(grid.n)
        p0 = np.zeros(grid.n)
    elif scenario.initial_kind == "static_scaled":
        if scenario.controller is None:
            raise ValueError("static_scaled initial data needs a controller (for u_stat)")
        w_s = solve_static(scenario.controller.u_stat, scenario.params, profiles)
        w0 = scenario.initial_factor * w_s.values
        p0 = np.zeros(grid.n)
    else:
        if not grids_compatible(scenario.w0.grid, grid):
            raise ValueError("initial fields live on a different grid")
        w0 = scenario.w0.values.copy()
        p0 = scenario.p0.values.copy()
        w0[0] = 0.0
        p0[0] = 0.0
    return w0, p0


def simulate(scenario: Scenario) -> Trace:
    """Integrate a scenario with the implicit midpoint rule and record a trace.

    For closed loops the initial shaped controller state is always set to
    int(g w(0)) dz, which pins the designed invariant to zero exactly.
    """
    params = scenario.params
    grid = scenario.grid
    profiles = actuator_characteristic(params, grid)
    density = hamiltonian_density(params, profiles)
    system = assemble(profiles, density, scenario.controller, scenario.dissipation)
    om = weights(grid)
    g = profiles.g.values

    w0, p0 = _initial_fields(scenario, profiles)
    controller = scenario.controller
    if controller is not None:
        x_c0 = np.zeros(controller.n_states)
        x_c0[0] = float(np.dot(om, g * w0))
        x = system.pack(w0, p0, x_c0)
    else:
        x = system.pack(w0, p0)

    dt = scenario.dt
    n_steps = int(round(scenario.t_final / dt))
    if n_steps < 1:
        raise ValueError("t_final shorter than one step")
    stepper = MidpointStepper(system.A, system.c, dt, system.b_in)
    system._steppers[dt] = stepper

    m = n_steps + 1
    t = dt * np.arange(m)
    H = np.empty(m)
    Hcl = np.empty(m)
    u_rec = np.empty(m)
    int_y = np.empty(m)
    diss = np.empty(m)
    if controller is not None:
        Hc = np.empty(m)
        C1 = np.empty(m)
        uc = np.empty(m)
        yc = np.empty(m)
    else:
        Hc = C1 = uc = yc = None

    snaps_t = []
    snaps_w = []
    drive = scenario.input
    energy_in = 0.0

    def record(k, xk):
        H[k] = system.plant_energy(xk)
        int_y[k] = system.output_integral(xk)
        if controller is not None:
            x_ck = xk[2 * system.n_free:]
            Hc[k] = hc_value(controller, x_ck)
            Hcl[k] = H[k] + Hc[k]
            C1[k] = system.casimir_value(xk)
            y_ck = controller_output(controller, x_ck)
            u_k, uc_k = interconnect(int_y[k], y_ck, controller.K)
            yc[k] = y_ck
            uc[k] = uc_k
            u_rec[k] = u_k
        else:
            Hcl[k] = H[k]
            u_rec[k] = drive(t[k]) if drive is not None else 0.0
        if k % scenario.snapshot_stride == 0:
            w_k, _, _ = system.unpack(xk)
            snaps_t.append(t[k])
            snaps_w.append(w_k)

    record(0, x)
    check_every = 1000
    for k in range(n_steps):
        u_mid = drive(t[k] + 0.5 * dt) if drive is not None else 0.0
        if k % check_every == 0 or k == n_steps - 1:
            x_next = stepper.step_checked(x, u_mid)
        else:
            x_next = stepper.step(x, u_mid)
        x_mid = 0.5 * (x + x_next)
        diss[k] = system.dissipation_rate(x_mid)
        if controller is not None:
            x_cm = x_mid[2 * system.n_free:]
            u_m = -controller.K * controller_output(controller, x_cm)
        else:
            u_m = u_mid
        if u_m != 0.0:
            energy_in += dt * u_m * system.output_integral(x_mid)
        x = x_next
        record(k + 1, x)
    diss[n_steps] = system.dissipation_rate(x)

    w_f, p_f, x_cf = system.unpack(x)
    final = ClosedLoopState(
        w=Field(grid, w_f), p=Field(grid, p_f), x_c=x_cf, t=float(t[-1])
    )
    return Trace(
        t=t,
        H=H,
        Hc=Hc,
        Hcl=Hcl,
        C1=C1,
        u=u_rec,
        uc=uc,
        yc=yc,
        int_y=int_y,
        diss=diss,
        snap_t=np.array(snaps_t),
        snap_w=np.array(snaps_w),
        grid=grid,
        dt=dt,
        energy_in=energy_in,
        final=final,
    )


@dataclass(frozen=True)
class EnergyReport:
    """Per-step energy bookkeeping over a trace."""

    max_step_increase: float
    max_balance_error: float
    rel_balance_error: float
    max_deviation_from_start: float
    max_energy: float

    def summary(self) -> str:
        return (
            f"max per-step H_cl increase : {self.max_step_increase:.3e}\n"
            f"max |dH_cl + dt*diss|      : {self.max_balance_error:.3e}"
            f"  (relative {self.rel_balance_error:.3e})\n"
            f"max |H_cl(t) - H_cl(0)|    : {self.max_deviation_from_start:.3e}\n"
            f"max H_cl                   : {self.max_energy:.3e}"
        )


def energy_report(trace: Trace) -> EnergyReport:
    """Compare per-step energy decrements against the recorded dissipation."""
    hcl = trace.Hcl
    d = np.diff(hcl)
    balance = d + trace.dt * trace.diss[:-1]
    max_bal = float(np.max(np.abs(balance))) if balance.size else 0.0
    denom = max(float(np.max(np.abs(d))) if d.size else 0.0, 1e-300)
    return EnergyReport(
        max_step_increase=float(np.max(d)) if d.size else 0.0,
        max_balance_error=max_bal,
        rel_balance_error=max_bal / denom,
        max_deviation_from_start=float(np.max(np.abs(hcl - hcl[0]))),
        max_energy=float(np.max(hcl)),
    )


def casimir_drift(trace: Trace) -> float | None:
    """Max |C1(t) - C1(0)| over the trace; None when no controller ran."""
    if trace.C1 is None:
        return None
    return float(np.max(np.abs(trace.C1 - trace.C1[0])))
