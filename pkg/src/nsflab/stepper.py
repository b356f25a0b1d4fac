"""IMEX time stepping for density, velocity and temperature.

Per step, with every explicit term taken at the old time level:

1. density: conservative upwind update (plus an optional source);
2. velocity: advection, ``-theta grad log rho - grad theta + grad G`` explicit,
   viscous term ``(1/rho) div S`` implicit with ``rho`` frozen at the old level;
3. temperature: advection, ``S:D / (c_v rho)`` and ``-theta div u / c_v`` explicit,
   conduction ``kappa lap theta / (c_v rho)`` implicit with the wall closures.

Wall traces are re-imposed and positivity re-checked after each step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .constitutive import FluidParams, dissipation_array
from .elliptic import BoundaryData, SolverError, lame_system, neumann_vector, pcg, scalar_system
from .grid import ScalarField, VectorField, divergence_array, gradient_array
from .state import State, Trajectory
from .transport import CFL_LIMIT, CFLError, PositivityLoss, advance_density

logger = logging.getLogger(__name__)

SourceFn = Callable[[float], tuple[np.ndarray, np.ndarray, np.ndarray]]


def exponent_violation(p: float, q: float) -> str | None:
    """Message if ``(p, q)`` breaks ``3 < q < inf`` and ``2q/(2q-3) < p < inf``, else None."""
    if not (3 < q < np.inf):
        return f"q = {q} violates LEa1 (need 3 < q < inf)"
    pmin = 2 * q / (2 * q - 3)
    if not (pmin < p < np.inf):
        return f"p = {p} violates LEa1 (need p > 2q/(2q-3) = {pmin:.6g})"
    return None


@dataclass
class StepperConfig:
    dt: float
    t_end: float
    cfl_safety: float = 0.5
    p: float = 2.0
    q: float = 4.0
    sources: SourceFn | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= 0:
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        msg = exponent_violation(self.p, self.q)
        if msg:
            raise ValueError(msg)


class StepError(RuntimeError):
    def __init__(self, message: str, step_index: int):
        super().__init__(message)
        self.step_index = step_index


def stable_dt(state: State, cfg: StepperConfig) -> float:
    """``min(dt, safety * h / max(|u| + sqrt(theta)))``, also kept inside the transport CFL limit."""
    g = state.grid
    u = state.u.values
    speed = np.sqrt(np.sum(u**2, axis=0)) + np.sqrt(state.theta.values)
    dt = min(cfg.dt, cfg.cfl_safety * min(g.spacing) / float(speed.max()))
    rate = sum(np.abs(u[a]).max() / g.spacing[a] for a in range(g.dim))
    if rate > 0:
        dt = min(dt, CFL_LIMIT * (1 - 1e-9) / rate)
    return dt


def _sources(cfg: StepperConfig, state: State):
    if cfg.sources is None:
        return None, None, None
    return cfg.sources(state.t)


def momentum_explicit(state: State, params: FluidParams, s_u=None) -> np.ndarray:
    g = state.grid
    u = state.u.values
    J = gradient_array(u, g)
    adv = np.einsum("j...,ij...->i...", u, J)
    rhs = (-adv
           - state.theta.values * gradient_array(np.log(state.rho.values), g)
           - gradient_array(state.theta.values, g)
           + gradient_array(params.potential(g), g))
    if s_u is not None:
        rhs = rhs + s_u
    return rhs


def heat_explicit(state: State, params: FluidParams, s_theta=None) -> np.ndarray:
    g = state.grid
    u, th, rho = state.u.values, state.theta.values, state.rho.values
    J = gradient_array(u, g)
    divu = np.trace(J, axis1=0, axis2=1)
    rhs = (-np.einsum("i...,i...->...", u, gradient_array(th, g))
           + dissipation_array(J, params.mu, params.lam) / (params.cv * rho)
           - th * divu / params.cv)
    if s_theta is not None:
        rhs = rhs + s_theta
    return rhs


def _implicit_velocity(state: State, params: FluidParams, bd: BoundaryData, dt: float, E: np.ndarray) -> np.ndarray:
    g = state.grid
    system = lame_system(g, params.mu, params.lam)
    rho = np.tile(state.rho.values.ravel(), g.dim)
    trace = bd.velocity_trace().ravel()
    u_old = state.u.values.ravel()
    iu = system.unknown
    A = system.shifted(rho[iu], -dt)
    b = rho[iu] * (u_old[iu] + dt * E.ravel()[iu])
    if system.known.size:
        b = b + dt * (system.L_uk @ trace[system.known])
    x, _ = pcg(A, b, u_old[iu])
    out = trace.copy()
    out[iu] = x
    return out.reshape(state.u.values.shape)


def _implicit_temperature(state: State, params: FluidParams, bd: BoundaryData, dt: float, E: np.ndarray) -> np.ndarray:
    g = state.grid
    system = scalar_system(g, tuple(sorted(g.dirichlet_faces)))
    iu = system.unknown
    m = (params.cv * state.rho.values * g.weights).ravel()
    th_old = state.theta.values.ravel()
    b = m[iu] * (th_old[iu] + dt * E.ravel()[iu])
    if bd.q_B:
        b = b + dt * params.kappa * neumann_vector(g, bd.q_B)[iu]
    known = bd.theta_trace().ravel()
    if system.known.size:
        b = b - dt * params.kappa * (system.K_uk @ known[system.known])
    A = system.shifted(m[iu], dt * params.kappa)
    x, _ = pcg(A, b, th_old[iu])
    out = known.copy()
    out[iu] = x
    return out.reshape(g.node_shape)


def step(state: State, params: FluidParams, bd: BoundaryData, cfg: StepperConfig, dt: float | None = None) -> State:
    """Advance ``state`` by one IMEX step of size ``dt`` (default: :func:`stable_dt`)."""
    dt = stable_dt(state, cfg) if dt is None else dt
    g = state.grid
    s_rho, s_u, s_th = _sources(cfg, state)

    rho_new = advance_density(state.rho, state.u, dt, s_rho)
    u_new = _implicit_velocity(state, params, bd, dt, momentum_explicit(state, params, s_u))
    th_new = _implicit_temperature(state, params, bd, dt, heat_explicit(state, params, s_th))

    if np.any(th_new <= 0):
        idx = tuple(int(i) for i in np.argwhere(th_new <= 0)[0])
        raise PositivityLoss(f"temperature became nonpositive at node {idx}: {float(th_new[idx]):.6g}", "theta",
                             float(th_new[idx]))
    new = State(state.t + dt, rho_new, ScalarField(g, th_new), VectorField(g, u_new))
    new.validate(bd)
    return new


# ---------------------------------------------------------------------------
# driver


@dataclass
class RunResult:
    status: str
    final: State
    trajectory: Trajectory
    records: list = field(default_factory=list)
    steps: int = 0
    T_M: float | None = None
    message: str = ""


def run(
    initial: State,
    params: FluidParams,
    bd: BoundaryData,
    cfg: StepperConfig,
    monitor=None,
    hooks: Sequence[Callable[[int, State], None]] = (),
    store_every: int | None = 1,
    max_steps: int | None = None,
) -> RunResult:
    """Step from ``initial`` to ``cfg.t_end`` or until ``monitor`` asks to stop.

    ``monitor`` needs ``observe(state, sources) -> record`` and a ``stop``
    attribute naming the termination cause (or None); see
    :class:`nsflab.monitor.Monitor`.  ``store_every=None`` keeps only the
    first and last states.
    """
    initial.validate(bd)
    traj = Trajectory([initial], bd)
    records = []
    state = initial
    status, message, T_M = "completed", "", None

    def observe(s):
        if monitor is None:
            return None
        rec = monitor.observe(s, _sources(cfg, s))
        records.append(rec)
        return monitor.stop

    stop = observe(state)
    k = 0
    tol = 1e-12 * max(1.0, cfg.t_end)
    while stop is None and state.t < cfg.t_end - tol:
        if max_steps is not None and k >= max_steps:
            break
        dt = min(stable_dt(state, cfg), cfg.t_end - state.t)
        try:
            new = step(state, params, bd, cfg, dt)
        except PositivityLoss as e:
            bound = monitor.bound_for(e.field) if monitor is not None else None
            e.bound = bound
            status = "positivity-loss"
            message = f"step {k + 1}: {e}" + (f" (minimum-principle bound {bound:.6g})" if bound is not None else "")
            logger.warning(message)
            if monitor is not None:
                monitor.flag_positivity()
            break
        except (SolverError, CFLError, ValueError) as e:
            raise StepError(f"step {k + 1} (t={state.t:.6g}): {e}", k + 1) from e
        k += 1
        state = new
        for h in hooks:
            h(k, state)
        if store_every is not None and k % store_every == 0:
            traj.append(state)
        stop = observe(state)

    if store_every is None or traj[-1] is not state:
        if state.t > traj[-1].t:
            traj.append(state)
    if monitor is not None and stop is not None:
        status = stop
        T_M = monitor.T_M
    return RunResult(status, state, traj, records, k, T_M, message)
