"""Runtime diagnostics: minimum principles, energy balances, control functional, ratios, flags.

Every diagnostic exists as a pure function of a trajectory; :class:`Monitor`
evaluates the same quantities incrementally while a run is in progress.
Inequalities whose constants are not computable are reported as ratios.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .constitutive import FluidParams, dissipation_array, stress_array
from .elliptic import BoundaryData
from .grid import Grid, ScalarField, VectorField, d1, divergence_array, gradient_array, parse_face
from .norms import lq_array, modulus_profile, sobolev_array, sup_norm, w1inf_norm
from .state import State, Trajectory

logger = logging.getLogger(__name__)

HITTING_TIME = "HittingTime"
POSITIVITY_LOSS = "PositivityLoss"
BLOWUP_SUSPECTED = "BlowupSuspected"
DENSITY_MIN_VIOLATED = "DensityMinViolated"
TEMPERATURE_MIN_VIOLATED = "TemperatureMinViolated"

EXIT_STATUS = {HITTING_TIME: "hitting-time", BLOWUP_SUSPECTED: "blowup-suspected", POSITIVITY_LOSS: "positivity-loss"}

SourceFn = Callable[[float], tuple]


# ---------------------------------------------------------------------------
# control functional and hitting time


def amplitude(state: State) -> float:
    return sup_norm(state.rho, state.theta, state.u)


def control_functional(traj: Trajectory, p: float) -> np.ndarray:
    """``F(t_k) = sup|(rho, theta, u)(t_k)| + int_0^{t_k} ||(theta, u)||_{W^{1,inf}}^p``, trapezoidal in time."""
    if len(traj) == 0:
        raise ValueError("control functional needs a nonempty trajectory")
    amp = np.array([amplitude(s) for s in traj])
    integrand = np.array([w1inf_norm(s.theta, s.u) ** p for s in traj])
    return amp + cumulative_trapezoid(integrand, traj.times)


def cumulative_trapezoid(values, times) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    out = np.zeros_like(values)
    if len(values) > 1:
        out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
    return out


def hitting_time(F: Sequence[float], times: Sequence[float], M: float) -> tuple[float, bool]:
    """First time ``F`` reaches ``M``, linearly interpolated; ``(times[-1], False)`` if it never does."""
    F = np.asarray(F, dtype=float)
    times = np.asarray(times, dtype=float)
    above = np.flatnonzero(F >= M)
    if above.size == 0:
        return float(times[-1]), False
    k = int(above[0])
    if k == 0:
        return float(times[0]), True
    f0, f1 = F[k - 1], F[k]
    return float(times[k - 1] + (M - f0) / (f1 - f0) * (times[k] - times[k - 1])), True


# ---------------------------------------------------------------------------
# minimum principles


def max_abs_div(u: VectorField) -> float:
    return float(np.abs(divergence_array(u.values, u.grid)).max())


@dataclass
class MinPrincipleSeries:
    minima: np.ndarray
    bounds: np.ndarray
    ok: np.ndarray
    disabled: bool = False

    def __iter__(self):
        return iter(zip(self.minima, self.bounds, self.ok))

    @property
    def all_ok(self) -> bool:
        return self.disabled or bool(np.all(self.ok))


def density_bound(rho0_min: float, div_integral: float) -> float:
    return rho0_min * np.exp(-div_integral)


def temperature_bound(theta_floor: float, div_integral: float, cv: float) -> float:
    return theta_floor * np.exp(-div_integral / cv)


def density_min_check(traj: Trajectory, bd: BoundaryData | None = None, tol: float = 1e-6) -> MinPrincipleSeries:
    """``min rho(t) >= min rho0 * exp(-int_0^t ||div u||_inf)`` at every sample."""
    times = traj.times
    integral = cumulative_trapezoid([max_abs_div(s.u) for s in traj], times)
    minima = np.array([s.rho.values.min() for s in traj])
    bounds = density_bound(minima[0], integral)
    return MinPrincipleSeries(minima, bounds, minima >= bounds * (1 - tol))


def temperature_floor(theta0: ScalarField, bd: BoundaryData) -> float:
    return min(float(theta0.values.min()), bd.theta_B_min)


def temperature_min_check(traj: Trajectory, bd: BoundaryData, params: FluidParams,
                          tol: float = 1e-6) -> MinPrincipleSeries:
    """``min theta(t) >= min(min theta0, min theta_B) * exp(-(1/c_v) int ||div u||_inf)``; disabled if q_B < 0."""
    times = traj.times
    minima = np.array([s.theta.values.min() for s in traj])
    if not bd.flux_nonnegative:
        warnings.warn("q_B < 0 somewhere on Gamma_N: temperature minimum check disabled", RuntimeWarning)
        return MinPrincipleSeries(minima, np.full_like(minima, np.nan), np.ones_like(minima, dtype=bool), True)
    integral = cumulative_trapezoid([max_abs_div(s.u) for s in traj], times)
    bounds = temperature_bound(temperature_floor(traj[0].theta, bd), integral, params.cv)
    return MinPrincipleSeries(minima, bounds, minima >= bounds * (1 - tol))


# ---------------------------------------------------------------------------
# energy balances


def _extensions(bd: BoundaryData, state: State):
    if bd.u_ext is None or bd.theta_ext is None:
        raise ValueError("boundary data need their extensions (see elliptic.attach_extensions)")
    return bd.u_ext.values, bd.theta_ext.values


def _split_sources(sources, grid: Grid):
    if sources is None or sources[0] is None:
        z = np.zeros(grid.node_shape)
        return z, np.zeros((grid.dim, *grid.node_shape)), z
    return sources


def momentum_energy_terms(state: State, bd: BoundaryData, params: FluidParams, sources=None) -> tuple[float, float]:
    """``(E, R)`` with ``E = 1/2 int rho |v|^2`` and ``R`` the remaining integrals, ``v = u - u_ext``."""
    g = state.grid
    u_ext, _ = _extensions(bd, state)
    s_rho, s_u, _ = _split_sources(sources, g)
    rho, th, u = state.rho.values, state.theta.values, state.u.values
    v = u - u_ext
    Jv = gradient_array(v, g)
    Jext = gradient_array(u_ext, g)
    divv = np.trace(Jv, axis1=0, axis2=1)
    conv = np.einsum("j...,ij...->i...", u, Jext)
    gG = gradient_array(params.potential(g), g)
    v2 = np.sum(v**2, axis=0)
    integrand = (dissipation_array(Jv, params.mu, params.lam)
                 + rho * np.sum(conv * v, axis=0)
                 - rho * th * divv
                 - rho * np.sum(gG * v, axis=0)
                 - rho * np.sum(s_u * v, axis=0)
                 - 0.5 * s_rho * v2)
    return 0.5 * g.integrate(rho * v2), g.integrate(integrand)


def heat_energy_terms(state: State, bd: BoundaryData, params: FluidParams, sources=None) -> tuple[float, float]:
    """``(E, R)`` with ``E = c_v/2 int rho w^2``, ``w = theta - theta_ext``."""
    g = state.grid
    _, th_ext = _extensions(bd, state)
    s_rho, _, s_th = _split_sources(sources, g)
    rho, th, u = state.rho.values, state.theta.values, state.u.values
    w = th - th_ext
    J = gradient_array(u, g)
    divu = np.trace(J, axis1=0, axis2=1)
    gw = gradient_array(w, g)
    gext = gradient_array(th_ext, g)
    cv = params.cv
    integrand = (params.kappa * np.sum(gw**2, axis=0)
                 + cv * rho * w * np.sum(u * gext, axis=0)
                 - w * dissipation_array(J, params.mu, params.lam)
                 + w * rho * th * divu
                 - cv * rho * w * s_th
                 - 0.5 * cv * s_rho * w**2)
    return 0.5 * cv * g.integrate(rho * w**2), g.integrate(integrand)


def korn_ratio(u: VectorField, bd: BoundaryData, params: FluidParams) -> float:
    """``int S(Dv):Dv / ||v||_{W^{1,2}}^2`` for ``v = u - u_ext``; nan when ``v`` vanishes."""
    g = u.grid
    v = u.values - bd.u_ext.values
    Jv = gradient_array(v, g)
    denom = g.integrate(np.sum(v**2, axis=0)) + g.integrate(np.sum(Jv**2, axis=(0, 1)))
    if denom == 0:
        return float("nan")
    return g.integrate(dissipation_array(Jv, params.mu, params.lam)) / denom


def _balance(terms: Sequence[tuple[float, float]], times: np.ndarray) -> np.ndarray:
    out = np.zeros(len(terms))
    for k in range(1, len(terms)):
        (e0, r0), (e1, r1) = terms[k - 1], terms[k]
        out[k] = (e1 - e0) / (times[k] - times[k - 1]) + 0.5 * (r0 + r1)
    return out


def momentum_energy_residual(traj: Trajectory, bd: BoundaryData, params: FluidParams,
                             sources: SourceFn | None = None) -> np.ndarray:
    """Discrete kinetic-energy balance of ``u - u_ext``; backward difference in time, trapezoid for the rest."""
    terms = [momentum_energy_terms(s, bd, params, sources(s.t) if sources else None) for s in traj]
    return _balance(terms, traj.times)


def heat_energy_residual(traj: Trajectory, bd: BoundaryData, params: FluidParams,
                         sources: SourceFn | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Heat-energy balance of ``theta - theta_ext`` and the Korn ratio at every sample."""
    terms = [heat_energy_terms(s, bd, params, sources(s.t) if sources else None) for s in traj]
    korn = np.array([korn_ratio(s.u, bd, params) for s in traj])
    return _balance(terms, traj.times), korn


# ---------------------------------------------------------------------------
# ratios


def grad_rho_lq(rho: ScalarField, q: float) -> float:
    return lq_array(gradient_array(rho.values, rho.grid), rho.grid, q)


def u_w2q(u: VectorField, q: float) -> float:
    return sobolev_array(u.values, u.grid, 2, q)


def grad_rho_ratio_value(lhs: float, div_integral: float, grad0: float, w2q_integral: float) -> float:
    if lhs == 0.0:
        return 0.0
    return lhs / (np.exp(2 * div_integral) * (grad0 + w2q_integral))


def grad_density_bound_ratio(traj: Trajectory, q: float) -> np.ndarray:
    """``sup_{s<=t} ||grad rho||_q / (exp(2 int ||div u||_inf) (||grad rho0||_q + int ||u||_{W^{2,q}}))``."""
    times = traj.times
    grads = np.array([grad_rho_lq(s.rho, q) for s in traj])
    lhs = np.maximum.accumulate(grads)
    divi = cumulative_trapezoid([max_abs_div(s.u) for s in traj], times)
    w2i = cumulative_trapezoid([u_w2q(s.u, q) for s in traj], times)
    return np.array([grad_rho_ratio_value(lhs[k], divi[k], grads[0], w2i[k]) for k in range(len(traj))])


def gn_ratio(u: VectorField, p: float, q: float, alpha: float | None = None) -> float:
    """``||u||_{W^{s,q}} / (||u||_{W^{alpha,q}}^(1/2) ||u||_{W^{2,q}}^(1/2))`` with ``s = 1 + alpha/2``.

    Fractional norms use the second-order modulus of smoothness with
    ``r = q``; ``alpha`` defaults to ``0.9 * 2(1 - 1/p)``.
    """
    smax = 2.0 * (1.0 - 1.0 / p)
    alpha = 0.9 * smax if alpha is None else alpha
    if not 0 < alpha < smax:
        raise ValueError(f"alpha must lie in (0, 2(1 - 1/p)) = (0, {smax:.4g}), got {alpha}")
    if not np.any(u.values):
        raise ValueError("gn_ratio is undefined for the zero field")
    prof = modulus_profile(u.values, u.grid, q)
    lhs = prof.norm(1.0 + alpha / 2.0, q)
    rhs = np.sqrt(prof.norm(alpha, q) * sobolev_array(u.values, u.grid, 2, q))
    return float(lhs / rhs)


# ---------------------------------------------------------------------------
# compatibility


def _face_vals(arr: np.ndarray, grid: Grid, face: str) -> np.ndarray:
    return arr[(Ellipsis, *grid.face_index(face))]


def _normal_derivative(arr: np.ndarray, grid: Grid, face: str) -> np.ndarray:
    axis, side = parse_face(face)
    return side * _face_vals(d1(arr, grid, axis), grid, face)


def _heat_bracket(rho, th, u, grid: Grid, params: FluidParams) -> np.ndarray:
    J = gradient_array(u, grid)
    divu = np.trace(J, axis1=0, axis2=1)
    gth = gradient_array(th, grid)
    lap = sum(d1(gth[a], grid, a) for a in range(grid.dim))
    return (-np.sum(u * gth, axis=0) + params.kappa * lap / (params.cv * rho)
            + dissipation_array(J, params.mu, params.lam) / (params.cv * rho) - th * divu / params.cv)


def compatibility_residuals(rho0: ScalarField, theta0: ScalarField, u0: VectorField, bd: BoundaryData,
                            params: FluidParams) -> dict[str, float]:
    """Boundary sup-norm residuals of the zeroth- and first-order compatibility conditions.

    Zeroth order: ``u0 - u_B`` on walls (``L21``), ``theta0 - theta_B`` on
    Gamma_D and ``d_n theta0 - q_B`` on Gamma_N (``L22``).  First order: the
    momentum right-hand side on walls (``L11``), the temperature right-hand
    side on Gamma_D (``L12``) and its normal derivative on Gamma_N (``L12b``).
    """
    g = rho0.grid
    rho, th, u = rho0.values, theta0.values, u0.values
    out = {"L21": 0.0, "L22_dirichlet": 0.0, "L22_neumann": 0.0, "L11": 0.0, "L12": 0.0, "L12b": 0.0}
    if not g.walled_faces:
        return out
    for f, ub in bd.u_B.items():
        out["L21"] = max(out["L21"], float(np.abs(_face_vals(u, g, f) - ub).max()))
    for f, tb in bd.theta_B.items():
        out["L22_dirichlet"] = max(out["L22_dirichlet"], float(np.abs(_face_vals(th, g, f) - tb).max()))
    for f, qb in bd.q_B.items():
        out["L22_neumann"] = max(out["L22_neumann"], float(np.abs(_normal_derivative(th, g, f) - qb).max()))

    J = gradient_array(u, g)
    S = stress_array(J, params.mu, params.lam)
    divS = np.stack([sum(d1(S[i, j], g, j) for j in range(g.dim)) for i in range(g.dim)])
    mom = (-np.einsum("j...,ij...->i...", u, J) - gradient_array(rho * th, g) / rho + divS / rho
           + gradient_array(params.potential(g), g))
    for f in g.walled_faces:
        out["L11"] = max(out["L11"], float(np.abs(_face_vals(mom, g, f)).max()))
    heat = _heat_bracket(rho, th, u, g, params)
    for f in bd.theta_B:
        out["L12"] = max(out["L12"], float(np.abs(_face_vals(heat, g, f)).max()))
    for f in bd.q_B:
        out["L12b"] = max(out["L12b"], float(np.abs(_normal_derivative(heat, g, f)).max()))
    return out


ZEROTH_ORDER = ("L21", "L22_dirichlet", "L22_neumann")


def compatibility_gate(residuals: dict[str, float], thresholds: dict[str, float]) -> list[str]:
    """Names of zeroth-order residuals above their thresholds."""
    return [f"{k} residual {residuals[k]:.3e} exceeds {thresholds[k]:.1e}"
            for k in ZEROTH_ORDER if residuals[k] > thresholds[k]]


# ---------------------------------------------------------------------------
# flags


@dataclass
class MonitorConfig:
    M: float | str = "auto"
    p: float = 2.0
    q: float = 4.0
    min_principle_tol: float = 1e-6
    blowup_amplitude: float = 1e8
    blowup_rate: float = 50.0
    blowup_window: int = 10
    terminate_on: tuple[str, ...] = (HITTING_TIME, BLOWUP_SUSPECTED, POSITIVITY_LOSS)
    compat_thresholds: dict = field(default_factory=lambda: {"L21": 1e-9, "L22_dirichlet": 1e-9,
                                                              "L22_neumann": 1e-2})
    gn_alpha: float | None = None
    strict_min_principle: bool = False

    def __post_init__(self):
        if isinstance(self.M, str):
            if self.M != "auto":
                raise ValueError(f"M must be a positive number or 'auto', got {self.M!r}")
        elif not self.M > 0:
            raise ValueError(f"M must be positive, got {self.M}")

    def resolve_M(self, amplitude0: float) -> float:
        return 2.0 * amplitude0 + 1.0 if self.M == "auto" else float(self.M)


def blowup_flag(amplitudes: Sequence[float], times: Sequence[float], cfg: MonitorConfig,
                F: Sequence[float] | None = None, M: float | None = None) -> dict:
    """First sample where amplitude exceeds the threshold or its log grows faster than the rate over the window;
    optionally the hitting time of ``F`` against ``M``."""
    a = np.asarray(amplitudes, dtype=float)
    t = np.asarray(times, dtype=float)
    out: dict = {BLOWUP_SUSPECTED: None, HITTING_TIME: None}
    for k in range(len(a)):
        if _blowup_at(a, t, k, cfg):
            out[BLOWUP_SUSPECTED] = (k, float(t[k]))
            break
    if F is not None and M is not None:
        T_M, hit = hitting_time(F, t, M)
        if hit:
            out[HITTING_TIME] = T_M
    return out


def _blowup_at(a, t, k, cfg: MonitorConfig) -> bool:
    if not np.isfinite(a[k]) or a[k] > cfg.blowup_amplitude:
        return True
    w = cfg.blowup_window
    if k >= w and a[k - w] > 0 and t[k] > t[k - w]:
        rate = np.log(a[k] / a[k - w]) / (t[k] - t[k - w])
        return bool(rate > cfg.blowup_rate)
    return False


# ---------------------------------------------------------------------------
# online monitor


CSV_COLUMNS = ("t", "step", "dt", "amplitude", "w1inf", "control_F", "rho_min", "rho_bound", "theta_min",
               "theta_bound", "energy_residual_momentum", "energy_residual_heat", "grad_rho_ratio", "gn_ratio",
               "mass", "flags")


@dataclass
class DiagnosticsRecord:
    t: float
    step: int
    dt: float
    amplitude: float
    w1inf: float
    control_F: float
    rho_min: float
    rho_bound: float
    theta_min: float
    theta_bound: float
    energy_residual_momentum: float
    energy_residual_heat: float
    grad_rho_ratio: float
    gn_ratio: float
    mass: float
    flags: set = field(default_factory=set)
    rho_ok: bool = True
    theta_ok: bool | None = True
    korn_ratio: float = float("nan")

    def row(self) -> list[str]:
        vals = []
        for c in CSV_COLUMNS:
            v = getattr(self, c)
            if c == "flags":
                vals.append("|".join(sorted(v)))
            elif c == "step":
                vals.append(str(v))
            else:
                vals.append(repr(float(v)))
        return vals


class Monitor:
    """Incremental diagnostics for :func:`nsflab.stepper.run`."""

    def __init__(self, params: FluidParams, bd: BoundaryData, cfg: MonitorConfig | None = None):
        self.params = params
        self.bd = bd
        self.cfg = cfg or MonitorConfig()
        self.records: list[DiagnosticsRecord] = []
        self.M: float | None = None
        self.T_M: float | None = None
        self.stop: str | None = None
        self._prev = None
        self._amps: list[float] = []
        self._times: list[float] = []
        self._temp_enabled = bd.flux_nonnegative
        if not self._temp_enabled:
            warnings.warn("q_B < 0 somewhere on Gamma_N: temperature minimum check disabled", RuntimeWarning)

    def _raise_flag(self, rec: DiagnosticsRecord, flag: str) -> None:
        rec.flags.add(flag)
        if self.stop is None and flag in self.cfg.terminate_on:
            self.stop = EXIT_STATUS[flag]

    def bound_for(self, name: str) -> float | None:
        if not self.records:
            return None
        r = self.records[-1]
        return r.rho_bound if name == "rho" else r.theta_bound

    def flag_positivity(self) -> None:
        if self.records:
            self._raise_flag(self.records[-1], POSITIVITY_LOSS)

    def observe(self, state: State, sources=None) -> DiagnosticsRecord:
        g = state.grid
        p, q = self.cfg.p, self.cfg.q
        amp = amplitude(state)
        w1 = w1inf_norm(state.theta, state.u)
        divmax = max_abs_div(state.u)
        grad_rho = grad_rho_lq(state.rho, q)
        w2q = u_w2q(state.u, q)
        have_ext = self.bd.u_ext is not None and self.bd.theta_ext is not None
        em = momentum_energy_terms(state, self.bd, self.params, sources) if have_ext else (0.0, 0.0)
        eh = heat_energy_terms(state, self.bd, self.params, sources) if have_ext else (0.0, 0.0)

        if self._prev is None:
            self.M = self.cfg.resolve_M(amp)
            self._rho0_min = float(state.rho.values.min())
            self._theta_floor = temperature_floor(state.theta, self.bd)
            self._grad0 = grad_rho
            acc = dict(F_int=0.0, div_int=0.0, w2q_int=0.0, grad_sup=grad_rho)
            step, dt, res_m, res_h = 0, 0.0, 0.0, 0.0
        else:
            pv = self._prev
            dt = state.t - pv["t"]
            acc = dict(F_int=pv["F_int"] + 0.5 * dt * (pv["w1"] ** p + w1**p),
                       div_int=pv["div_int"] + 0.5 * dt * (pv["divmax"] + divmax),
                       w2q_int=pv["w2q_int"] + 0.5 * dt * (pv["w2q"] + w2q),
                       grad_sup=max(pv["grad_sup"], grad_rho))
            step = pv["step"] + 1
            res_m = (em[0] - pv["em"][0]) / dt + 0.5 * (em[1] + pv["em"][1])
            res_h = (eh[0] - pv["eh"][0]) / dt + 0.5 * (eh[1] + pv["eh"][1])

        F = amp + acc["F_int"]
        rho_min = float(state.rho.values.min())
        theta_min = float(state.theta.values.min())
        rho_bound = density_bound(self._rho0_min, acc["div_int"])
        tol = self.cfg.min_principle_tol
        if self._temp_enabled:
            theta_bound = temperature_bound(self._theta_floor, acc["div_int"], self.params.cv)
            theta_ok = theta_min >= theta_bound * (1 - tol)
        else:
            theta_bound, theta_ok = 0.0, None
        gn = 0.0 if not np.any(state.u.values) else gn_ratio(state.u, p, q, self.cfg.gn_alpha)
        rec = DiagnosticsRecord(
            t=state.t, step=step, dt=dt, amplitude=amp, w1inf=w1, control_F=F,
            rho_min=rho_min, rho_bound=rho_bound, theta_min=theta_min, theta_bound=theta_bound,
            energy_residual_momentum=res_m, energy_residual_heat=res_h,
            grad_rho_ratio=grad_rho_ratio_value(acc["grad_sup"], acc["div_int"], self._grad0, acc["w2q_int"]),
            gn_ratio=gn, mass=g.integrate(state.rho.values),
            rho_ok=bool(rho_min >= rho_bound * (1 - tol)), theta_ok=None if theta_ok is None else bool(theta_ok),
            korn_ratio=korn_ratio(state.u, self.bd, self.params) if have_ext else float("nan"),
        )
        if not rec.rho_ok:
            rec.flags.add(DENSITY_MIN_VIOLATED)
        if rec.theta_ok is False:
            rec.flags.add(TEMPERATURE_MIN_VIOLATED)
        if self.cfg.strict_min_principle and not (rec.rho_ok and theta_ok is not False):
            raise AssertionError(f"minimum principle violated at t={state.t}: rho {rho_min} vs {rho_bound}, "
                                 f"theta {theta_min} vs {theta_bound}")

        self._amps.append(amp)
        self._times.append(state.t)
        if F >= self.M and self.T_M is None:
            if self.records:
                prev = self.records[-1]
                self.T_M = prev.t + (self.M - prev.control_F) / (F - prev.control_F) * (state.t - prev.t)
            else:
                self.T_M = state.t
            self._raise_flag(rec, HITTING_TIME)
        if _blowup_at(np.array(self._amps), np.array(self._times), len(self._amps) - 1, self.cfg):
            self._raise_flag(rec, BLOWUP_SUSPECTED)

        self._prev = dict(t=state.t, step=step, w1=w1, divmax=divmax, w2q=w2q, em=em, eh=eh, **acc)
        self.records.append(rec)
        return rec
