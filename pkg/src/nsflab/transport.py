"""Continuity equation: conservative upwind update, particle paths and the renormalized residual."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid import Grid, ScalarField, VectorField, divergence_array, gradient_array, interpolate

CFL_LIMIT = 0.5


class CFLError(ValueError):
    pass


class PositivityLoss(RuntimeError):
    """A density or temperature value became nonpositive."""

    def __init__(self, message: str, field: str = "", value: float = np.nan, bound: float | None = None):
        super().__init__(message)
        self.field = field
        self.value = value
        self.bound = bound


class PathError(RuntimeError):
    pass


def cfl_number(u: np.ndarray, grid: Grid, dt: float) -> float:
    return float(dt * sum(np.abs(u[a]).max() / grid.spacing[a] for a in range(grid.dim)))


def mass(rho: ScalarField) -> float:
    return rho.grid.integrate(rho.values)


def _face_areas(grid: Grid, axis: int) -> np.ndarray:
    area = np.ones(grid.node_shape)
    for b in range(grid.dim):
        if b != axis:
            area = area * grid.axis_weights[b].reshape([-1 if k == b else 1 for k in range(grid.dim)])
    return area


def upwind_flux_divergence(rho: np.ndarray, u: np.ndarray, grid: Grid) -> np.ndarray:
    """Net outward upwind mass flux of every dual cell divided by its volume."""
    net = np.zeros(grid.node_shape)
    for a in range(grid.dim):
        ua = u[a]
        area = _face_areas(grid, a)
        if grid.periodic(a):
            ur = np.roll(ua, -1, axis=a)
            rr = np.roll(rho, -1, axis=a)
            uf = 0.5 * (ua + ur)
            F = np.where(uf > 0, uf * rho, uf * rr) * area
            net += F - np.roll(F, 1, axis=a)
        else:
            n = grid.node_shape[a]
            lo = [slice(None)] * grid.dim
            hi = [slice(None)] * grid.dim
            lo[a] = slice(0, n - 1)
            hi[a] = slice(1, n)
            lo, hi = tuple(lo), tuple(hi)
            uf = 0.5 * (ua[lo] + ua[hi])
            F = np.where(uf > 0, uf * rho[lo], uf * rho[hi]) * area[lo]
            net[lo] += F
            net[hi] -= F
    return net / grid.weights


def advance_density(rho: ScalarField, u: VectorField, dt: float, source: np.ndarray | None = None) -> ScalarField:
    """One forward-Euler step of ``rho_t + div(rho u) = source`` with first-order upwind fluxes.

    Wall faces carry no flux, so ``sum(rho * weights)`` changes only through ``source``.
    """
    grid = rho.grid
    c = cfl_number(u.values, grid, dt)
    if c > CFL_LIMIT * (1 + 1e-12):
        raise CFLError(f"CFL number {c:.4f} exceeds {CFL_LIMIT} (dt={dt:.3e})")
    new = rho.values - dt * upwind_flux_divergence(rho.values, u.values, grid)
    if source is not None:
        new = new + dt * source
    if np.any(new <= 0):
        idx = tuple(int(i) for i in np.argwhere(new <= 0)[0])
        raise PositivityLoss(f"density became nonpositive at node {idx}: {float(new[idx]):.6g}", "rho", float(new[idx]))
    return ScalarField(grid, new)


# ---------------------------------------------------------------------------
# characteristics


@dataclass
class VelocityHistory:
    grid: Grid
    times: np.ndarray
    values: list[np.ndarray]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.values) or len(self.times) < 1:
            raise ValueError("velocity history needs one sample per time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("velocity history times must increase strictly")

    @classmethod
    def steady(cls, u: VectorField, t_end: float, nsteps: int) -> "VelocityHistory":
        times = np.linspace(0.0, t_end, nsteps + 1)
        return cls(u.grid, times, [u.values] * len(times))

    @classmethod
    def from_fields(cls, times: Sequence[float], fields: Sequence[VectorField]) -> "VelocityHistory":
        return cls(fields[0].grid, np.asarray(times), [f.values for f in fields])

    def _bracket(self, s: float):
        k = int(np.clip(np.searchsorted(self.times, s, side="right") - 1, 0, len(self.times) - 2))
        t0, t1 = self.times[k], self.times[k + 1]
        return k, (s - t0) / (t1 - t0)

    def at(self, s: float, pts: np.ndarray) -> np.ndarray:
        """Velocity at time ``s`` and points ``(m, d)``; returns ``(d, m)``."""
        if len(self.times) == 1:
            return interpolate(self.values[0], self.grid, pts)
        k, w = self._bracket(s)
        a = interpolate(self.values[k], self.grid, pts)
        if w == 0.0:
            return a
        return (1 - w) * a + w * interpolate(self.values[k + 1], self.grid, pts)


@dataclass
class CharacteristicPath:
    origin: np.ndarray
    times: np.ndarray
    positions: np.ndarray
    div_samples: np.ndarray

    @property
    def endpoint(self) -> np.ndarray:
        return self.positions[-1]


def _fold(pts: np.ndarray, grid: Grid) -> np.ndarray:
    out = pts.copy()
    for a in range(grid.dim):
        L = grid.extents[a]
        h = grid.spacing[a]
        if grid.periodic(a):
            out[:, a] = np.mod(out[:, a], L)
            continue
        if np.any(out[:, a] < -h) or np.any(out[:, a] > L + h):
            raise PathError(f"path left the domain along axis {a} (position {out[:, a]})")
        out[:, a] = np.clip(out[:, a], 0.0, L)
    return out


def trace_characteristic(u_history: VelocityHistory, x, t: float | None = None,
                         substeps: int = 1) -> CharacteristicPath:
    """Integrate ``X' = u(t, X)``, ``X(0) = x`` with classical RK4 on the history's sample times."""
    grid = u_history.grid
    x = np.asarray(x, dtype=float).reshape(1, grid.dim)
    times = u_history.times
    t = times[-1] if t is None else float(t)
    if t > times[-1] + 1e-12 or t < times[0]:
        raise ValueError(f"u_history spans [{times[0]}, {times[-1]}], cannot trace to t={t}")
    nodes = np.concatenate([times[times < t - 1e-14], [t]])
    divs = [divergence_array(v, grid) for v in u_history.values]

    def div_at(s, pts):
        if len(times) == 1:
            return interpolate(divs[0], grid, pts)[0]
        k, w = u_history._bracket(s)
        return ((1 - w) * interpolate(divs[k], grid, pts) + w * interpolate(divs[k + 1], grid, pts))[0]

    X = _fold(x, grid)
    pos = [X[0].copy()]
    dsamp = [div_at(nodes[0], X)]
    for t0, t1 in zip(nodes[:-1], nodes[1:]):
        dt = (t1 - t0) / substeps
        s = t0
        for _ in range(substeps):
            k1 = u_history.at(s, X).T
            k2 = u_history.at(s + dt / 2, _fold(X + dt / 2 * k1, grid)).T
            k3 = u_history.at(s + dt / 2, _fold(X + dt / 2 * k2, grid)).T
            k4 = u_history.at(s + dt, _fold(X + dt * k3, grid)).T
            X = _fold(X + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4), grid)
            s += dt
        pos.append(X[0].copy())
        dsamp.append(div_at(t1, X))
    return CharacteristicPath(x[0], nodes, np.array(pos), np.array(dsamp))


def reciprocal_density_along_path(rho0: ScalarField, path: CharacteristicPath) -> float:
    """``1/rho(t, X(t)) = exp(int_0^t div u(s, X(s)) ds) / rho0(x)``, trapezoidal in time."""
    r0 = float(interpolate(rho0.values, rho0.grid, path.origin[None, :])[0])
    if r0 <= 0:
        raise ValueError("rho0 must be positive at the path origin")
    return float(np.exp(np.trapezoid(path.div_samples, path.times)) / r0)


def renormalized_residual(
    b: Callable[[np.ndarray], np.ndarray],
    db: Callable[[np.ndarray], np.ndarray],
    rho_history: Sequence[ScalarField],
    u_history: Sequence[VectorField],
    times: Sequence[float],
    domain: tuple[float, float] = (0.0, np.inf),
) -> np.ndarray:
    """L2 norm of ``d_t b(rho) + u . grad b(rho) + b'(rho) rho div u`` per step (backward in time)."""
    if not (len(rho_history) == len(u_history) == len(times)):
        raise ValueError("histories and times must have equal length")
    grid = rho_history[0].grid
    lo, hi = domain
    for r in rho_history:
        if r.values.min() <= lo or r.values.max() >= hi:
            raise ValueError(f"rho leaves the domain ({lo}, {hi}) of b")
    out = []
    for k in range(1, len(times)):
        r, rp = rho_history[k].values, rho_history[k - 1].values
        u = u_history[k].values
        br = b(r)
        adv = np.einsum("i...,i...->...", u, gradient_array(br, grid))
        res = (br - b(rp)) / (times[k] - times[k - 1]) + adv + db(r) * r * divergence_array(u, grid)
        out.append(np.sqrt(grid.integrate(res**2)))
    return np.array(out)
