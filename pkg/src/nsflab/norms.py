"""Discrete norms on grid fields and on trajectories.

Conventions used throughout:

* Integrals use the trapezoidal dual-cell weights of the grid.
* A vector field enters ``L^q`` type norms through its pointwise Euclidean
  magnitude; ``sup_norm`` takes the maximum over components instead.
* Several fields passed together (a "tuple") combine by summation in the
  Sobolev-type norms and by maximum in ``sup_norm``.
* Derivatives are the package's second-order first differences, composed for
  second derivatives; each mixed derivative is counted once.
* Time integrals use the trapezoidal rule on the stored samples, time
  derivatives use backward differences (forward at the first sample).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import Grid, ScalarField, VectorField, d1, gradient_array
from .state import State, Trajectory

Field = ScalarField | VectorField


def _magnitude(arr: np.ndarray, grid: Grid) -> np.ndarray:
    if arr.ndim > grid.dim:
        return np.sqrt(np.sum(arr.reshape(-1, *grid.node_shape) ** 2, axis=0))
    return np.abs(arr)


def lq_array(arr: np.ndarray, grid: Grid, q: float, weights: np.ndarray | None = None) -> float:
    m = _magnitude(arr, grid) if weights is None else arr
    w = grid.weights if weights is None else weights
    if np.isinf(q):
        return float(m.max()) if m.size else 0.0
    mx = m.max() if m.size else 0.0
    if mx == 0.0:
        return 0.0
    # scaling by the max keeps large q from overflowing
    return float(mx * np.sum(w * (m / mx) ** q) ** (1.0 / q))


def lq_norm(f: Field, q: float) -> float:
    """``(sum |f|^q w)^(1/q)``; ``q = inf`` gives the maximum magnitude."""
    if not q >= 1:
        raise ValueError(f"q must be >= 1, got {q}")
    return lq_array(f.values, f.grid, q)


def derivatives(arr: np.ndarray, grid: Grid, k: int) -> list[np.ndarray]:
    """All discrete partial derivatives of order exactly ``k`` (mixed ones once)."""
    if k == 0:
        return [arr]
    if k == 1:
        return [d1(arr, grid, a) for a in range(grid.dim)]
    if k == 2:
        firsts = [d1(arr, grid, a) for a in range(grid.dim)]
        return [d1(firsts[i], grid, j) for i in range(grid.dim) for j in range(i, grid.dim)]
    raise ValueError(f"derivative order must be 0, 1 or 2, got {k}")


def sobolev_array(arr: np.ndarray, grid: Grid, k: int, q: float) -> float:
    return sum(lq_array(d, grid, q) for order in range(k + 1) for d in derivatives(arr, grid, order))


def sobolev_norm(f: Field, k: int, q: float) -> float:
    """Sum of ``L^q`` norms of all discrete derivatives of order <= k."""
    if k not in (0, 1, 2):
        raise ValueError(f"k must be 0, 1 or 2, got {k}")
    return sobolev_array(f.values, f.grid, k, q)


def sup_norm(*fields: Field) -> float:
    """Largest absolute nodal value over every component of every field."""
    return max((float(np.abs(f.values).max()) for f in fields), default=0.0)


def w1inf_norm(*fields: Field) -> float:
    """``sup_norm(fields) + sup_norm(first derivatives of fields)``."""
    sup0 = sup_norm(*fields)
    sup1 = max((float(np.abs(gradient_array(f.values, f.grid)).max()) for f in fields), default=0.0)
    return sup0 + sup1


# ---------------------------------------------------------------------------
# moduli of smoothness


def second_difference_profile(arr: np.ndarray, grid: Grid, q: float) -> tuple[np.ndarray, np.ndarray]:
    """``(offsets, values)``: the ``L^q`` norm of the second difference for every axis-aligned grid offset.

    On a walled axis the difference lives only at base points ``x`` with
    ``x + 2 delta`` inside the domain and is weighted with those points' weights.
    """
    offs, vals = [], []
    d = grid.dim
    lead = arr.ndim - d
    for a in range(d):
        ax = lead + a
        n = grid.node_shape[a]
        h = grid.spacing[a]
        if grid.periodic(a):
            for m in range(1, n):
                d2 = np.roll(arr, -2 * m, axis=ax) - 2 * np.roll(arr, -m, axis=ax) + arr
                offs.append(m * h)
                vals.append(lq_array(d2, grid, q))
        else:
            for m in range(1, (n - 1) // 2 + 1):
                take = lambda s: np.take(arr, np.arange(s, s + n - 2 * m), axis=ax)
                d2 = take(2 * m) - 2 * take(m) + take(0)
                w = np.take(grid.weights, np.arange(n - 2 * m), axis=a)
                offs.append(m * h)
                vals.append(lq_array(_magnitude_partial(d2, lead), grid, q, weights=w))
    return np.array(offs), np.array(vals)


def _magnitude_partial(d2: np.ndarray, lead: int) -> np.ndarray:
    if lead == 0:
        return np.abs(d2)
    return np.sqrt(np.sum(d2.reshape(-1, *d2.shape[lead:]) ** 2, axis=0))


@dataclass
class ModulusProfile:
    """Dyadic scales ``t_j = L 2^-j`` and ``omega_2(f, t_j)_q`` for ``j = 0..J``."""

    lq: float
    scales: np.ndarray
    omega: np.ndarray

    def norm(self, s: float, r: float) -> float:
        terms = self.scales ** (-s) * self.omega
        mx = float(terms.max()) if terms.size else 0.0
        if np.isinf(r) or mx == 0.0:
            semi = mx
        else:
            semi = float(mx * np.sum((terms / mx) ** r) ** (1.0 / r))
        return self.lq + semi


def modulus_profile(arr: np.ndarray, grid: Grid, q: float) -> ModulusProfile:
    L = max(grid.extents)
    h = min(grid.spacing)
    J = int(np.floor(np.log2(L / h) + 1e-12))
    scales = L * 2.0 ** (-np.arange(J + 1))
    offs, vals = second_difference_profile(arr, grid, q)
    omega = np.array([vals[offs <= t * (1 + 1e-12)].max(initial=0.0) for t in scales])
    return ModulusProfile(lq_array(arr, grid, q), scales, omega)


def modulus_norm(f: Field, s: float, q: float, r: float) -> float:
    """``||f||_q + (sum_j [t_j^-s omega_2(f, t_j)_q]^r)^(1/r)`` over dyadic scales down to the grid spacing."""
    if not 0 < s < 2:
        raise ValueError(f"smoothness s must lie in (0, 2), got {s}")
    return modulus_profile(f.values, f.grid, q).norm(s, r)


def besov_smoothness(p: float) -> float:
    return 2.0 * (1.0 - 1.0 / p)


def besov_norm(f: Field, p: float, q: float) -> float:
    """Discrete ``B^s_{q,p}`` norm with ``s = 2(1 - 1/p)`` via the second-order modulus of smoothness."""
    s = besov_smoothness(p)
    if not 0 < s < 2:
        raise ValueError(f"s = 2(1 - 1/p) = {s} must lie in (0, 2)")
    return modulus_profile(f.values, f.grid, q).norm(s, p)


# ---------------------------------------------------------------------------
# time-dependent quantities


def material_derivative(g_history: Sequence[ScalarField], u: VectorField, dt: float) -> ScalarField:
    """``(g_1 - g_0)/dt + u . grad g_1`` from the last two samples."""
    if len(g_history) < 2:
        raise ValueError("material derivative needs two consecutive samples")
    g0, g1 = g_history[-2], g_history[-1]
    adv = np.einsum("i...,i...->...", u.values, gradient_array(g1.values, g1.grid))
    return ScalarField(g1.grid, (g1.values - g0.values) / dt + adv)


def time_lp(values: Sequence[float], times: Sequence[float], p: float) -> float:
    v = np.abs(np.asarray(values, dtype=float))
    if np.isinf(p):
        return float(v.max())
    return float(np.trapezoid(v**p, np.asarray(times, dtype=float)) ** (1.0 / p))


def time_derivatives(traj: Trajectory) -> list[State]:
    """Backward differences of every field (forward at the first sample)."""
    if len(traj) < 2:
        raise ValueError("time derivatives need at least two samples")
    out = []
    for k in range(len(traj)):
        a, b = (traj[0], traj[1]) if k == 0 else (traj[k - 1], traj[k])
        dt = b.t - a.t
        out.append(State(traj[k].t, (b.rho - a.rho) / dt, (b.theta - a.theta) / dt, (b.u - a.u) / dt))
    return out


def _need_two(traj: Trajectory) -> None:
    if len(traj) < 2:
        raise ValueError("trajectory norms need at least two samples")


def _check_composite_q(q: float) -> None:
    if not 3 < q < np.inf:
        raise ValueError(f"composite norms need 3 < q < inf, got {q}")


def data_norm_DpqI(rho0: ScalarField, theta0: ScalarField, u0: VectorField, p: float, q: float) -> float:
    """``||rho0||_{W^{1,q}} + ||(theta0, u0)||_B``."""
    _check_composite_q(q)
    return sobolev_norm(rho0, 1, q) + besov_norm(theta0, p, q) + besov_norm(u0, p, q)


def solution_norm_Spq(traj: Trajectory, p: float, q: float) -> float:
    """Sup of ``||rho||_{W^{1,q}}`` + ``L^p_t W^{2,q}`` of (theta, u) + ``L^p_t L^q`` of the time
    derivatives + the Besov norm of (theta, u) at the first sample."""
    _need_two(traj)
    _check_composite_q(q)
    times = traj.times
    rho_part = max(sobolev_norm(s.rho, 1, q) for s in traj)
    w2q = [sobolev_norm(s.theta, 2, q) + sobolev_norm(s.u, 2, q) for s in traj]
    dts = time_derivatives(traj)
    dtq = [lq_norm(d.rho, q) + lq_norm(d.theta, q) + lq_norm(d.u, q) for d in dts]
    s0 = traj[0]
    return (rho_part + time_lp(w2q, times, p) + time_lp(dtq, times, p)
            + besov_norm(s0.theta, p, q) + besov_norm(s0.u, p, q))


def chk_norm(traj: Trajectory, q: float) -> float:
    """Mixed-class norm with ``W^{2,2}``, ``W^{2,q}`` and ``W^{1,2}`` pieces (derivative orders <= 2)."""
    if not 3 < q <= 6:
        raise ValueError(f"chk_norm needs 3 < q <= 6, got {q}")
    _need_two(traj)
    times = traj.times
    dts = time_derivatives(traj)
    return (max(sobolev_norm(s.rho, 1, q) for s in traj)
            + max(lq_norm(d.rho, q) for d in dts)
            + max(sobolev_norm(s.theta, 2, 2) + sobolev_norm(s.u, 2, 2) for s in traj)
            + time_lp([sobolev_norm(s.theta, 2, q) + sobolev_norm(s.u, 2, q) for s in traj], times, 2)
            + max(lq_norm(d.theta, 2) + lq_norm(d.u, 2) for d in dts)
            + time_lp([sobolev_norm(d.theta, 1, 2) + sobolev_norm(d.u, 1, 2) for d in dts], times, 2))


def data_norm_chk(rho0: ScalarField, theta0: ScalarField, u0: VectorField, q: float) -> float:
    """``||rho0||_{W^{1,q}} + ||u0||_{W^{2,2}} + ||theta0||_{W^{2,2}}``."""
    return sobolev_norm(rho0, 1, q) + sobolev_norm(u0, 2, 2) + sobolev_norm(theta0, 2, 2)
