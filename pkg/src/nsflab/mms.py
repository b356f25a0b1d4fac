"""Manufactured solutions: symbolic forcing terms and convergence studies.

A manufactured triple ``(rho*, theta*, u*)`` is given as sympy expressions in
``x, y, t``.  The forcing for each equation is its residual evaluated on the
triple, so that the triple solves the forced system exactly::

    S_rho   = rho_t + div(rho u)
    S_u     = u_t + (u . grad) u - div S / rho + theta grad log rho + grad theta - grad G
    S_theta = theta_t + u . grad theta - kappa lap theta / (c_v rho)
              - S:D / (c_v rho) + theta div u / c_v
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import sympy as sym

from .constitutive import FluidParams
from .elliptic import BoundaryData, attach_extensions
from .grid import Grid, ScalarField, VectorField, build_grid, parse_face
from .state import State
from .stepper import StepperConfig, run

logger = logging.getLogger(__name__)

X, Y, Z, T = sym.symbols("x y z t", real=True)
SPACE = (X, Y, Z)


class BoundaryIncompatible(ValueError):
    pass


def _expr(e) -> sym.Expr:
    if isinstance(e, sym.Expr):
        return e
    return sym.sympify(e, locals={"x": X, "y": Y, "z": Z, "t": T, "pi": sym.pi})


@dataclass
class Manufactured:
    rho: sym.Expr
    theta: sym.Expr
    u: tuple
    G: sym.Expr = sym.Integer(0)

    def __post_init__(self):
        self.rho = _expr(self.rho)
        self.theta = _expr(self.theta)
        self.u = tuple(_expr(c) for c in self.u)
        self.G = _expr(self.G)

    @property
    def dim(self) -> int:
        return len(self.u)

    @property
    def coords(self):
        return SPACE[: self.dim]


def _lambdify(expr, coords):
    f = sym.lambdify((T, *coords), expr, "numpy", cse=True)

    def call(t, *x):
        out = np.asarray(f(t, *x), dtype=float)
        return np.broadcast_to(out, np.broadcast_shapes(*(np.shape(c) for c in x))).copy()

    return call


@dataclass
class ForcedSystem:
    """Exact fields and forcing terms of a manufactured solution, callable as ``f(t, *x)``."""

    manufactured: Manufactured
    params: FluidParams
    exprs: dict
    rho: Callable
    theta: Callable
    u: list
    G: Callable
    S_rho: Callable
    S_u: list
    S_theta: Callable

    def state(self, grid: Grid, t: float) -> State:
        m = grid.mesh
        return State(float(t), ScalarField(grid, self.rho(t, *m)), ScalarField(grid, self.theta(t, *m)),
                     VectorField(grid, np.stack([c(t, *m) for c in self.u])))

    def source_fn(self, grid: Grid, scale: float = 1.0):
        """Forcing sampled on ``grid`` for :class:`StepperConfig`; ``scale`` != 1 makes it inconsistent."""
        m = grid.mesh

        def sources(t):
            return (scale * self.S_rho(t, *m),
                    scale * np.stack([c(t, *m) for c in self.S_u]),
                    scale * self.S_theta(t, *m))

        return sources

    def potential(self, grid: Grid) -> ScalarField:
        return ScalarField(grid, self.G(0.0, *grid.mesh))


def forcing_expressions(ms: Manufactured, mu, lam, kappa, cv) -> dict:
    xs = ms.coords
    d = ms.dim
    rho, th, u, G = ms.rho, ms.theta, ms.u, ms.G
    J = sym.Matrix(d, d, lambda i, j: sym.diff(u[i], xs[j]))
    divu = J.trace()
    eye = sym.eye(d)
    S = mu * (J + J.T - sym.Rational(2, 3) * divu * eye) + lam * divu * eye
    D = (J + J.T) / 2
    divS = [sum(sym.diff(S[i, j], xs[j]) for j in range(d)) for i in range(d)]
    diss = sum(S[i, j] * D[i, j] for i in range(d) for j in range(d))
    lap_th = sum(sym.diff(th, x, 2) for x in xs)

    S_rho = sym.diff(rho, T) + sum(sym.diff(rho * u[i], xs[i]) for i in range(d))
    S_u = [sym.diff(u[i], T) + sum(u[j] * J[i, j] for j in range(d)) - divS[i] / rho
           + th * sym.diff(sym.log(rho), xs[i]) + sym.diff(th, xs[i]) - sym.diff(G, xs[i])
           for i in range(d)]
    S_th = (sym.diff(th, T) + sum(u[i] * sym.diff(th, xs[i]) for i in range(d))
            - kappa * lap_th / (cv * rho) - diss / (cv * rho) + th * divu / cv)
    return {"S_rho": S_rho, "S_u": S_u, "S_theta": S_th}


def check_boundary_compatibility(ms: Manufactured, grid: Grid, t_end: float = 1.0, samples: int = 7) -> None:
    """Wall traces must be tangential and time-independent, as must theta on Gamma_D and d_n theta on Gamma_N."""
    xs = ms.coords
    rng = np.random.default_rng(12345)
    times = np.linspace(0.0, t_end, 4)
    bmap = grid.boundary_map
    for face in grid.walled_faces:
        axis, side = parse_face(face)
        wall = 0.0 if side < 0 else grid.extents[axis]
        pts = [rng.uniform(0, grid.extents[a], samples) for a in range(ms.dim)]
        pts[axis] = np.full(samples, wall)

        def trace(e, name):
            f = _lambdify(e, xs)
            vals = np.array([f(t, *pts) for t in times])
            drift = np.abs(vals - vals[0]).max()
            if drift > 1e-12 * (1 + np.abs(vals).max()):
                raise BoundaryIncompatible(f"{name} trace on {face} depends on time (drift {drift:.3e})")
            return vals[0]

        un = trace(ms.u[axis], f"u.n")
        if np.abs(un).max() > 1e-12:
            raise BoundaryIncompatible(f"manufactured u has a normal component on {face}: max {np.abs(un).max():.3e}")
        for i in range(ms.dim):
            trace(ms.u[i], f"u_{i}")
        if bmap[face].value == "DirichletTemp":
            if trace(ms.theta, "theta").min() <= 0:
                raise BoundaryIncompatible(f"manufactured theta is not positive on {face}")
        else:
            trace(side * sym.diff(ms.theta, xs[axis]), "d_n theta")


def mms_source(ms: Manufactured, params: FluidParams, grid: Grid | None = None) -> ForcedSystem:
    """Symbolically assemble the forcing that makes ``ms`` an exact solution.

    When ``grid`` is given, the manufactured traces are checked against its walls.
    """
    if grid is not None:
        check_boundary_compatibility(ms, grid)
    ex = forcing_expressions(ms, params.mu, params.lam, params.kappa, params.cv)
    xs = ms.coords
    return ForcedSystem(
        ms, params, ex,
        _lambdify(ms.rho, xs), _lambdify(ms.theta, xs), [_lambdify(c, xs) for c in ms.u], _lambdify(ms.G, xs),
        _lambdify(ex["S_rho"], xs), [_lambdify(e, xs) for e in ex["S_u"]], _lambdify(ex["S_theta"], xs),
    )


# ---------------------------------------------------------------------------
# reference family and studies


def channel_family() -> tuple[Manufactured, dict]:
    """Smooth family on the unit square, periodic in x, Dirichlet temperature at y=0, flux at y=1.

    Density depends on y only while u points along x, so ``u . grad rho = 0``
    and first-order upwinding does not pollute the velocity and temperature.
    """
    ms = Manufactured(
        rho="1 + 0.2*cos(pi*y)*exp(-t)",
        theta="1 + 0.1*cos(2*pi*x) + 0.2*y**2 + 0.2*exp(-t)*cos(2*pi*x)*sin(pi*y/2)",
        u=("0.5*y + 0.3*exp(-t)*sin(2*pi*x)*sin(pi*y)", "0"),
        G="-0.5*y",
    )
    setup = {
        "extents": (1.0, 1.0),
        "topology": ("periodic", "walled"),
        "boundary": {"y-": "DirichletTemp", "y+": "NeumannTemp"},
        "params": dict(mu=0.5, lam=0.1, kappa=0.8, cv=1.5),
    }
    return ms, setup


def bd_from_manufactured(fs: ForcedSystem, grid: Grid) -> BoundaryData:
    ms = fs.manufactured
    xs = ms.coords
    u_B, theta_B, q_B = {}, {}, {}
    for face in grid.walled_faces:
        axis, side = parse_face(face)
        fc = grid.face_coords(face)
        u_B[face] = tuple(c(0.0, *fc) for c in fs.u)
        if grid.boundary_map[face].value == "DirichletTemp":
            theta_B[face] = fs.theta(0.0, *fc)
        else:
            q_B[face] = _lambdify(side * sym.diff(ms.theta, xs[axis]), xs)(0.0, *fc)
    return BoundaryData(grid, u_B, theta_B, q_B)


@dataclass
class MMSProblem:
    forced: ForcedSystem
    grid: Grid
    params: FluidParams
    bd: BoundaryData
    initial: State

    @classmethod
    def build(cls, fs: ForcedSystem, grid: Grid) -> "MMSProblem":
        p = fs.params
        params = FluidParams(p.mu, p.lam, p.kappa, p.cv, G=fs.potential(grid))
        bd = bd_from_manufactured(fs, grid)
        initial = fs.state(grid, 0.0)
        attach_extensions(bd, params, initial.theta)
        return cls(fs, grid, params, bd, initial)

    def config(self, dt: float, t_end: float, scale: float = 1.0, p: float = 2.0, q: float = 4.0,
               cfl_safety: float = 1.0) -> StepperConfig:
        return StepperConfig(dt, t_end, cfl_safety=cfl_safety, p=p, q=q,
                             sources=self.forced.source_fn(self.grid, scale))

    def run(self, dt: float, t_end: float, scale: float = 1.0, monitor=None, cfl_safety: float = 1.0, **kw):
        cfg = self.config(dt, t_end, scale, cfl_safety=cfl_safety)
        return run(self.initial, self.params, self.bd, cfg, monitor=monitor, **kw)


def l2_error(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    diff = a - b
    if diff.ndim > grid.dim:
        diff = np.sqrt(np.sum(diff**2, axis=0))
    return float(np.sqrt(grid.integrate(diff**2)))


def field_errors(state: State, exact: State) -> dict[str, float]:
    g = state.grid
    return {"rho": l2_error(state.rho.values, exact.rho.values, g),
            "theta": l2_error(state.theta.values, exact.theta.values, g),
            "u": l2_error(state.u.values, exact.u.values, g)}


def observed_orders(errors: Sequence[float], ratios: Sequence[float]) -> list[float]:
    """``log(e_k / e_{k+1}) / log(r_k)``; nan where an error vanishes."""
    out = []
    for e0, e1, r in zip(errors[:-1], errors[1:], ratios):
        if e0 > 0 and e1 > 0:
            out.append(float(np.log(e0 / e1) / np.log(r)))
        else:
            out.append(float("nan"))
    return out


@dataclass
class StudyRow:
    level: int
    n: int
    h: float
    dt: float
    errors: dict
    orders: dict = field(default_factory=dict)


def make_grid(setup: dict, n: int) -> Grid:
    d = len(setup["extents"])
    return build_grid(d, setup["extents"], (n,) * d, setup["boundary"], setup["topology"],
                      neumann_flux_zero=setup.get("neumann_flux_zero", True))


def spatial_dt(h: float, t_end: float, dt_coeff: float) -> float:
    """Largest ``t_end / N`` not exceeding ``dt_coeff * h**2``."""
    return t_end / int(np.ceil(t_end / (dt_coeff * h**2) - 1e-9))


def spatial_study(fs: ForcedSystem, setup: dict, counts: Sequence[int], t_end: float, dt_coeff: float,
                  scale: float = 1.0, cfl_safety: float = 1.0, hooks=()) -> list[StudyRow]:
    """Errors against the exact solution at ``t_end`` with ``dt = dt_coeff * h**2``; ``hooks`` go to every run."""
    rows = []
    for lvl, n in enumerate(counts):
        grid = make_grid(setup, n)
        prob = MMSProblem.build(fs, grid)
        h = max(grid.spacing)
        dt = spatial_dt(h, t_end, dt_coeff)
        res = prob.run(dt, t_end, scale, cfl_safety=cfl_safety, store_every=None, hooks=hooks)
        if res.status != "completed":
            raise RuntimeError(f"MMS run at n={n} ended with status {res.status}: {res.message}")
        rows.append(StudyRow(lvl, n, h, dt, field_errors(res.final, fs.state(grid, res.final.t))))
    _fill_orders(rows, [rows[k].h / rows[k + 1].h for k in range(len(rows) - 1)])
    return rows


def temporal_study(fs: ForcedSystem, setup: dict, n: int, t_end: float, dts: Sequence[float],
                   scale: float = 1.0, cfl_safety: float = 1.0, hooks=()) -> list[StudyRow]:
    """Self-convergence on a fixed grid: the error at level k is ``|U_dt_k - U_dt_{k+1}|``."""
    grid = make_grid(setup, n)
    prob = MMSProblem.build(fs, grid)
    finals = []
    for dt in dts:
        nsteps = int(round(t_end / dt))
        res = prob.run(t_end / nsteps, t_end, scale, cfl_safety=cfl_safety, store_every=None, hooks=hooks)
        if res.status != "completed":
            raise RuntimeError(f"MMS run at dt={dt} ended with status {res.status}: {res.message}")
        finals.append(res.final)
    rows = []
    for k in range(len(dts) - 1):
        rows.append(StudyRow(k, n, max(grid.spacing), dts[k], field_errors(finals[k], finals[k + 1])))
    _fill_orders(rows, [dts[k] / dts[k + 1] for k in range(len(dts) - 2)])
    return rows


def _fill_orders(rows: list[StudyRow], ratios: Sequence[float]) -> None:
    if not rows:
        return
    for key in rows[0].errors:
        orders = observed_orders([r.errors[key] for r in rows], ratios)
        for r, o in zip(rows[1:], orders):
            r.orders[key] = o
