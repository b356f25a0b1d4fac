"""Solution snapshots and time-ordered collections of them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Grid, ScalarField, VectorField
from .transport import PositivityLoss


@dataclass(frozen=True)
class State:
    t: float
    rho: ScalarField
    theta: ScalarField
    u: VectorField

    @property
    def grid(self) -> Grid:
        return self.rho.grid

    def validate(self, bd=None, atol: float | None = None) -> None:
        """Positivity of rho and theta and, when ``bd`` is given, the wall trace ``u = u_B``.

        The default trace tolerance is round-off relative to the largest velocity.
        """
        for name, f in (("rho", self.rho), ("theta", self.theta)):
            m = float(f.values.min())
            if not m > 0:
                raise PositivityLoss(f"{name} lost positivity at t={self.t:.6g} (min {m:.6g})", name, m)
        if bd is not None:
            g = self.grid
            if atol is None:
                atol = 1e-12 * (1.0 + float(np.abs(self.u.values).max()))
            for face, ub in bd.u_B.items():
                err = np.abs(self.u.values[(slice(None), *g.face_index(face))] - ub).max()
                if err > atol:
                    raise ValueError(f"velocity trace off u_B on {face} by {err:.3e}")

    def scaled(self, c: float) -> "State":
        return State(self.t, self.rho * c, self.theta * c, self.u * c)


@dataclass
class Trajectory:
    """States at strictly increasing times on one grid."""

    states: list[State] = field(default_factory=list)
    bd: object | None = None

    def __post_init__(self):
        self.states = list(self.states)
        if self.states:
            g = self.states[0].grid
            if any(s.grid != g for s in self.states):
                raise ValueError("trajectory states live on different grids")
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("trajectory times must increase strictly")

    def append(self, s: State) -> None:
        if self.states:
            if s.grid != self.grid:
                raise ValueError("state lives on a different grid")
            if s.t <= self.states[-1].t:
                raise ValueError("trajectory times must increase strictly")
        self.states.append(s)

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, k):
        return self.states[k]

    def __iter__(self):
        return iter(self.states)

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def scaled(self, c: float) -> "Trajectory":
        return Trajectory([s.scaled(c) for s in self.states], self.bd)

    @classmethod
    def from_functions(cls, grid: Grid, times: Sequence[float], rho, theta, u, bd=None) -> "Trajectory":
        """Sample closed-form ``rho(t, *x)``, ``theta(t, *x)``, ``u(t, *x) -> tuple``."""
        states = []
        for t in times:
            states.append(State(
                float(t),
                ScalarField.from_function(grid, lambda *x: rho(t, *x)),
                ScalarField.from_function(grid, lambda *x: theta(t, *x)),
                VectorField.from_function(grid, lambda *x: u(t, *x)),
            ))
        return cls(states, bd)
