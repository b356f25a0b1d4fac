"""Harmonic temperature extension and Lame velocity extension against closed forms.

    python3 demos/extensions.py

The temperature is harmonic with theta = 1 + cos(2 pi x)/2 at y = 0 and zero flux
at y = 1 on the periodic channel; the velocity is the linear shear between a
resting floor and a sliding lid.
"""

import numpy as np

from nsflab import BoundaryData, FluidParams, ScalarField, build_grid, extend_temperature, extend_velocity

params = FluidParams(0.5, 0.1, 1.0, 1.0)
print(f"{'n':>5} {'theta error':>12} {'shear error':>12}")
for n in (16, 32, 64, 128):
    g = build_grid(2, (1.0, 1.0), (n, n), {"y-": "DirichletTemp", "y+": "NeumannTemp"}, ("periodic", "walled"))
    X, Y = g.mesh
    exact = 1 + 0.5 * np.cos(2 * np.pi * X) * np.cosh(2 * np.pi * (1 - Y)) / np.cosh(2 * np.pi)
    bd = BoundaryData(g, {"y-": (0.0, 0.0), "y+": (0.7, 0.0)},
                      {"y-": 1 + 0.5 * np.cos(2 * np.pi * g.face_coords("y-")[0])}, {"y+": 0.0})
    th = extend_temperature(bd, ScalarField.constant(g, 1.0))
    u = extend_velocity(bd, params)
    shear = max(np.abs(u.values[0] - 0.7 * Y).max(), np.abs(u.values[1]).max())
    print(f"{n:5d} {np.abs(th.values - exact).max():12.3e} {shear:12.3e}")
