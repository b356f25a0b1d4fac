import numpy as np
import pytest

from nsflab import BoundaryData, FluidParams, ScalarField, State, VectorField, attach_extensions, build_grid

# PASS/FAIL lines registered by the acceptance suite, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


CHANNEL_BC = {"y-": "DirichletTemp", "y+": "NeumannTemp"}
CHANNEL_TOPO = ("periodic", "walled")


def channel_grid(n=16, boundary=None):
    return build_grid(2, (1.0, 1.0), (n, n), boundary or CHANNEL_BC, CHANNEL_TOPO)


def box_grid(n=16, boundary=None):
    bmap = boundary or {"x-": "DirichletTemp", "x+": "NeumannTemp", "y-": "NeumannTemp", "y+": "NeumannTemp"}
    return build_grid(2, (1.0, 1.0), (n, n), bmap, ("walled", "walled"))


def equilibrium(grid, theta=1.0):
    bd = BoundaryData.from_functions(grid, theta_B=theta, q_B=0.0)
    params = FluidParams(0.5, 0.1, 0.8, 1.5)
    s = State(0.0, ScalarField.constant(grid, 1.0), ScalarField.constant(grid, theta), VectorField.zeros(grid))
    attach_extensions(bd, params, s.theta)
    return s, params, bd


def random_channel_problem(seed, n=24):
    """Smooth random data on the channel with u_B = 0, theta_B = theta0 at y=0 and q_B >= 0 at y=1."""
    rng = np.random.default_rng(seed)
    g = channel_grid(n)
    X, Y = g.mesh
    a, b, c = rng.uniform(-0.3, 0.3), rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3)
    ph, q = rng.uniform(0, 2 * np.pi), rng.uniform(0, 0.3)
    rho = 1 + a * np.cos(2 * np.pi * X + ph) * np.cos(np.pi * Y)
    th = 1 + 0.2 * rng.uniform(-1, 1) * np.sin(np.pi * Y / 2) * np.cos(2 * np.pi * X + ph) ** 2 + q * Y**2 / 2
    u = np.stack([b * np.sin(np.pi * Y) * np.sin(2 * np.pi * X + ph),
                  c * np.sin(np.pi * Y) ** 2 * np.cos(2 * np.pi * X)])
    params = FluidParams(rng.uniform(0.1, 1), rng.uniform(0, 0.5), rng.uniform(0.1, 1), rng.uniform(1, 2),
                         G=ScalarField(g, rng.uniform(-0.5, 0.5) * Y))
    zero = np.zeros(g.node_shape[0])
    bd = BoundaryData(g, {"y-": (zero, zero), "y+": (zero, zero)}, {"y-": th[:, 0].copy()}, {"y+": np.full_like(zero, q)})
    s = State(0.0, ScalarField(g, rho), ScalarField(g, th), VectorField(g, u))
    attach_extensions(bd, params, s.theta)
    return s, params, bd


@pytest.fixture
def grid16():
    return channel_grid(16)


def characteristics_errors(n=64, T=0.5, npaths=10, seed=7):
    """Evolve rho under a steady compressible channel flow and compare with the path formula.

    Returns ``(errors, h + dt)`` for reciprocal densities at ``npaths`` random origins.
    """
    from nsflab.grid import interpolate
    from nsflab.transport import VelocityHistory, advance_density, reciprocal_density_along_path, trace_characteristic

    g = channel_grid(n)
    X, Y = g.mesh
    u = VectorField(g, np.stack([0.5 + 0.3 * np.sin(2 * np.pi * X) * np.sin(np.pi * Y),
                                 0.2 * np.sin(np.pi * Y) * np.cos(2 * np.pi * X)]))
    rho0 = ScalarField(g, 1 + 0.3 * np.cos(2 * np.pi * X) * np.cos(np.pi * Y))
    nsteps = int(round(T / (0.25 / n)))
    dt = T / nsteps
    rho = rho0
    for _ in range(nsteps):
        rho = advance_density(rho, u, dt)
    hist = VelocityHistory.steady(u, T, nsteps)
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(npaths):
        x = np.array([rng.uniform(0, 1), rng.uniform(0.2, 0.8)])
        path = trace_characteristic(hist, x, substeps=2)
        recip = reciprocal_density_along_path(rho0, path)
        rho_end = float(interpolate(rho.values, g, path.endpoint[None, :])[0])
        errs.append(abs(recip - 1.0 / rho_end))
    return np.array(errs), max(g.spacing) + dt
