import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from nsflab.constitutive import FluidParams
from nsflab.elliptic import (BoundaryData, SolverError, extend_temperature, extend_velocity, flux_operator,
                             lame_apply, lame_system, pcg, solve_mixed_poisson)
from nsflab.grid import ScalarField, build_grid

from conftest import box_grid, channel_grid
from oracles import mixed_bc, mixed_series, mixed_theta_B


def test_pcg_solves_spd_system():
    rng = np.random.default_rng(0)
    A = sp.diags([-1, 2.5, -1], [-1, 0, 1], shape=(50, 50), format="csr")
    b = rng.normal(size=50)
    x, hist = pcg(A, b, rtol=1e-12)
    assert np.linalg.norm(A @ x - b) <= 1e-11 * np.linalg.norm(b)
    assert hist[-1] <= 1e-12 * np.linalg.norm(b)


def test_pcg_reports_history_when_capped():
    A = sp.diags([-1, 2.0, -1], [-1, 0, 1], shape=(400, 400), format="csr")
    with pytest.raises(SolverError) as info:
        pcg(A, np.ones(400), rtol=1e-14, maxiter=3)
    assert len(info.value.history) >= 3


def test_flux_operator_symmetric_and_annihilates_constants():
    g = box_grid(10)
    K = flux_operator(g)
    assert abs(K - K.T).max() < 1e-14
    np.testing.assert_allclose(K @ np.ones(g.n_nodes), 0.0, atol=1e-12)


def test_dirichlet_poisson_second_order():
    errs = []
    for n in (16, 32, 64):
        g = box_grid(n, {f: "DirichletTemp" for f in ("x-", "x+", "y-", "y+")})
        X, Y = g.mesh
        exact = np.sin(np.pi * X) * np.sin(np.pi * Y)
        rhs = ScalarField(g, 2 * np.pi**2 * exact)
        phi = solve_mixed_poisson(rhs, {f: 0.0 for f in g.walled_faces}, {})
        errs.append(np.abs(phi.values - exact).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_pure_neumann_compatible_and_incompatible():
    g = channel_grid(32, {"y-": "NeumannTemp", "y+": "NeumannTemp"})
    X, Y = g.mesh
    exact = np.cos(np.pi * Y)
    rhs = ScalarField(g, np.pi**2 * exact)
    phi = solve_mixed_poisson(rhs, {}, {"y-": 0.0, "y+": 0.0})
    assert abs(g.integrate(phi.values)) < 1e-12
    assert np.abs(phi.values - exact).max() < 2e-3
    with pytest.raises(ValueError, match="incompatible"):
        solve_mixed_poisson(ScalarField.constant(g, 1.0), {}, {"y-": 0.0, "y+": 0.0})


def test_mixed_extension_matches_series():
    g = build_grid(2, (1, 1), (64, 64), mixed_bc(), ("walled", "walled"))
    bd = BoundaryData.from_functions(g, theta_B=mixed_theta_B, q_B=0.0)
    th = extend_temperature(bd, ScalarField.constant(g, 1.0))
    X, Y = g.mesh
    assert np.abs(th.values - mixed_series(X, Y)).max() < 1e-4


def test_temperature_extension_without_dirichlet_is_min_theta0():
    g = channel_grid(16, {"y-": "NeumannTemp", "y+": "NeumannTemp"})
    X, Y = g.mesh
    bd = BoundaryData.from_functions(g, q_B=0.0)
    th = extend_temperature(bd, ScalarField(g, 2 + np.sin(2 * np.pi * X)))
    assert np.all(th.values == 1.0)


def test_boundary_data_validation():
    g = channel_grid(16)
    with pytest.raises(ValueError, match="normal component"):
        BoundaryData.from_functions(g, u_B=lambda x, y: (0 * x, 0 * x + 0.1), theta_B=1.0)
    with pytest.raises(ValueError, match="positive"):
        BoundaryData.from_functions(g, theta_B=-1.0)
    with pytest.raises(ValueError, match="theta_B missing"):
        BoundaryData(g)
    bd = BoundaryData.from_functions(g, theta_B=1.0, q_B=-0.5)
    assert not bd.flux_nonnegative


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(0.0, 2.0), st.floats(-2, 2))
def test_lame_extension_reproduces_shear(mu, lam, top):
    g = channel_grid(16)
    bd = BoundaryData(g, {"y-": (0.0, 0.0), "y+": (top, 0.0)}, {"y-": 1.0}, {})
    u = extend_velocity(bd, FluidParams(mu, lam, 1.0, 1.0))
    X, Y = g.mesh
    assert np.abs(u.values[0] - top * Y).max() <= 1e-10 * (1 + abs(top))
    assert np.abs(u.values[1]).max() <= 1e-10 * (1 + abs(top))


def test_lame_operator_symmetric_and_consistent():
    g = box_grid(12)
    params = FluidParams(0.7, 0.4, 1.0, 1.0)
    sysm = lame_system(g, params.mu, params.lam)
    assert abs(sysm.L_uu - sysm.L_uu.T).max() < 1e-9
    X, Y = g.mesh
    # u = (x^2, x y): lap u = (2, 0), div u = 3x, so div S = (2 mu + 3 (mu/3 + lam), 0)
    u = np.stack([X**2, X * Y])
    Lu = lame_apply(u, g, params)
    c = params.mu / 3 + params.lam
    inner = (slice(2, -2), slice(2, -2))
    np.testing.assert_allclose(Lu[0][inner], 2 * params.mu + c * 3, atol=1e-8)
    np.testing.assert_allclose(Lu[1][inner], 0.0, atol=1e-8)
