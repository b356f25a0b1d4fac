import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsflab.grid import ScalarField, VectorField
from nsflab.transport import (CFLError, PathError, PositivityLoss, VelocityHistory, advance_density, cfl_number,
                              mass, renormalized_residual, trace_characteristic)

from conftest import box_grid, channel_grid, characteristics_errors


def _tangential_flow(g, a, b, ph):
    X, Y = g.mesh
    return VectorField(g, np.stack([a * np.sin(np.pi * Y) * np.sin(2 * np.pi * X + ph) + 0 * X,
                                    b * np.sin(np.pi * Y) * np.cos(2 * np.pi * X + ph)]))


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 6.3), st.integers(1, 20))
def test_upwind_conserves_mass_and_positivity(a, b, ph, steps):
    g = channel_grid(16)
    X, Y = g.mesh
    u = _tangential_flow(g, a, b, ph)
    rho = ScalarField(g, 1 + 0.5 * np.cos(2 * np.pi * X) * Y)
    vmax = max(np.abs(u.values).max(), 1e-3)
    dt = 0.4 / (2 * vmax / g.spacing[0])
    m0 = mass(rho)
    for _ in range(steps):
        rho = advance_density(rho, u, dt)
    assert abs(mass(rho) - m0) <= 1e-12 * m0
    assert rho.values.min() > 0


def test_uniform_density_stays_uniform_in_divergence_free_shear():
    g = channel_grid(16)
    X, Y = g.mesh
    u = VectorField(g, np.stack([Y * (1 - Y), 0 * Y]))
    rho = ScalarField.constant(g, 2.0)
    for _ in range(10):
        rho = advance_density(rho, u, 0.05)
    np.testing.assert_allclose(rho.values, 2.0, rtol=0, atol=1e-14)


def test_cfl_violation_raises():
    g = box_grid(8)
    u = VectorField(g, np.ones((2, *g.node_shape)))
    assert cfl_number(u.values, g, 0.1) == pytest.approx(1.6)
    with pytest.raises(CFLError):
        advance_density(ScalarField.constant(g, 1.0), u, 0.1)


def test_positivity_loss_reported_not_clipped():
    g = channel_grid(16)
    rho = ScalarField.constant(g, 1.0)
    u = VectorField.zeros(g)
    with pytest.raises(PositivityLoss) as info:
        advance_density(rho, u, 0.1, source=np.full(g.node_shape, -20.0))
    assert info.value.field == "rho" and info.value.value <= 0


def test_characteristic_of_uniform_flow_is_a_line():
    g = channel_grid(16)
    u = VectorField(g, np.stack([np.full(g.node_shape, 0.5), np.zeros(g.node_shape)]))
    path = trace_characteristic(VelocityHistory.steady(u, 1.0, 10), [0.1, 0.4])
    np.testing.assert_allclose(path.endpoint, [0.6, 0.4], atol=1e-12)
    np.testing.assert_allclose(path.div_samples, 0.0, atol=1e-12)


def test_characteristic_wraps_periodic_axis():
    g = channel_grid(16)
    u = VectorField(g, np.stack([np.full(g.node_shape, 1.0), np.zeros(g.node_shape)]))
    path = trace_characteristic(VelocityHistory.steady(u, 0.75, 5), [0.5, 0.5])
    np.testing.assert_allclose(path.endpoint, [0.25, 0.5], atol=1e-12)


def test_path_leaving_a_walled_domain_raises():
    g = box_grid(8)
    u = VectorField(g, np.stack([np.full(g.node_shape, 1.0), np.zeros(g.node_shape)]))
    with pytest.raises(PathError):
        trace_characteristic(VelocityHistory.steady(u, 1.0, 4), [0.5, 0.5])


def test_reciprocal_density_matches_eulerian_density():
    errs, bound = characteristics_errors(n=32, npaths=5)
    assert errs.max() <= 5 * bound


def test_renormalized_residual_small_for_consistent_history():
    g = channel_grid(32)
    X, Y = g.mesh
    u = VectorField(g, np.stack([0.3 * np.sin(np.pi * Y) * np.sin(2 * np.pi * X), 0 * X]))
    rho = ScalarField(g, 1 + 0.2 * np.cos(np.pi * Y))
    dt = 0.25 / 32
    hist, us, ts = [rho], [u], [0.0]
    for k in range(20):
        rho = advance_density(rho, u, dt)
        hist.append(rho)
        us.append(u)
        ts.append((k + 1) * dt)
    res = renormalized_residual(np.log, lambda r: 1 / r, hist, us, ts)
    assert res.max() < 0.1
    with pytest.raises(ValueError):
        renormalized_residual(np.log, lambda r: 1 / r, hist, us, ts, domain=(1.5, np.inf))
