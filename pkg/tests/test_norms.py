import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nsflab.grid import ScalarField, VectorField
from nsflab.norms import (besov_norm, chk_norm, data_norm_chk, data_norm_DpqI, lq_norm, material_derivative,
                          modulus_norm, modulus_profile, sobolev_norm, solution_norm_Spq, sup_norm, time_lp,
                          w1inf_norm)
from nsflab.state import Trajectory

from conftest import box_grid, channel_grid, equilibrium

G8 = channel_grid(8)
field_values = arrays(float, G8.node_shape, elements=st.floats(-100, 100))
NORMS = [
    ("L2", lambda f: lq_norm(f, 2)),
    ("L4", lambda f: lq_norm(f, 4)),
    ("Linf", lambda f: lq_norm(f, np.inf)),
    ("W1,4", lambda f: sobolev_norm(f, 1, 4)),
    ("W2,2", lambda f: sobolev_norm(f, 2, 2)),
    ("B", lambda f: besov_norm(f, 2, 4)),
    ("sup", sup_norm),
    ("W1inf", w1inf_norm),
]


@pytest.mark.parametrize("name, norm", NORMS, ids=[n for n, _ in NORMS])
@settings(max_examples=40, deadline=None)
@given(field_values, field_values, st.floats(-50, 50))
def test_homogeneity_and_triangle(name, norm, a, b, c):
    f, g = ScalarField(G8, a), ScalarField(G8, b)
    nf, ng = norm(f), norm(g)
    assert norm(f * c) == pytest.approx(abs(c) * nf, rel=1e-12, abs=1e-300)
    assert norm(f + g) <= (nf + ng) * (1 + 1e-12) + 1e-300


def test_sup_norm_matches_exhaustive_scan():
    rng = np.random.default_rng(1)
    u = VectorField(G8, rng.normal(size=(2, *G8.node_shape)))
    th = ScalarField(G8, rng.normal(size=G8.node_shape))
    best = 0.0
    for idx in itertools.product(*(range(m) for m in G8.node_shape)):
        best = max(best, abs(th.values[idx]), abs(u.values[(0, *idx)]), abs(u.values[(1, *idx)]))
    assert sup_norm(th, u) == best


def test_lq_of_constant_on_unit_square():
    g = box_grid(8)
    for q in (1, 2, 3.5, np.inf):
        assert lq_norm(ScalarField.constant(g, 3.0), q) == pytest.approx(3.0, rel=1e-14)


def test_vector_fields_use_euclidean_magnitude():
    g = box_grid(8)
    v = VectorField(g, np.stack([np.full(g.node_shape, 3.0), np.full(g.node_shape, 4.0)]))
    assert lq_norm(v, 2) == pytest.approx(5.0)
    assert sup_norm(v) == 4.0


def test_sobolev_of_linear_function():
    g = box_grid(16)
    X, Y = g.mesh
    f = ScalarField(g, 2 * X)
    # ||2x||_2 = 2/sqrt(3) (trapezoid adds h^2/6 * 4), ||d_x f||_2 = 2, ||d_y f||_2 = 0
    h = g.spacing[0]
    assert sobolev_norm(f, 1, 2) == pytest.approx(np.sqrt(4 * (1 / 3 + h**2 / 6)) + 2.0, rel=1e-12)


def test_besov_of_constant_is_lq_term_exactly():
    for g in (G8, box_grid(16)):
        c = ScalarField.constant(g, -1.7)
        assert besov_norm(c, 2, 4) == lq_norm(c, 4)
        assert modulus_norm(c, 0.5, 3, np.inf) == lq_norm(c, 3)


def test_modulus_vanishes_on_affine_functions_in_walled_box():
    g = box_grid(16)
    X, Y = g.mesh
    prof = modulus_profile(1 + 2 * X - Y, g, 2)
    assert np.abs(prof.omega).max() < 1e-12


def test_besov_seminorm_stable_under_refinement_for_smooth_data():
    vals = []
    for n in (32, 64, 128):
        g = channel_grid(n)
        X, Y = g.mesh
        vals.append(besov_norm(ScalarField(g, np.cos(2 * np.pi * X) * np.cos(np.pi * Y)), 2, 4))
    assert abs(vals[2] / vals[1] - 1) < 0.05


def test_smoothness_range_checked():
    with pytest.raises(ValueError):
        modulus_norm(ScalarField.constant(G8, 1.0), 2.0, 2, 2)
    with pytest.raises(ValueError):
        lq_norm(ScalarField.constant(G8, 1.0), 0.5)


def test_time_lp_trapezoid():
    t = np.linspace(0, 1, 201)
    assert time_lp(t, t, 2) == pytest.approx(np.sqrt(1 / 3), rel=1e-4)
    assert time_lp(-t, t, np.inf) == 1.0


def test_material_derivative_of_advected_profile():
    g = channel_grid(64)
    X, Y = g.mesh
    dt = 1e-4
    f0 = ScalarField(g, np.sin(2 * np.pi * X))
    f1 = ScalarField(g, np.sin(2 * np.pi * (X - dt)))
    u = VectorField(g, np.stack([np.ones(g.node_shape), np.zeros(g.node_shape)]))
    assert np.abs(material_derivative([f0, f1], u, dt).values).max() < 0.02


def test_equilibrium_composite_norms():
    g = channel_grid(16)
    s, _, bd = equilibrium(g)
    traj = Trajectory([s, type(s)(0.5, s.rho, s.theta, s.u), type(s)(1.0, s.rho, s.theta, s.u)], bd)
    # rho = theta = 1, u = 0 on the unit square over [0, 1]
    assert solution_norm_Spq(traj, 2, 4) == pytest.approx(3.0, rel=1e-12)
    assert chk_norm(traj, 4) == pytest.approx(3.0, rel=1e-12)
    assert data_norm_DpqI(s.rho, s.theta, s.u, 2, 4) == pytest.approx(2.0, rel=1e-12)
    assert data_norm_chk(s.rho, s.theta, s.u, 4) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ValueError):
        chk_norm(traj, 7)
    with pytest.raises(ValueError):
        solution_norm_Spq(traj, 2, 3)
