import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsflab.grid import (Closure, GridError, ScalarField, TempBC, VectorField, build_grid, d1, div, grad,
                         interpolate, laplacian, parse_face, read_snapshot, sym_grad, write_snapshot)

from conftest import box_grid, channel_grid


def test_node_layout_and_weights():
    g = channel_grid(16)
    assert g.node_shape == (16, 17)
    assert g.spacing == (1 / 16, 1 / 16)
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert g.walled_faces == ["y-", "y+"]
    assert g.dirichlet_faces == ["y-"] and g.neumann_faces == ["y+"]
    assert g.boundary_map["y+"] is TempBC.NEUMANN


@pytest.mark.parametrize("kw, msg", [
    (dict(boundary_map={"y-": "DirichletTemp"}), "lacks a temperature tag"),
    (dict(boundary_map={"x-": "DirichletTemp", "y-": "DirichletTemp", "y+": "NeumannTemp"}), "periodic axis"),
    (dict(boundary_map={"y-": "Robin", "y+": "NeumannTemp"}), "Robin"),
])
def test_build_grid_rejects_bad_tags(kw, msg):
    with pytest.raises((GridError, ValueError), match=msg):
        build_grid(2, (1, 1), (16, 16), kw["boundary_map"], ("periodic", "walled"))


def test_neumann_only_needs_zero_flux_declaration():
    bmap = {"y-": "NeumannTemp", "y+": "NeumannTemp"}
    build_grid(2, (1, 1), (16, 16), bmap, ("periodic", "walled"))
    with pytest.raises(GridError, match="Gamma_D"):
        build_grid(2, (1, 1), (16, 16), bmap, ("periodic", "walled"), neumann_flux_zero=False)


def test_too_coarse_grid_rejected():
    with pytest.raises(GridError):
        build_grid(1, (1,), (4,), {"x-": "DirichletTemp", "x+": "DirichletTemp"})


def test_parse_face_round_trip():
    assert parse_face("x-") == (0, -1)
    assert parse_face("y+") == (1, 1)
    with pytest.raises(GridError):
        parse_face("w+")


def test_d1_exact_on_quadratics():
    g = box_grid(12)
    X, Y = g.mesh
    f = 3 * X**2 - X * Y + 2 * Y**2
    np.testing.assert_allclose(d1(f, g, 0), 6 * X - Y, atol=1e-12)
    np.testing.assert_allclose(d1(f, g, 1), -X + 4 * Y, atol=1e-12)


def test_periodic_d1_second_order():
    errs = []
    for n in (16, 32, 64):
        g = channel_grid(n)
        X, _ = g.mesh
        errs.append(np.abs(d1(np.sin(2 * np.pi * X), g, 0) - 2 * np.pi * np.cos(2 * np.pi * X)).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.95)


def test_divergence_of_gradient_matches_closed_form():
    g = box_grid(64)
    X, Y = g.mesh
    f = ScalarField(g, np.sin(np.pi * X) * np.cos(np.pi * Y))
    lap = div(grad(f)).values
    exact = -2 * np.pi**2 * f.values
    assert np.abs(lap - exact)[4:-4, 4:-4].max() < 5e-3 * np.pi**2


def test_sym_grad_is_symmetric(grid16):
    X, Y = grid16.mesh
    u = VectorField(grid16, np.stack([np.sin(2 * np.pi * X) * Y, X * 0 + Y**2]))
    D = sym_grad(u).values
    np.testing.assert_allclose(D[0, 1], D[1, 0])


def test_laplacian_dirichlet_and_neumann_closures_exact_on_quadratic():
    g = build_grid(1, (1.0,), (16,), {"x-": "DirichletTemp", "x+": "NeumannTemp"})
    x = g.coords[0]
    f = ScalarField(g, x**2)
    lap = laplacian(f, Closure({"x-": 0.0}, {"x+": 2.0}))
    np.testing.assert_allclose(lap.values[1:], 2.0, atol=1e-9)


def test_laplacian_needs_closure_on_walls():
    g = box_grid(8)
    with pytest.raises(GridError):
        laplacian(ScalarField.constant(g, 1.0))
    with pytest.raises(GridError):
        laplacian(ScalarField.constant(g, 1.0), Closure({"x-": 0.0}, {}))


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_interpolation_exact_on_bilinear(px, py):
    g = box_grid(8)
    X, Y = g.mesh
    vals = 1 + 2 * X - Y + 0.5 * X * Y
    got = interpolate(vals, g, np.array([[px, py]]))[0]
    assert got == pytest.approx(1 + 2 * px - py + 0.5 * px * py, abs=1e-12)


def test_interpolation_wraps_periodic_axis(grid16):
    X, Y = grid16.mesh
    vals = np.cos(2 * np.pi * X) + Y
    a = interpolate(vals, grid16, np.array([[0.3, 0.5]]))
    b = interpolate(vals, grid16, np.array([[1.3, 0.5]]))
    np.testing.assert_allclose(a, b)


def test_fields_reject_wrong_shape_and_nonfinite(grid16):
    with pytest.raises(ValueError):
        ScalarField(grid16, np.zeros((3, 3)))
    bad = np.zeros(grid16.node_shape)
    bad[2, 3] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        ScalarField(grid16, bad)


def test_field_arithmetic(grid16):
    a = ScalarField.constant(grid16, 2.0)
    b = ScalarField.constant(grid16, 3.0)
    assert np.all((a * b - 1).values == 5.0)
    assert np.all((1 - a / b).values == pytest.approx(1 / 3))


def test_snapshot_round_trip(tmp_path, grid16):
    X, Y = grid16.mesh
    rho = ScalarField(grid16, 1 + X * Y)
    u = VectorField(grid16, np.stack([X, -Y]))
    path = tmp_path / "s.nsff"
    write_snapshot(path, {"rho": rho, "u": u}, t=0.25)
    header, arrays = read_snapshot(path)
    assert header["t"] == 0.25
    assert tuple(header["counts"]) == (16, 16)
    np.testing.assert_array_equal(arrays["rho"], rho.values)
    np.testing.assert_array_equal(arrays["u"], u.values)
    assert path.read_bytes()[:4] == b"NSFF"
