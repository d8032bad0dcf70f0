"""Grid construction, finite differences, quadrature, interpolation, JSON."""

import json

import numpy as np
import pytest

from metricflow import (
    DensityField,
    Grid,
    OutOfDomainError,
    ScalarField,
    SymTensorField,
    field_from_json,
    field_to_json,
    integrate,
    partial_derivative,
    sample,
)
from metricflow.fields import (
    diff_array,
    divergence_array,
    gradient_array,
    quadrature_weights,
    sample_array,
)
from metricflow.randomfields import band_limited_scalar, band_limited_vector, substream


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(3, "torus", 16)
    with pytest.raises(ValueError):
        Grid(2, "torus", 4)
    with pytest.raises(ValueError):
        Grid(2, "torus", 16, extent=2.0)
    with pytest.raises(ValueError):
        Grid(2, "klein_bottle", 16)
    with pytest.raises(ValueError):
        Grid(2, "box", 16, extent=-1.0)


def test_grid_spacing_conventions():
    assert Grid(2, "torus", 16).spacing == pytest.approx(1.0 / 16)
    assert Grid(2, "box", 17, extent=2.0).spacing == pytest.approx(2.0 / 16)
    assert Grid(1, "torus", 32).node_count == 32
    assert Grid(2, "torus", 16).node_count == 256


def test_fields_are_immutable(torus16):
    f = ScalarField.constant(torus16, 1.0)
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0


def test_density_requires_positivity(torus16):
    vals = np.ones(torus16.shape)
    vals[3, 4] = -0.1
    with pytest.raises(Exception) as err:
        DensityField(torus16, vals)
    assert "(3, 4)" in str(err.value)


# ---------------------------------------------------------------------------
# derivatives


@pytest.mark.parametrize("topology,axis", [("torus", 0), ("torus", 1), ("box", 0), ("box", 1)])
def test_derivative_of_constant_vanishes(topology, axis):
    grid = Grid(2, topology, 16, extent=1.0 if topology == "torus" else 2.0)
    f = ScalarField.constant(grid, 3.5)
    assert np.max(np.abs(partial_derivative(f, axis).values)) == 0.0


def test_derivative_axis_out_of_range(torus16):
    f = ScalarField.constant(torus16, 1.0)
    with pytest.raises(ValueError):
        partial_derivative(f, 2)


def test_torus_derivative_matches_analytic_oracle():
    errs = []
    for n in (32, 64):
        grid = Grid(2, "torus", n)
        x = grid.coordinates()
        f = ScalarField(grid, np.sin(2 * np.pi * x[0]))
        exact = 2 * np.pi * np.cos(2 * np.pi * x[0])
        errs.append(float(np.max(np.abs(partial_derivative(f, 0).values - exact))))
    # leading error term of the central stencil on sin is (2 pi)^3 h^2 / 6
    assert errs[1] <= (2 * np.pi) ** 3 * (1.0 / 64) ** 2 / 6 * 1.05
    assert 3.5 <= errs[0] / errs[1] <= 4.5  # second order


def test_box_derivative_exact_on_affine():
    grid = Grid(2, "box", 16, extent=2.0)
    x = grid.coordinates()
    f = ScalarField(grid, x[0])
    df = partial_derivative(f, 0)
    assert np.max(np.abs(df.values - 1.0)) <= 1e-13  # one-sided stencil exact too


def test_box_derivative_second_order_including_boundary():
    errs = []
    for n in (33, 65):
        grid = Grid(2, "box", n, extent=2.0)
        x = grid.coordinates()
        f = ScalarField(grid, np.sin(x[0] + 0.3))
        exact = np.cos(x[0] + 0.3)
        errs.append(float(np.max(np.abs(partial_derivative(f, 0).values - exact))))
    assert 3.2 <= errs[0] / errs[1] <= 4.8


def test_fourth_order_stencil_is_more_accurate():
    grid = Grid(2, "torus", 64)
    x = grid.coordinates()
    f = np.sin(2 * np.pi * x[0])
    exact = 2 * np.pi * np.cos(2 * np.pi * x[0])
    e2 = np.max(np.abs(diff_array(f, grid, 0, order=2) - exact))
    e4 = np.max(np.abs(diff_array(f, grid, 0, order=4) - exact))
    assert e4 < e2 / 100
    with pytest.raises(ValueError):
        diff_array(f, Grid(2, "box", 64, extent=2.0), 0, order=4)


def test_discrete_integration_by_parts_torus():
    grid = Grid(2, "torus", 24)
    f = band_limited_scalar(grid, substream(11, "ibp-f"), modes=4, amplitude=1.0)
    w = band_limited_vector(grid, substream(11, "ibp-w"), modes=4, amplitude=1.0)
    lhs = integrate(ScalarField(grid, f.values * divergence_array(w.components, grid)))
    rhs = integrate(
        ScalarField(grid, np.sum(gradient_array(f.values, grid) * w.components, axis=0))
    )
    assert abs(lhs + rhs) <= 1e-10


# ---------------------------------------------------------------------------
# quadrature


def test_unit_integral_on_torus(torus16):
    one = ScalarField.constant(torus16, 1.0)
    weight = DensityField.constant(torus16, 1.0)
    assert integrate(one, weight) == pytest.approx(1.0, abs=1e-14)


def test_trig_square_integral_exact(torus64):
    x = torus64.coordinates()
    f = ScalarField(torus64, np.sin(2 * np.pi * x[0]) ** 2)
    assert integrate(f) == pytest.approx(0.5, abs=1e-12)


def test_constant_weight_scaling(torus16):
    one = ScalarField.constant(torus16, 1.0)
    weight = DensityField.constant(torus16, 4.0)
    assert integrate(one, weight) == pytest.approx(4.0, abs=1e-13)


def test_box_trapezoid_weights_sum_to_area():
    grid = Grid(2, "box", 33, extent=2.0)
    assert float(np.sum(quadrature_weights(grid))) == pytest.approx(4.0, abs=1e-12)


def test_box_quadrature_second_order():
    errs = []
    for n in (33, 65):
        grid = Grid(2, "box", n, extent=2.0)
        x = grid.coordinates()
        f = ScalarField(grid, np.exp(x[0]) * np.exp(x[1]))
        exact = (np.e - np.exp(-1.0)) ** 2
        errs.append(abs(integrate(f) - exact))
    assert 3.2 <= errs[0] / errs[1] <= 4.8


def test_grid_mismatch_rejected(torus16):
    other = Grid(2, "torus", 32)
    with pytest.raises(Exception):
        integrate(ScalarField.constant(torus16, 1.0), DensityField.constant(other, 1.0))


# ---------------------------------------------------------------------------
# interpolation


def test_sampling_reproduces_nodes(torus16):
    rng = substream(3, "nodes")
    f = band_limited_scalar(torus16, rng, modes=3, amplitude=1.0)
    got = sample(f, torus16.coordinates())
    assert np.array_equal(got, f.values)


def test_bilinear_exact_on_affine_box():
    grid = Grid(2, "box", 16, extent=2.0)
    x = grid.coordinates()
    f = ScalarField(grid, 2.0 * x[0] - 0.7 * x[1] + 0.25)
    mids = (x[:, :-1, :-1] + grid.spacing / 2.0).reshape(2, -1)
    got = sample(f, mids)
    exact = 2.0 * mids[0] - 0.7 * mids[1] + 0.25
    assert np.max(np.abs(got - exact)) <= 1e-13


def test_midpoint_sampling_second_order():
    errs = []
    for n in (32, 64):
        grid = Grid(2, "torus", n)
        x = grid.coordinates()
        f = ScalarField(grid, np.sin(2 * np.pi * x[0]))
        mids = (x + grid.spacing / 2.0).reshape(2, -1)
        got = sample(f, mids)
        errs.append(float(np.max(np.abs(got - np.sin(2 * np.pi * mids[0])))))
    assert 3.2 <= errs[0] / errs[1] <= 4.8


def test_torus_sampling_wraps():
    grid = Grid(2, "torus", 16)
    f = band_limited_scalar(grid, substream(5, "wrap"), modes=2, amplitude=1.0)
    pos = grid.coordinates()
    shifted = pos + 3.0  # three full periods
    assert np.allclose(sample(f, shifted), f.values, atol=1e-12)


def test_box_sampling_outside_domain_fails():
    grid = Grid(2, "box", 16, extent=2.0)
    f = ScalarField.constant(grid, 1.0)
    with pytest.raises(OutOfDomainError):
        sample(f, np.array([[1.5], [0.0]]))


def test_vector_field_sampling_shape(torus16):
    v = band_limited_vector(torus16, substream(8, "vs"), modes=2, amplitude=1.0)
    pts = np.zeros((2, 5))
    out = sample_array(v.components, torus16, pts)
    assert out.shape == (2, 5)


# ---------------------------------------------------------------------------
# serialization


@pytest.mark.parametrize("kind", ["scalar", "density", "vector", "sym_tensor"])
def test_json_round_trip_bitwise(kind, torus16):
    rng = substream(17, f"ser-{kind}")
    if kind == "scalar":
        f = band_limited_scalar(torus16, rng, modes=3, amplitude=0.7)
    elif kind == "density":
        f = DensityField(torus16, np.exp(band_limited_scalar(torus16, rng, 3, 0.5).values))
    elif kind == "vector":
        f = band_limited_vector(torus16, rng, modes=3, amplitude=0.7)
    else:
        comps = np.stack(
            [band_limited_scalar(torus16, rng, 3, 0.7).values for _ in range(3)]
        )
        f = SymTensorField(torus16, comps)
    text = field_to_json(f)
    back, extra = field_from_json(text)
    orig = f.values if hasattr(f, "values") else f.components
    new = back.values if hasattr(back, "values") else back.components
    assert np.array_equal(orig, new)
    assert back.grid == f.grid
    assert extra == {}


def test_json_format_shape(torus16):
    f = ScalarField.constant(torus16, np.pi)
    obj = json.loads(field_to_json(f))
    assert obj["kind"] == "scalar"
    assert obj["grid"]["topology"] == "torus"
    assert len(obj["data"]) == torus16.node_count
    # 17 significant digits round-trip the double exactly
    assert obj["data"][0] == np.pi


def test_json_displacement_collar():
    from metricflow import DisplacementMap

    grid = Grid(2, "box", 16, extent=2.0)
    phi = DisplacementMap.identity(grid, collar_width=3)
    text = field_to_json(phi.displacement, kind="displacement", extra={"collar_width": 3})
    back, extra = field_from_json(text)
    assert isinstance(back, DisplacementMap)
    assert back.collar_width == 3
