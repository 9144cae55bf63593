import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maneuver_zones.errors import ConfigError, OutOfDomainError, ShapeError
from maneuver_zones.grid import (
    Axis,
    GridSpec,
    TimeIndexedField,
    ValueField,
    cell_coordinates,
    interpolate,
    nearest_node,
    pointwise_max,
    pointwise_min,
    volume_below,
)


@pytest.fixture
def grid2():
    return GridSpec.build(("x", -1.0, 1.0, 5), ("psi", -math.pi, math.pi, 8, True))


def test_axis_spacing_and_nodes():
    ax = Axis("x", 0.0, 1.0, 5)
    assert ax.spacing == 0.25
    np.testing.assert_allclose(ax.nodes, [0, 0.25, 0.5, 0.75, 1.0])
    per = Axis("psi", -math.pi, math.pi, 8, True)
    assert per.spacing == pytest.approx(math.pi / 4)
    assert per.nodes[-1] < math.pi


@pytest.mark.parametrize("args", [("x", 1.0, 0.0, 5), ("x", 0.0, 1.0, 2), ("psi", 0.0, 3.0, 8, True)])
def test_axis_rejects_bad_specs(args):
    with pytest.raises(ConfigError):
        Axis(*args)


def test_duplicate_names_rejected():
    with pytest.raises(ConfigError):
        GridSpec.build(("x", 0, 1, 3), ("x", 0, 1, 3))


def test_spec_roundtrip(grid2):
    assert GridSpec.from_dict(grid2.to_dict()) == grid2
    assert grid2.shape == (5, 8)
    assert grid2.size == 40
    assert grid2.sub(["psi"]).names == ("psi",)
    with pytest.raises(ShapeError):
        grid2.index("nope")


def test_cell_coordinates(grid2):
    np.testing.assert_allclose(cell_coordinates(grid2, (0, 0)), [-1.0, -math.pi])
    np.testing.assert_allclose(cell_coordinates(grid2, (4, 2)), [1.0, -math.pi / 2])
    with pytest.raises(IndexError):
        cell_coordinates(grid2, (5, 0))
    with pytest.raises(ShapeError):
        cell_coordinates(grid2, (0,))


def test_nearest_node_wraps_periodic(grid2):
    assert nearest_node(grid2, (0.1, math.pi - 0.01)) == (2, 0)
    assert nearest_node(grid2, (5.0, 0.0)) == (4, 4)


def test_states_row_major(grid2):
    s = grid2.states()
    assert s.shape == (40, 2)
    np.testing.assert_allclose(s[1], [-1.0, -math.pi + math.pi / 4])


def test_value_field_read_only_and_finite(grid2):
    f = ValueField.constant(grid2, 2.0)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
    with pytest.raises(ShapeError):
        ValueField(grid2, np.zeros(3))
    with pytest.raises(ConfigError):
        ValueField(grid2, np.full(40, np.nan))


def test_pointwise_ops(grid2):
    a = ValueField.from_function(grid2, lambda x, p: x + 0 * p)
    b = ValueField.constant(grid2, 0.0)
    np.testing.assert_array_equal(pointwise_min(a, b).values, np.minimum(a.values, 0))
    np.testing.assert_array_equal(pointwise_max(a, b).values, np.maximum(a.values, 0))
    other = ValueField.constant(GridSpec.build(("x", 0, 1, 3)), 0.0)
    with pytest.raises(ShapeError):
        pointwise_min(a, other)


def test_interpolate_exact_on_nodes_and_affine(grid2):
    f = ValueField.from_function(grid2, lambda x, p: 3 * x - 1 + 0 * p)
    assert interpolate(f, (0.5, 0.3)) == pytest.approx(0.5)
    batch = interpolate(f, np.array([[-1.0, 0.0], [0.7, 1.0]]))
    np.testing.assert_allclose(batch, [-4.0, 1.1])


def test_interpolate_periodic_wraps(grid2):
    f = ValueField.from_function(grid2, lambda x, p: np.cos(p) + 0 * x)
    a = interpolate(f, (0.0, math.pi - 0.1))
    b = interpolate(f, (0.0, -math.pi - 0.1))
    assert a == pytest.approx(b)


def test_interpolate_out_of_domain(grid2):
    f = ValueField.constant(grid2, 0.0)
    with pytest.raises(OutOfDomainError) as exc:
        interpolate(f, (1.5, 0.0))
    assert "x" in str(exc.value)
    with pytest.raises(ShapeError):
        interpolate(f, (0.0,))


def test_volume_below():
    g = GridSpec.build(("x", -1, 1, 5), ("y", -1, 1, 5))
    f = ValueField.from_function(g, lambda x, y: np.abs(x) + np.abs(y) - 0.6)
    # nodes with |x|+|y| < 0.6: only the centre and four neighbours at 0.5
    assert volume_below(f) == pytest.approx(5 * 0.25)
    assert volume_below(ValueField.constant(g, 1.0)) == 0.0


def test_time_indexed_field(grid2):
    frames = [np.full(grid2.size, float(k)) for k in range(3)]
    tf = TimeIndexedField(grid2, [1.0, 0.5, 0.0], frames)
    assert len(tf) == 3
    assert tf.at(0.5).values[0, 0] == 1.0
    with pytest.raises(ConfigError):
        tf.at(0.25)
    with pytest.raises(ConfigError):
        TimeIndexedField(grid2, [0.0, 1.0, 0.5], frames)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_interpolation_reproduces_affine_functions(x, y, a, b, c):
    g = GridSpec.build(("x", -1, 1, 7), ("y", -1, 1, 4))
    f = ValueField.from_function(g, lambda xx, yy: a * xx + b * yy + c)
    assert interpolate(f, (x, y)) == pytest.approx(a * x + b * y + c, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.integers(0, 2**31 - 1))
def test_interpolation_stays_within_corner_bounds(pt, seed):
    g = GridSpec.build(("x", -1, 1, 6), ("y", -1, 1, 5))
    vals = np.random.default_rng(seed).normal(size=g.size)
    f = ValueField(g, vals)
    v = interpolate(f, pt)
    assert vals.min() - 1e-12 <= v <= vals.max() + 1e-12
