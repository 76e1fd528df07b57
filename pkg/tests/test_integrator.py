import math

import numpy as np
import pytest

from eulerlab.fields import FieldSpec, constant_field, grid_field, linear_field, power_field, rotation_field, zero_field
from eulerlab.grids import GridField
from eulerlab.integrator import (
    FlowError,
    InitialCloud,
    TimeGrid,
    TrajectoryTable,
    compressibility_estimate,
    euler_flow,
    euler_step,
    make_cloud,
    push_forward_histogram,
    reference_flow,
)
from eulerlab.sampling import ball_volume

from helpers import contraction, exact_table, power_flow, rotation


def test_euler_step_examples():
    x = np.array([[0.3, -1.2]])
    assert np.array_equal(euler_step(zero_field(2), x, 0.7), x)
    assert np.array_equal(euler_step(constant_field([1.0, 0.0]), [[0.0, 0.0]], 0.1), [[0.1, 0.0]])
    assert np.array_equal(euler_step(linear_field(1), [[1.0]], 0.5), [[0.5]])


def test_time_grid_tiling():
    assert TimeGrid.from_step(0.0, 1.0, 0.1).N == 10
    assert TimeGrid.from_step(0.0, 1.0, 2.0**-10).N == 1024
    with pytest.raises(ValueError):
        TimeGrid.from_step(0.0, 1.0, 0.3)


def test_cloud_in_ball_with_equal_weights():
    c = make_cloud(2, 1.5, 1000, seed=3)
    assert c.size == 1000
    assert np.all(np.linalg.norm(c.points, axis=1) <= 1.5)
    assert math.fsum(c.weights) == pytest.approx(ball_volume(2, 1.5), rel=1e-14)
    assert np.array_equal(make_cloud(2, 1.5, 1000, seed=3).points, c.points)
    assert not np.array_equal(make_cloud(2, 1.5, 1000, seed=4).points, c.points)


def test_composition_is_bit_exact():
    f = rotation_field(0.5)
    cloud = make_cloud(2, 1.0, 300)
    grid = TimeGrid.from_step(0.0, 1.0, 0.05)
    table = euler_flow(f, cloud, grid)
    x = cloud.points.copy()
    for n in range(1, grid.N + 1):
        x = euler_step(f, x, grid.h)
        assert np.array_equal(table.at_step(n), x)


def test_zero_field_identity():
    cloud = make_cloud(2, 1.0, 200)
    grid = TimeGrid.from_step(0.0, 1.0, 0.1)
    for table in (euler_flow(zero_field(2), cloud, grid), reference_flow(zero_field(2), cloud, grid, 7)):
        assert all(np.array_equal(table.at_step(n), cloud.points) for n in table.steps)


def test_constant_field_exact_for_dyadic_step():
    c = np.array([1.0, -2.0])
    cloud = make_cloud(2, 1.0, 500)
    grid = TimeGrid.from_step(0.0, 1.0, 2.0**-4)
    table = euler_flow(constant_field(c), cloud, grid)
    for n in table.steps:
        assert np.array_equal(table.at_step(n), cloud.points + n * grid.h * c)


def test_linear_field_geometric_closed_form():
    cloud = make_cloud(1, 1.0, 1000)
    grid = TimeGrid.from_step(0.0, 1.0, 0.1)
    table = euler_flow(linear_field(1), cloud, grid)
    for n in table.steps:
        expected = (1 - grid.h) ** n * cloud.points
        assert np.allclose(table.at_step(n), expected, rtol=1e-12, atol=0)


def test_reference_refinement_one_equals_euler():
    f = power_field(0.5)
    cloud = make_cloud(1, 1.0, 400)
    grid = TimeGrid.from_step(0.0, 1.0, 2.0**-5)
    assert np.array_equal(euler_flow(f, cloud, grid).positions, reference_flow(f, cloud, grid, 1).positions)


def test_reference_contraction_near_exponential():
    cloud = make_cloud(1, 1.0, 1000)
    grid = TimeGrid.from_step(0.0, 1.0, 0.1)
    table = reference_flow(linear_field(1), cloud, grid, 1024)
    assert np.all(np.abs(table.final - math.exp(-1) * cloud.points) <= 1e-3)


def test_reference_power_field_near_closed_form():
    cloud = make_cloud(1, 1.0, 2000)
    grid = TimeGrid.from_step(0.0, 1.0, 2.0**-6)
    table = reference_flow(power_field(0.5), cloud, grid, 256)
    assert np.abs(table.final - power_flow(1.0, cloud.points)).max() < 1e-4


def test_workers_do_not_change_results():
    f = rotation_field(0.5)
    cloud = make_cloud(2, 1.0, 1001)
    grid = TimeGrid.from_step(0.0, 1.0, 2.0**-5)
    one = reference_flow(f, cloud, grid, 4, workers=1)
    many = reference_flow(f, cloud, grid, 4, workers=3)
    assert np.array_equal(one.positions, many.positions)


def test_snapshots_and_memory_cap():
    cloud = make_cloud(1, 1.0, 100)
    grid = TimeGrid.from_step(0.0, 1.0, 0.01)
    assert euler_flow(zero_field(1), cloud, grid).steps == tuple(range(101))
    assert euler_flow(zero_field(1), cloud, grid, memory_cap=1000).steps == (0, 100)
    t = euler_flow(zero_field(1), cloud, grid, snapshots=[50, 25])
    assert t.steps == (0, 25, 50, 100)
    with pytest.raises(KeyError):
        t.at_step(10)


def test_confinement_violation_is_reported():
    lying = FieldSpec(1, lambda x: np.full_like(x, 5.0), name="lying", sup_norm_bound=1.0)
    cloud = make_cloud(1, 1.0, 50)
    with pytest.raises(FlowError) as err:
        euler_flow(lying, cloud, TimeGrid.from_step(0.0, 1.0, 0.25))
    assert err.value.args[1] == 1


def test_blow_up_names_step_and_point():
    def rule(x):
        with np.errstate(over="ignore", invalid="ignore"):
            return x * x * 1e200

    f = FieldSpec(1, rule, name="explosive")
    cloud = make_cloud(1, 1.0, 10)
    where = []
    for workers in (1, 2, 3):
        with pytest.raises(FlowError) as err:
            euler_flow(f, cloud, TimeGrid.from_step(0.0, 1.0, 0.25), workers=workers)
        where.append(err.value.args[1:])
    # step 1 stays finite (|x| < 1), step 2 overflows; the report does not depend on the split
    assert where[0][0] == 2
    assert where[0] == where[1] == where[2]


def test_grid_field_outside_box_is_zero():
    g = GridField([-0.5], 0.25, np.full((5, 1), 1.0))
    cloud = InitialCloud(1.0, np.array([[0.25], [0.9]]), np.ones(2))
    table = euler_flow(grid_field(g), cloud, TimeGrid.from_step(0.0, 1.0, 0.25))
    # the first point rides the field until it leaves the box, then stops
    assert table.final[1, 0] == 0.9
    assert table.final[0, 0] == 0.75


def test_table_serialisation_roundtrip(tmp_path):
    cloud = make_cloud(2, 1.0, 20)
    grid = TimeGrid.from_step(0.0, 1.0, 0.25)
    table = euler_flow(rotation_field(1.0), cloud, grid)
    back = TrajectoryTable.from_binary(table.to_binary(tmp_path / "t.bin"))
    assert np.array_equal(back.positions, table.positions)
    assert back.steps == table.steps
    lines = table.to_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,t,point_index,x_1,x_2"
    assert len(lines) == 1 + 5 * 20


def test_histogram_conserves_mass():
    cloud = make_cloud(2, 1.0, 3000)
    grid = TimeGrid.from_step(0.0, 1.0, 0.125)
    table = euler_flow(linear_field(2, 3.0), cloud, grid)
    _, counts, masses = push_forward_histogram(table, grid.N, 0.1)
    assert int(counts.sum()) == cloud.size
    assert math.fsum(masses) == pytest.approx(math.fsum(cloud.weights), rel=1e-13)


def test_compressibility_zero_field_near_one():
    cloud = make_cloud(1, 1.0, 8192)
    table = euler_flow(zero_field(1), cloud, TimeGrid.from_step(0.0, 1.0, 0.5))
    assert abs(compressibility_estimate(table, 0, 0.1) - 1.0) <= 0.1


def test_compressibility_exact_rotation_near_one():
    cloud = make_cloud(2, 1.0, 16384)
    grid = TimeGrid.from_step(0.0, 1.0, 0.25)
    exact = exact_table(cloud, grid, rotation)
    assert abs(compressibility_estimate(exact, grid.N, 0.1) - 1.0) <= 0.15


def test_compressibility_contraction_near_e():
    cloud = make_cloud(1, 1.0, 16384)
    grid = TimeGrid.from_step(0.0, 1.0, 0.25)
    exact = exact_table(cloud, grid, contraction)
    assert compressibility_estimate(exact, grid.N, 0.1) == pytest.approx(math.e, rel=0.1)
