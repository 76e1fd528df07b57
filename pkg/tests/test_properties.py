import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eulerlab.config import ExperimentConfig
from eulerlab.convergence import BoundConstants, recursion_bound, theoretical_bound
from eulerlab.fields import affine_field, estimate_osl_constant
from eulerlab.grids import ScalarGrid
from eulerlab.integrator import TimeGrid, euler_flow, make_cloud
from eulerlab.maximal import local_maximal_function

EPS = np.finfo(float).eps
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
grids_1d = arrays(float, st.integers(5, 40), elements=finite)
grids_2d = arrays(float, st.tuples(st.integers(3, 12), st.integers(3, 12)), elements=finite)


def _grid(values, dx=0.25):
    return ScalarGrid(np.zeros(values.ndim), dx, values)


@settings(max_examples=60, deadline=None)
@given(st.one_of(grids_1d, grids_2d), st.integers(1, 4), st.integers(0, 3))
def test_maximal_monotone_in_lambda(values, k1, extra):
    f = _grid(values)
    small = local_maximal_function(f, 0.25 * k1).values
    large = local_maximal_function(f, 0.25 * (k1 + extra)).values
    assert np.all(small <= large)
    assert np.all(small >= np.abs(values))


@settings(max_examples=60, deadline=None)
@given(st.one_of(grids_1d, grids_2d), st.floats(-8, 8).filter(lambda c: c != 0), st.integers(1, 4))
def test_maximal_homogeneous(values, c, k):
    f = _grid(values)
    a = local_maximal_function(f.with_values(c * values), 0.25 * k).values
    b = abs(c) * local_maximal_function(f, 0.25 * k).values
    assert np.allclose(a, b, rtol=1e-14, atol=0)


@settings(max_examples=60, deadline=None)
@given(grids_2d, st.data(), st.integers(1, 4))
def test_maximal_sublinear(values, data, k):
    other = data.draw(arrays(float, values.shape, elements=finite))
    f = _grid(values)
    lam = 0.25 * k
    lhs = local_maximal_function(f.with_values(values + other), lam).values
    rhs = local_maximal_function(f, lam).values + local_maximal_function(f.with_values(other), lam).values
    assert np.all(lhs <= rhs * (1 + 4 * EPS) + 4 * EPS * np.abs(values + other).max())


@settings(max_examples=60, deadline=None)
@given(grids_2d)
def test_interpolation_exact_at_nodes(values):
    f = ScalarGrid([-0.3, 1.7], 0.1, values)
    assert np.array_equal(f.interpolate(f.node_coordinates().reshape(-1, 2)), values.ravel())


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0, 3),
    st.floats(0, 5),
    st.floats(1e-4, 0.2),
    st.integers(0, 200),
    st.floats(0, 1),
)
def test_recursion_closed_form_equals_iteration(kappa, K, h, n, E0):
    c = BoundConstants.from_chain(kappa, 1.0, 1.0, 1.0, 1.0, 1, 1.0, kappa_min=0.0, K=K)
    E = E0
    ab = c.alpha(h) * c.beta(h)
    for _ in range(n):
        E = ab * E + c.C * h * h
    assert math.isclose(recursion_bound(c, h, E0, n), E, rel_tol=1e-11, abs_tol=1e-300)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 2), st.floats(0, 3), st.floats(1e-6, 0.5), st.floats(0, 1))
def test_theoretical_bound_increasing_in_h(kappa, K, h, E0):
    c = BoundConstants.from_chain(kappa, 1.0, 1.0, 1.0, 1.0, 1, 1.0, K=K)
    assert theoretical_bound(c, h * 1.5, E0) > theoretical_bound(c, h, E0)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (2, 2), elements=st.floats(-3, 3)), st.integers(1, 64), st.integers(0, 64))
def test_osl_estimate_nested_and_below_eigenvalue(A, n, extra):
    f = affine_field(A)
    box = ([-1.0, -1.0], [1.0, 1.0])
    a = estimate_osl_constant(f, box, n)
    b = estimate_osl_constant(f, box, n + extra)
    assert a <= b
    top = f.osl_constant
    assert b <= top + 1e-12 * max(1.0, abs(top))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 200), st.sampled_from([2.0**-2, 2.0**-3, 0.1]))
def test_flow_independent_of_workers(workers, size, h):
    f = affine_field([[0.0, -1.0], [1.0, -0.5]])
    cloud = make_cloud(2, 1.0, size)
    grid = TimeGrid.from_step(0.0, 1.0, h)
    assert np.array_equal(euler_flow(f, cloud, grid).positions, euler_flow(f, cloud, grid, workers=workers).positions)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=6),
    st.floats(-1e6, 1e6),
    st.integers(0, 2**32),
    st.booleans(),
    st.one_of(st.none(), st.floats(1e-3, 10)),
)
def test_config_roundtrip(hs, p, seed, svg, lam):
    cfg = ExperimentConfig()
    cfg["study"]["h_sweep"] = hs
    cfg["study"]["p"] = p
    cfg["study"]["seed"] = seed
    cfg["output"]["svg"] = svg
    cfg["constants"]["lam"] = lam
    assert ExperimentConfig.from_text(cfg.to_text()).values == cfg.values
