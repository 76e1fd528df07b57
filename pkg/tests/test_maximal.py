import itertools
import math

import numpy as np
import pytest

from eulerlab.grids import ScalarGrid
from eulerlab.maximal import (
    LemmaViolation,
    MaximalError,
    check_lp_bound,
    check_pointwise_lipschitz,
    exact_maximal_fractions,
    gradient_magnitude,
    lemma_suite,
    local_maximal_function,
    lp_ratio,
    pairs_within,
)


def brute_maximal(f: ScalarGrid, lam: float) -> np.ndarray:
    """Enumerate every node, every radius up to lam and every lattice point."""
    d, dx = f.dimension, f.spacing
    reach = int(math.floor(lam / dx + 1e-9))
    offs = [np.array(o) for o in itertools.product(range(-reach, reach + 1), repeat=d)]
    offs = [o for o in offs if np.linalg.norm(o * dx) <= lam + 1e-12]
    radii = sorted({float(np.linalg.norm(o * dx)) for o in offs})
    a = np.abs(f.values)
    out = np.zeros(f.shape)
    for node in itertools.product(*[range(n) for n in f.shape]):
        node = np.array(node)
        best = 0.0
        for r in radii:
            inside = [o for o in offs if np.linalg.norm(o * dx) <= r + 1e-12]
            total = 0.0
            for o in inside:
                j = node + o
                if np.all(j >= 0) and np.all(j < f.shape):
                    total += a[tuple(j)]
            best = max(best, total / len(inside))
        out[tuple(node)] = best
    return out


def test_matches_brute_force_1d():
    rng = np.random.default_rng(5)
    f = ScalarGrid([-2.0], 0.25, rng.normal(size=17))
    M = local_maximal_function(f, 1.0)
    assert np.allclose(M.values, brute_maximal(f, 1.0), rtol=1e-14, atol=0)


def test_matches_brute_force_2d():
    rng = np.random.default_rng(6)
    f = ScalarGrid([0.0, 0.0], 0.5, rng.normal(size=(9, 8)))
    M = local_maximal_function(f, 1.6)
    assert np.allclose(M.values, brute_maximal(f, 1.6), rtol=1e-14, atol=0)


def test_indicator_example():
    dx = 0.25
    x = np.arange(-4, 4 + dx / 2, dx)
    f = ScalarGrid([-4.0], dx, (np.abs(x) <= 1).astype(float))
    M = local_maximal_function(f, 2.0)
    k = int(np.flatnonzero(np.isclose(x, 2.0))[0])
    # r = 2 covers [0, 4]: 17 nodes, 5 of them in [0, 1]
    assert M.values[k] == 5 / 17
    assert M.values[k] == brute_maximal(f, 2.0)[k]


def test_constant_is_exact_in_interior():
    f = ScalarGrid([-3.0, -3.0], 0.1, np.full((61, 61), -2.5))
    M = local_maximal_function(f, 0.5)
    assert np.all(M.values[10:-10, 10:-10] == 2.5)


def test_dominates_absolute_value():
    rng = np.random.default_rng(7)
    f = ScalarGrid([0.0, 0.0], 0.1, rng.normal(size=(20, 20)))
    for radii_count in (None, 3):
        M = local_maximal_function(f, 0.35, radii_count)
        assert np.all(M.values >= np.abs(f.values))


def test_equispaced_radii_subset_of_exact_sup():
    rng = np.random.default_rng(8)
    f = ScalarGrid([0.0], 0.1, rng.normal(size=50))
    assert np.all(local_maximal_function(f, 1.0, 16).values <= local_maximal_function(f, 1.0).values)


def test_lam_below_spacing_rejected():
    with pytest.raises(MaximalError):
        local_maximal_function(ScalarGrid([0.0], 1.0, np.ones(4)), 0.5)


def test_lp_ratio_of_constant_is_discrete_volume_ratio():
    dx = 1 / 16
    x = np.arange(-4, 4 + dx / 2, dx)
    f = ScalarGrid([-4.0], dx, np.ones_like(x))
    inner = np.sum(np.abs(x) <= 1.0)
    outer = np.sum(np.abs(x) <= 2.0)
    ratio = check_lp_bound(f, 1.0, 1.0, 2.0)
    assert ratio == pytest.approx(inner / outer, rel=1e-14)
    assert ratio < 1


def test_lp_ratio_single_spike_matches_enumeration():
    dx = 1 / 8
    x = np.arange(-3, 3 + dx / 2, dx)
    vals = np.zeros_like(x)
    vals[np.argmin(np.abs(x))] = 1 / dx
    f = ScalarGrid([-3.0], dx, vals)
    lam, rho, p = 1.0, 1.0, 2.0
    M = brute_maximal(f, lam)
    num = np.sum(M[np.abs(x) <= rho] ** p) * dx
    den = (1 / dx) ** p * dx
    ratio = check_lp_bound(f, lam, rho, p)
    assert math.isfinite(ratio)
    assert ratio == pytest.approx(num / den, rel=1e-13)


def test_lp_ratio_scale_invariant():
    rng = np.random.default_rng(9)
    f = ScalarGrid([-2.0, -2.0], 0.1, rng.normal(size=(41, 41)))
    r1 = check_lp_bound(f, 0.5, 1.0, 1.5)
    r2 = check_lp_bound(f.with_values(2 * f.values), 0.5, 1.0, 1.5)
    assert r2 == pytest.approx(r1, rel=1e-13)


def test_lp_bound_requires_p_above_one_and_room():
    f = ScalarGrid([-2.0], 0.1, np.ones(41))
    with pytest.raises(MaximalError, match="p > 1"):
        check_lp_bound(f, 0.5, 1.0, 1.0)
    with pytest.raises(MaximalError):
        check_lp_bound(f, 1.5, 1.0, 2.0)
    assert lp_ratio(f, 0.5, 1.0, 1.0) > 0


def test_lp_ratio_ignores_mass_beyond_reach():
    vals = np.zeros(41)
    vals[-1] = 1.0
    f = ScalarGrid([-2.0], 0.1, vals)
    # the only mass sits outside B_(rho+lam), where no ball centred in B_rho reaches
    assert lp_ratio(f, 0.5, 1.0, 2.0) == 0.0
    assert lp_ratio(ScalarGrid([-2.0], 0.1, np.zeros(41)), 0.5, 1.0, 2.0) == 0.0


def test_pairs_within_complete_and_unique():
    g = ScalarGrid([0.0, 0.0], 0.5, np.zeros((6, 5)))
    pairs = pairs_within(g, 1.0)
    nodes = list(itertools.product(range(6), range(5)))
    expected = {
        (a, b)
        for a, b in itertools.combinations(nodes, 2)
        if math.dist(a, b) * 0.5 <= 1.0 + 1e-12
    }
    got = {(tuple(p[0]), tuple(p[1])) for p in pairs.tolist()}
    assert got == expected
    assert len(pairs) == len(expected)


def _hat_1d(n=512, extent=4.0):
    dx = 2 * extent / (n - 1)
    x = -extent + dx * np.arange(n)
    return x, ScalarGrid([-extent], dx, np.maximum(1 - np.abs(x), 0.0))


def test_hat_constant_matches_exhaustive_pairs():
    x, u = _hat_1d(256)
    lam = 1.0
    du = gradient_magnitude(u)
    pairs = pairs_within(u, lam)
    got = check_pointwise_lipschitz(u, du, lam, pairs)
    M = brute_maximal(du, lam)
    best = 0.0
    for i in range(x.size):
        for j in range(i + 1, x.size):
            dist = (j - i) * u.spacing
            if dist > lam + 1e-12:
                break
            den = dist * (M[i] + M[j])
            if den > 0:
                best = max(best, abs(u.values[i] - u.values[j]) / den)
    assert got == pytest.approx(best, rel=1e-13)
    assert 0 < got < 1


def test_linear_u_gives_one_half():
    g = ScalarGrid([-1.0, -1.0], 0.1, np.zeros((21, 21)))
    xy = g.node_coordinates()
    # a = (2.4, -1.8) is parallel to the lattice offset (4, -3), which lies within lam
    u = g.with_values(2.4 * xy[..., 0] - 1.8 * xy[..., 1])
    du = g.with_values(np.full(g.shape, 3.0))
    c = check_pointwise_lipschitz(u, du, 0.5, pairs_within(g, 0.5))
    assert c == pytest.approx(0.5, rel=1e-13)


def test_constant_u_gives_zero():
    g = ScalarGrid([0.0], 0.1, np.full(30, 7.0))
    du = g.with_values(np.ones(30))
    assert check_pointwise_lipschitz(g, du, 0.5, pairs_within(g, 0.5)) == 0.0


def test_zero_gradient_with_jump_is_reported():
    g = ScalarGrid([0.0], 1.0, np.array([0.0, 0.0, 1.0, 1.0]))
    with pytest.raises(LemmaViolation) as err:
        check_pointwise_lipschitz(g, g.with_values(np.zeros(4)), 1.0, pairs_within(g, 1.0))
    assert err.value.pair == [[1], [2]]


@pytest.mark.parametrize("dimension,nodes", [(1, 257), (2, 129)])
def test_lemma_suite_passes(dimension, nodes):
    out = lemma_suite(dimension, nodes, 4.0, 1.0, 1.0, spike_levels=6)
    assert out["passed"], out


def test_exact_fractions_agree_with_float_operator():
    rng = np.random.default_rng(10)
    vals = rng.integers(-50, 50, size=(17, 15))
    s, n = exact_maximal_fractions(vals, 1.3, 0.25)
    M = local_maximal_function(ScalarGrid([0.0, 0.0], 0.25, vals.astype(float)), 1.3).values
    assert np.all(M == s / n)
    with pytest.raises(MaximalError):
        exact_maximal_fractions(vals.astype(float), 1.3, 0.25)


def test_pairs_subsample_is_seeded_subset():
    g = ScalarGrid([0.0, 0.0], 0.1, np.zeros((30, 30)))
    full = {tuple(map(tuple, p)) for p in pairs_within(g, 0.35).tolist()}
    sub = pairs_within(g, 0.35, max_pairs=500, seed=3)
    assert len(sub) == 500
    assert {tuple(map(tuple, p)) for p in sub.tolist()} <= full
    assert np.array_equal(sub, pairs_within(g, 0.35, max_pairs=500, seed=3))
