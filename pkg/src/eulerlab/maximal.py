"""Local maximal functions on regular grids and numerical checks of the
two inequalities built on them: the L^p bound for the local maximal
operator (p > 1) and the pointwise difference-quotient estimate for
Sobolev/BV functions.

Ball averages are purely discrete: the average of ``|f|`` over ``B_r(x)``
is the sum of the node values whose centres lie in the closed ball, divided
by the number of lattice nodes in that ball (nodes outside the grid count
as zeros).  With that convention the maximal function of a constant is
exactly that constant away from the boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grids import GridField, ScalarGrid
from .sampling import DEFAULT_SEED

__all__ = [
    "MaximalGrid",
    "MaximalError",
    "LemmaViolation",
    "local_maximal_function",
    "lp_ratio",
    "check_lp_bound",
    "check_pointwise_lipschitz",
    "pairs_within",
    "gradient_magnitude",
    "lemma_suite",
]

_RTOL = 1e-12


class MaximalError(ValueError):
    """Invalid input to a maximal-function computation."""


class LemmaViolation(ArithmeticError):
    """A discrete configuration breaks one of the inequalities outright."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


@dataclass(frozen=True, eq=False)
class MaximalGrid(ScalarGrid):
    """Node values of ``M_lam f`` on the geometry of the source grid."""

    lam: float = 0.0
    radii: tuple = ()


def _offsets(dimension: int, max_sq: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer offsets with squared norm <= max_sq, sorted by squared norm."""
    reach = math.isqrt(max_sq)
    rng = np.arange(-reach, reach + 1)
    grid = np.stack(np.meshgrid(*([rng] * dimension), indexing="ij"), axis=-1).reshape(-1, dimension)
    sq = np.sum(grid * grid, axis=1)
    keep = sq <= max_sq
    grid, sq = grid[keep], sq[keep]
    order = np.lexsort(tuple(grid[:, k] for k in reversed(range(dimension))) + (sq,))
    return grid[order], sq[order]


def _sq_threshold(radius: float, spacing: float) -> int:
    """Largest integer squared offset norm inside the closed ball of ``radius``."""
    return int(math.floor((radius / spacing) ** 2 * (1 + _RTOL)))


def _thresholds(dimension: int, lam: float, spacing: float, radii_count: int | None):
    """Squared-offset shells at which a ball average is taken, plus the radii used."""
    _, sq = _offsets(dimension, _sq_threshold(lam, spacing))
    if radii_count is None:
        return set(np.unique(sq).tolist()), None
    radii = tuple(lam * k / radii_count for k in range(1, radii_count + 1))
    return {0} | {_sq_threshold(r, spacing) for r in radii}, radii


def _ball_sums(a: np.ndarray, lam: float, spacing: float, thresholds):
    """Yield ``(sum of a over the ball, lattice node count)`` for every node,
    one pair per threshold shell, growing the balls one offset at a time.

    Nodes outside the grid count towards the ball size with value zero.
    """
    d = a.ndim
    max_sq = _sq_threshold(lam, spacing)
    offsets, sq = _offsets(d, max_sq)
    reach = math.isqrt(max_sq)
    padded = np.pad(a, reach)
    shape = a.shape
    acc = np.zeros(shape, dtype=a.dtype)
    n = len(sq)
    for j in range(n):
        o = offsets[j]
        acc += padded[tuple(slice(reach + o[k], reach + o[k] + shape[k]) for k in range(d))]
        if (j == n - 1 or sq[j + 1] != sq[j]) and int(sq[j]) in thresholds:
            yield acc, j + 1


def exact_maximal_fractions(values, lam: float, spacing: float, radii_count: int | None = None):
    """The local maximal function of integer data as exact fractions.

    Returns integer arrays ``(sums, counts)`` with ``M f = sums / counts``
    node-wise, found by comparing ``S/n`` candidates through
    cross-multiplication, so no rounding occurs anywhere.
    """
    a = np.abs(np.asarray(values))
    if a.dtype.kind not in "iu":
        raise MaximalError("exact maximal function needs integer data")
    a = a.astype(np.int64)
    n_max = len(_offsets(a.ndim, _sq_threshold(lam, spacing))[1])
    if int(a.sum()) * n_max * n_max >= 2**62:
        raise MaximalError("integer data too large for exact comparison in int64")
    thresholds, _ = _thresholds(a.ndim, lam, spacing, radii_count)
    best_s = np.zeros(a.shape, dtype=np.int64)
    best_n = np.ones(a.shape, dtype=np.int64)
    for acc, count in _ball_sums(a, lam, spacing, thresholds):
        better = acc * best_n > best_s * count
        best_s = np.where(better, acc, best_s)
        best_n = np.where(better, count, best_n)
    return best_s, best_n


def local_maximal_function(f: ScalarGrid, lam: float, radii_count: int | None = None) -> MaximalGrid:
    """``M_lam f(x) = sup_{0<r<=lam}`` of discrete ball averages of ``|f|``.

    With ``radii_count=None`` the supremum runs over every distinct discrete
    ball of radius at most ``lam`` (the average only changes when the radius
    crosses a lattice shell), so the result is exactly monotone in ``lam``.
    An integer ``radii_count`` restricts it to ``lam*k/radii_count``.  The
    ``r -> 0`` limit, the centre value ``|f(x)|``, is always included.
    """
    if not isinstance(f, ScalarGrid):
        raise MaximalError("f must be a ScalarGrid")
    lam = float(lam)
    if not lam >= f.spacing * (1 - _RTOL):
        raise MaximalError(f"lam={lam!r} is below the grid spacing {f.spacing!r}")
    if radii_count is not None and radii_count < 1:
        raise MaximalError("radii_count must be positive")

    thresholds, radii = _thresholds(f.dimension, lam, f.spacing, radii_count)
    best = np.zeros(f.shape)
    for acc, count in _ball_sums(np.abs(f.values), lam, f.spacing, thresholds):
        np.maximum(best, acc / count, out=best)
    return MaximalGrid(f.origin, f.spacing, best, lam=lam, radii=radii or ())


def lp_ratio(
    f: ScalarGrid,
    lam: float,
    rho: float,
    p: float,
    radii_count: int | None = None,
) -> float:
    """``sum_{B_rho} (M_lam f)^p / sum_{B_{rho+lam}} |f|^p`` on the grid nodes.

    Accepts ``p >= 1`` so the failing ``p = 1`` case can be measured too.
    """
    if p < 1:
        raise MaximalError("p must be at least 1")
    M = local_maximal_function(f, lam, radii_count)
    r = f.node_norms()
    inner = r <= rho * (1 + _RTOL)
    outer = r <= (rho + lam) * (1 + _RTOL)
    num = float(np.sum(M.values[inner] ** p)) * f.cell_volume
    den = float(np.sum(np.abs(f.values[outer]) ** p)) * f.cell_volume
    if den == 0.0:
        if num == 0.0:
            return 0.0
        raise LemmaViolation(
            f"maximal function has L^{p} mass {num!r} on B_rho while f vanishes on B_(rho+lam)"
        )
    return num / den


def check_lp_bound(f: ScalarGrid, lam: float, rho: float, p: float, radii_count: int | None = None) -> float:
    """Measured constant in the L^p bound of the local maximal operator."""
    if not p > 1:
        raise MaximalError(f"the L^p maximal bound needs p > 1 (it fails at p = 1), got p={p!r}")
    if not rho > 0:
        raise MaximalError("rho must be positive")
    if not f.contains_ball(rho + lam):
        raise MaximalError(f"grid box does not contain B_(rho+lam) with rho+lam={rho + lam!r}")
    return lp_ratio(f, lam, rho, p, radii_count)


def gradient_magnitude(u) -> ScalarGrid:
    """Finite-difference ``|Du|`` (Frobenius norm for vector grids)."""
    if isinstance(u, GridField):
        comps = [u.values[..., k] for k in range(u.values.shape[-1])]
        origin, spacing = u.origin, u.spacing
    else:
        comps = [u.values]
        origin, spacing = u.origin, u.spacing
    total = np.zeros(comps[0].shape)
    for c in comps:
        grads = np.gradient(c, spacing) if c.ndim > 1 else [np.gradient(c, spacing)]
        for gk in grads:
            total += gk * gk
    return ScalarGrid(origin, spacing, np.sqrt(total))


def pairs_within(grid: ScalarGrid, lam: float, mask=None, max_pairs: int | None = None, seed: int = DEFAULT_SEED) -> np.ndarray:
    """Node index pairs ``(i, j)``, ``i < j`` in C order, with ``|x_i - x_j| <= lam``.

    ``mask`` (boolean, grid shaped) restricts both ends.  If more than
    ``max_pairs`` pairs qualify, a seeded subset is returned in sorted order.
    Result shape: ``(n, 2, d)``.
    """
    d = grid.dimension
    shape = np.array(grid.shape)
    max_sq = _sq_threshold(lam, grid.spacing)
    offsets, _ = _offsets(d, max_sq)
    # lexicographically positive offsets: each unordered pair appears once
    lead = np.array([o[np.flatnonzero(o)[0]] if o.any() else 0 for o in offsets])
    offsets = offsets[lead > 0]
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), axis=-1).reshape(-1, d)
    if mask is not None:
        mask = np.asarray(mask, bool)
        idx = idx[mask.ravel()]

    def valid(o):
        j = idx + o
        ok = np.all((j >= 0) & (j < shape), axis=1)
        if mask is not None:
            ok[ok] = mask[tuple(j[ok].T)]
        return ok

    # count first so a subsample never materialises the full pair list
    counts = np.array([int(valid(o).sum()) for o in offsets], dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros((0, 2, d), dtype=np.int64)
    if max_pairs is not None and total > max_pairs:
        pick = np.sort(np.random.default_rng(seed).choice(total, size=max_pairs, replace=False))
    else:
        pick = None
    starts = np.concatenate([[0], np.cumsum(counts)])
    out = []
    for k, o in enumerate(offsets):
        if counts[k] == 0:
            continue
        first = idx[valid(o)]
        if pick is not None:
            lo, hi = np.searchsorted(pick, [starts[k], starts[k + 1]])
            first = first[pick[lo:hi] - starts[k]]
        if len(first):
            out.append(np.stack([first, first + o], axis=1))
    pairs = np.concatenate(out)
    flat = np.ravel_multi_index(tuple(pairs[:, 0].T), grid.shape) * int(np.prod(shape)) + np.ravel_multi_index(
        tuple(pairs[:, 1].T), grid.shape
    )
    return pairs[np.argsort(flat, kind="stable")]


def check_pointwise_lipschitz(u, du_magnitude: ScalarGrid, lam: float, pairs, radii_count: int | None = None) -> float:
    """Smallest constant ``c`` with
    ``|u(x) - u(y)| <= c |x - y| (M_lam Du(x) + M_lam Du(y))`` over ``pairs``.

    ``u`` may be scalar or vector valued (differences measured in the
    Euclidean norm).  Pairs whose denominator and numerator both vanish are
    skipped; a vanishing denominator with a nonzero numerator raises
    :class:`LemmaViolation` naming the pair.
    """
    if not u.same_geometry(du_magnitude):
        raise MaximalError("u and its gradient magnitude must share one grid")
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.size == 0:
        return 0.0
    if pairs.ndim != 3 or pairs.shape[1] != 2 or pairs.shape[2] != u.dimension:
        raise MaximalError(f"pairs must have shape (n, 2, {u.dimension}), got {pairs.shape}")
    shape = np.array(u.shape)
    if np.any(pairs < 0) or np.any(pairs >= shape):
        raise MaximalError("pair index outside the grid")
    M = local_maximal_function(du_magnitude, lam, radii_count).values
    i = tuple(pairs[:, 0].T)
    j = tuple(pairs[:, 1].T)
    dist = np.linalg.norm((pairs[:, 0] - pairs[:, 1]).astype(float), axis=1) * u.spacing
    if np.any(dist > lam * (1 + _RTOL)):
        k = int(np.argmax(dist > lam * (1 + _RTOL)))
        raise MaximalError(f"pair {pairs[k].tolist()} is farther apart than lam={lam!r}")
    diff = u.values[i] - u.values[j]
    num = np.abs(diff) if diff.ndim == 1 else np.linalg.norm(diff, axis=1)
    den = dist * (M[i] + M[j])
    bad = (den == 0) & (num > 0)
    if bad.any():
        k = int(np.argmax(bad))
        raise LemmaViolation(
            f"pair {pairs[k].tolist()}: |u(x)-u(y)| = {num[k]!r} but the maximal-function "
            "bound is zero (grid too coarse for this u)",
            pair=pairs[k].tolist(),
        )
    ok = den > 0
    if not ok.any():
        return 0.0
    return float(np.max(num[ok] / den[ok]))


# ---------------------------------------------------------------------------
# packaged checks on a fixed test family


def family_spacing(nodes: int, extent: float) -> float:
    """Spacing of the lemma-suite grid: ``2 extent / (nodes - 1)`` rounded down
    to a power of two, so node coordinates and their differences are exact."""
    return 2.0 ** math.floor(math.log2(2 * extent / (nodes - 1)))


def family_half_width(nodes: int, extent: float) -> float:
    """Radius of the largest origin-centred ball inside the lemma-suite grid."""
    return family_spacing(nodes, extent) * ((nodes - 1) // 2)


def _family(dimension: int, nodes: int, extent: float):
    # the origin is a node, so the linear-function identity holds exactly
    spacing = family_spacing(nodes, extent)
    lower = np.full(dimension, -spacing * (nodes // 2))
    coords = ScalarGrid(lower, spacing, np.zeros((nodes,) * dimension)).node_coordinates()
    r = np.linalg.norm(coords, axis=-1)
    spike = np.zeros_like(r)
    spike[tuple([nodes // 2] * dimension)] = 1.0 / spacing**dimension
    base = ScalarGrid(lower, spacing, np.ones_like(r))
    return base, {
        "constant": np.ones_like(r),
        "spike": spike,
        "hat": np.clip(1.0 - r, 0.0, None),
    }, r


def _settles(seq) -> bool:
    """True when the increments shrink geometrically with a small projected tail.

    With ``r`` the ratio of the last two increments, the growth still to
    come is about ``last * r / (1 - r)``; the sequence counts as settled
    when ``r < 1`` and that tail is at most half the current value.  A
    ratio bounded for p > 1 passes; the logarithmic growth at p = 1 does not.
    """
    inc = np.diff(np.asarray(seq, float))
    if len(inc) < 2:
        return False
    last, prev = inc[-1], inc[-2]
    if last <= 0:
        return True
    if prev <= 0:
        return False
    r = last / prev
    if r >= 1:
        return False
    return bool(last * r / (1 - r) <= 0.5 * seq[-1])


def lemma_suite(
    dimension: int = 1,
    nodes: int = 257,
    extent: float = 4.0,
    lam: float = 1.0,
    rho: float = 1.0,
    p_values=(1.5, 2.0, 3.0),
    spike_levels: int = 6,
    radii_count: int | None = None,
    max_pairs: int = 50000,
) -> dict:
    """Run the maximal-function property checks on constants, spikes and hats.

    Returns a JSON-ready dict of measured quantities and boolean flags;
    ``passed`` summarises them.
    """
    base, fam, r = _family(dimension, nodes, extent)
    h = base.spacing
    grids = {k: base.with_values(v) for k, v in fam.items()}
    out: dict = {
        "dimension": dimension,
        "nodes": nodes,
        "spacing": h,
        "half_width": family_half_width(nodes, extent),
        "lam": lam,
        "rho": rho,
    }

    lam_small = max(h, lam / 2)
    mono = all(
        bool(np.all(local_maximal_function(g, lam_small, radii_count).values <= local_maximal_function(g, lam, radii_count).values))
        for g in grids.values()
    )
    hat, spike = grids["hat"], grids["spike"]
    Mh = local_maximal_function(hat, lam, radii_count).values
    Mc = local_maximal_function(hat.with_values(-3.0 * hat.values), lam, radii_count).values
    scale = np.max(np.abs(3.0 * Mh))
    homog_err = float(np.max(np.abs(Mc - 3.0 * Mh)) / scale) if scale > 0 else 0.0
    Ms = local_maximal_function(spike, lam, radii_count).values
    Msum = local_maximal_function(hat.with_values(hat.values + spike.values), lam, radii_count).values
    # the float averages each carry one rounding of sum/count, so report the
    # excess in ulps; the exact check runs on the family quantised to integers
    excess = np.maximum(Msum - (Mh + Ms), 0.0) / np.spacing(np.maximum(Mh + Ms, np.finfo(float).tiny))
    q = 2**12
    hat_i = np.rint(hat.values * q).astype(np.int64)
    spike_i = np.rint(spike.values * q).astype(np.int64)
    s1, n1 = exact_maximal_fractions(hat_i + spike_i, lam, h, radii_count)
    s2, n2 = exact_maximal_fractions(hat_i, lam, h, radii_count)
    s3, n3 = exact_maximal_fractions(spike_i, lam, h, radii_count)
    sublinear = bool(np.all(s1 * n2 * n3 <= (s2 * n3 + s3 * n2) * n1))

    ratios = {}
    for p in p_values:
        ratios[repr(float(p))] = {name: check_lp_bound(g, lam, rho, p, radii_count) for name, g in grids.items()}

    # shrinking unit-mass spikes: bounded ratio for p > 1, growing ratio at p = 1
    shrink = {}
    widths = [extent / 2 ** (k + 2) for k in range(spike_levels)]
    widths = [w for w in widths if w >= h]
    for p in (1.0,) + tuple(float(q) for q in p_values):
        seq = []
        for w in widths:
            vals = np.where(r <= w * (1 + _RTOL), 1.0, 0.0)
            vals /= vals.sum() * base.cell_volume
            seq.append(lp_ratio(base.with_values(vals), lam, rho, p, radii_count))
        shrink[repr(p)] = seq
    p1 = shrink[repr(1.0)]
    p1_growing = len(p1) >= 2 and all(b > a for a, b in zip(p1, p1[1:]))

    # difference quotients: hat (finite constant) and linear u = 3 x_1 (exactly 1/2)
    pairs = pairs_within(base, lam, max_pairs=max_pairs, seed=DEFAULT_SEED)
    c_hat = check_pointwise_lipschitz(hat, gradient_magnitude(hat), lam, pairs, radii_count)
    coords = base.node_coordinates()
    lin = base.with_values(3.0 * coords[..., 0])
    c_lin = check_pointwise_lipschitz(lin, base.with_values(np.full(base.shape, 3.0)), lam, pairs, radii_count)

    finite = all(math.isfinite(v) for d in ratios.values() for v in d.values())
    stable = {key: _settles(seq) for key, seq in shrink.items()}
    out.update(
        {
            "monotone_in_lam": mono,
            "homogeneity_rel_error": homog_err,
            "homogeneous": homog_err <= 1e-14,
            "sublinear": sublinear,
            "sublinear_float_excess_ulps": float(excess.max()),
            "lp_ratios": ratios,
            "spike_widths": widths,
            "shrinking_spike_ratios": shrink,
            "lp_ratios_finite": finite,
            "shrinking_spike_settles": stable,
            "lp_ratios_stable": all(stable[repr(float(p))] for p in p_values),
            "p1_ratio_growing": p1_growing,
            "pairs_checked": int(len(pairs)),
            "hat_c_d": c_hat,
            "hat_c_d_finite": math.isfinite(c_hat),
            "linear_c_d": c_lin,
            "linear_c_d_is_half": c_lin == 0.5,
        }
    )
    out["passed"] = all(
        out[k]
        for k in (
            "monotone_in_lam",
            "homogeneous",
            "sublinear",
            "lp_ratios_finite",
            "lp_ratios_stable",
            "p1_ratio_growing",
            "hat_c_d_finite",
            "linear_c_d_is_half",
        )
    )
    return out
