"""Vector fields for the flow experiments.

A :class:`FieldSpec` bundles a vectorised evaluation rule with whatever
regularity metadata is known about the field (sup norm, Sobolev exponent,
one-sided Lipschitz constant, lower bound on the divergence).  Unknown
quantities are ``None``.

The catalogue covers exactly solvable fields (zero, constant, linear), a
rough monotone 1-D field, a 2-D rotation with a rough radial speed profile,
and fields built by discrete convolution on a grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .grids import GridError, GridField, ScalarGrid, grid_from_function
from .sampling import DEFAULT_SEED, box_samples

__all__ = [
    "FieldSpec",
    "FieldError",
    "eval_field",
    "zero_field",
    "constant_field",
    "linear_field",
    "affine_field",
    "power_field",
    "rotation_field",
    "grid_field",
    "make_convolution_field",
    "convolution_example",
    "estimate_osl_constant",
    "osl_ratios",
    "estimate_sup_norm",
    "FIELD_KINDS",
]

Rule = Callable[[np.ndarray], np.ndarray]


class FieldError(ValueError):
    """Malformed field input (wrong dimension, bad parameters)."""


@dataclass(frozen=True, eq=False)
class FieldSpec:
    """A vector field ``b: R^d -> R^d`` plus regularity metadata.

    ``rule`` maps an ``(n, d)`` array of points to an ``(n, d)`` array of
    values.  It must be a pure elementwise-in-rows computation so that a
    point evaluated alone and inside a batch gives the same bits.
    """

    dimension: int
    rule: Rule
    name: str = "field"
    params: Mapping[str, object] = field(default_factory=dict)
    sup_norm_bound: float | None = None
    sobolev_p: float | None = None
    osl_constant: float | None = None
    divergence_lower_bound: float | None = None
    grid_spacing: float | None = None
    stress_test: bool = False
    notes: str = ""

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise FieldError(f"dimension must be a positive integer, got {self.dimension!r}")
        if self.sup_norm_bound is not None and self.sup_norm_bound < 0:
            raise FieldError("sup_norm_bound must be nonnegative")
        if self.sobolev_p is not None and self.sobolev_p <= 1:
            raise FieldError("sobolev_p must exceed 1")

    def evaluate(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dimension:
            raise FieldError(
                f"{self.name}: expected points of shape (n, {self.dimension}), got {x.shape}"
            )
        out = self.rule(x)
        if out.shape != x.shape:
            raise FieldError(f"{self.name}: rule returned shape {out.shape} for input {x.shape}")
        return out

    __call__ = evaluate

    def check_bound(self, values, rtol: float = 1e-12) -> None:
        """Raise if any row of ``values`` exceeds the declared sup-norm bound."""
        if self.sup_norm_bound is None:
            return
        norms = np.linalg.norm(np.asarray(values, float).reshape(-1, self.dimension), axis=1)
        worst = float(norms.max(initial=0.0))
        if worst > self.sup_norm_bound * (1 + rtol) + 1e-300:
            raise FieldError(
                f"{self.name}: |b(x)| = {worst!r} exceeds declared bound {self.sup_norm_bound!r}"
            )

    def metadata(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "params": {k: _plain(v) for k, v in sorted(self.params.items())},
            "sup_norm_bound": self.sup_norm_bound,
            "sobolev_p": self.sobolev_p,
            "osl_constant": self.osl_constant,
            "divergence_lower_bound": self.divergence_lower_bound,
            "grid_spacing": self.grid_spacing,
            "stress_test": self.stress_test,
            "notes": self.notes,
        }


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(u) for u in v]
    return v


def eval_field(spec: FieldSpec, x) -> np.ndarray:
    """Evaluate ``b`` at a single point ``x`` (a length-``d`` vector)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.dimension,):
        raise FieldError(f"{spec.name}: point has shape {x.shape}, field dimension is {spec.dimension}")
    return spec.evaluate(x[None, :])[0]


# ---------------------------------------------------------------------------
# catalogue


def zero_field(dimension: int = 1) -> FieldSpec:
    return FieldSpec(
        dimension,
        np.zeros_like,
        name="zero",
        sup_norm_bound=0.0,
        osl_constant=0.0,
        divergence_lower_bound=0.0,
    )


def constant_field(value) -> FieldSpec:
    c = np.atleast_1d(np.asarray(value, dtype=float)).copy()
    c.flags.writeable = False

    def rule(x):
        return np.broadcast_to(c, x.shape) + np.zeros_like(x)

    return FieldSpec(
        c.size,
        rule,
        name="constant",
        params={"value": c.tolist()},
        sup_norm_bound=float(np.linalg.norm(c)),
        osl_constant=0.0,
        divergence_lower_bound=0.0,
    )


def linear_field(dimension: int = 1, rate: float = -1.0) -> FieldSpec:
    """``b(x) = rate * x``; the default is the contraction ``-x``."""
    rate = float(rate)
    return FieldSpec(
        dimension,
        lambda x: rate * x,
        name="linear",
        params={"rate": rate},
        osl_constant=rate,
        divergence_lower_bound=dimension * rate,
        notes="unbounded on R^d; sup norm is estimated on the region of interest",
    )


def affine_field(matrix, offset=None) -> FieldSpec:
    """``b(x) = A x + c``.  The OSL constant is the top eigenvalue of ``(A + A^T)/2``."""
    A = np.atleast_2d(np.asarray(matrix, dtype=float)).copy()
    if A.shape[0] != A.shape[1]:
        raise FieldError("affine field needs a square matrix")
    c = np.zeros(A.shape[0]) if offset is None else np.asarray(offset, float).copy()
    At = A.T.copy()
    return FieldSpec(
        A.shape[0],
        lambda x: x @ At + c,
        name="affine",
        params={"matrix": A.tolist(), "offset": c.tolist()},
        osl_constant=float(np.linalg.eigvalsh((A + A.T) / 2).max()),
        divergence_lower_bound=float(np.trace(A)),
    )


def power_field(alpha: float = 0.5, cap: float = 1.0) -> FieldSpec:
    """Rough monotone 1-D field ``b(x) = -sign(x) min(|x|, cap)^alpha``.

    Not Lipschitz at the origin for ``alpha < 1``; nonincreasing, hence
    one-sided Lipschitz with constant 0.  The cap keeps ``b`` bounded without
    changing it on ``[-cap, cap]``, which trajectories started there never
    leave.  ``[div b]^-`` is unbounded near 0, so the field is a stress test
    rather than an instance of every hypothesis.
    """
    alpha = float(alpha)
    cap = float(cap)
    if not 0 < alpha < 1:
        raise FieldError(f"alpha must lie in (0, 1), got {alpha}")
    if cap <= 0:
        raise FieldError("cap must be positive")

    if alpha == 0.5:
        def rule(x):
            return -np.sign(x) * np.sqrt(np.minimum(np.abs(x), cap))
    else:
        def rule(x):
            return -np.sign(x) * np.minimum(np.abs(x), cap) ** alpha

    return FieldSpec(
        1,
        rule,
        name="power",
        params={"alpha": alpha, "cap": cap, "sobolev_p_below": 1.0 / (1.0 - alpha)},
        sup_norm_bound=cap**alpha,
        osl_constant=0.0,
        divergence_lower_bound=-math.inf,
        stress_test=True,
        notes="[div b]^- unbounded near 0; W^{1,p}_loc only for p < 1/(1-alpha)",
    )


def rotation_field(alpha: float = 1.0) -> FieldSpec:
    """2-D rotation ``b(x, y) = r^(alpha-1) (-y, x)`` with speed ``r^alpha``.

    ``alpha = 1`` is the rigid rotation; ``alpha < 1`` gives a speed profile
    that is only Hoelder at the origin.  Divergence free for every alpha.
    """
    alpha = float(alpha)
    if not 0 < alpha <= 1:
        raise FieldError(f"alpha must lie in (0, 1], got {alpha}")

    if alpha == 1.0:
        def rule(x):
            return np.stack([-x[:, 1], x[:, 0]], axis=1)
    else:
        def rule(x):
            r = np.hypot(x[:, 0], x[:, 1])
            scale = np.zeros_like(r)
            pos = r > 0
            scale[pos] = r[pos] ** (alpha - 1.0)
            return np.stack([-scale * x[:, 1], scale * x[:, 0]], axis=1)

    return FieldSpec(
        2,
        rule,
        name="rotation",
        params={"alpha": alpha},
        osl_constant=0.0 if alpha == 1.0 else None,
        divergence_lower_bound=0.0,
        stress_test=alpha < 1.0,
    )


def grid_field(grid: GridField, name: str = "grid") -> FieldSpec:
    """Wrap a :class:`GridField` (multilinear inside, zero outside) as a field."""
    return FieldSpec(
        grid.dimension,
        grid.interpolate,
        name=name,
        params={"shape": list(grid.shape), "spacing": grid.spacing, "origin": grid.origin.tolist()},
        sup_norm_bound=grid.sup_norm,
        grid_spacing=grid.spacing,
    )


# ---------------------------------------------------------------------------
# convolution fields


def _box_arrays(box, dimension=None):
    lo, hi = box
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    if lo.shape != hi.shape or (dimension is not None and lo.size != dimension):
        raise FieldError(f"box {box!r} does not match dimension {dimension}")
    if np.any(hi < lo):
        raise FieldError(f"box {box!r} is inverted")
    return lo, hi


def make_convolution_field(f: GridField, g: ScalarGrid, output_box, spacing: float) -> GridField:
    """Direct discrete convolution ``(f*g)(x) = sum_z g(z) f(x - z) dx^d``.

    ``z`` runs over the nodes of ``g``; ``f`` is evaluated with its own
    multilinear interpolation and zero extension.  The result lives on the
    nodes ``lower + k*spacing`` of ``output_box``.
    """
    if not isinstance(f, GridField) or not isinstance(g, ScalarGrid):
        raise FieldError("f must be a GridField and g a ScalarGrid")
    if f.dimension != g.dimension:
        raise FieldError(f"f has dimension {f.dimension}, g has {g.dimension}")
    spacing = float(spacing)
    for label, s in (("f", f.spacing), ("g", g.spacing)):
        if not math.isclose(s, spacing, rel_tol=1e-12):
            raise FieldError(f"incompatible spacings: {label} uses {s!r}, output uses {spacing!r}")
    lo, hi = _box_arrays(output_box, f.dimension)
    counts = np.rint((hi - lo) / spacing).astype(int) + 1
    axes = [lo[k] + spacing * np.arange(n) for k, n in enumerate(counts)]
    targets = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, f.dimension)

    g_nodes = g.node_coordinates().reshape(-1, g.dimension)
    g_vals = g.values.ravel()
    acc = np.zeros_like(targets)
    for z, gz in zip(g_nodes, g_vals):
        if gz != 0.0:
            acc += gz * f.interpolate(targets - z)
    acc *= spacing**f.dimension
    try:
        return GridField(lo, spacing, acc.reshape(tuple(counts) + (f.dimension,)))
    except GridError as exc:
        raise FieldError(str(exc)) from exc


def convolution_example(
    dimension: int = 1,
    alpha: float = 0.5,
    width: float = 0.1,
    spacing: float = 1 / 64,
    extent: float = 2.0,
) -> FieldSpec:
    """Smoothed rough field ``b = f * g`` on a grid.

    ``f(x) = -x/|x| * phi(|x|)`` with ``phi(r) = r^alpha`` on ``[0, 1]``
    decaying linearly to 0 at ``r = 2`` (compactly supported, W^{1,p} for
    ``p < 1/(1-alpha)``); ``g`` is a normalised Gaussian of std ``width``
    truncated at four standard deviations.
    """
    if not 0 < alpha < 1:
        raise FieldError("alpha must lie in (0, 1)")

    def f_rule(x):
        r = np.linalg.norm(x, axis=1)
        phi = np.where(r <= 1.0, np.abs(r) ** alpha, np.clip(2.0 - r, 0.0, None))
        out = np.zeros_like(x)
        pos = r > 0
        out[pos] = -(x[pos] / r[pos, None]) * phi[pos, None]
        return out

    half = extent
    f = grid_from_function(f_rule, [-half] * dimension, [half] * dimension, spacing, vector=True)
    gh = math.ceil(4 * width / spacing) * spacing
    g = grid_from_function(
        lambda x: np.exp(-0.5 * np.sum(x**2, axis=1) / width**2),
        [-gh] * dimension,
        [gh] * dimension,
        spacing,
    )
    mass = g.values.sum() * g.cell_volume
    g = g.with_values(g.values / mass)
    out = make_convolution_field(f, g, ([-half] * dimension, [half] * dimension), spacing)
    spec = grid_field(out, name="convolution")
    return FieldSpec(
        spec.dimension,
        spec.rule,
        name="convolution",
        params={
            "alpha": alpha,
            "width": width,
            "spacing": spacing,
            "extent": extent,
            "g_l1": float(np.abs(g.values).sum() * g.cell_volume),
            "f_sup": f.sup_norm,
        },
        sup_norm_bound=spec.sup_norm_bound,
        grid_spacing=spacing,
    )


FIELD_KINDS = {
    "zero": zero_field,
    "constant": constant_field,
    "linear": linear_field,
    "affine": affine_field,
    "power": power_field,
    "rotation": rotation_field,
    "convolution": convolution_example,
}


# ---------------------------------------------------------------------------
# certification: OSL constant and sup norm


def osl_ratios(field: FieldSpec, x, y) -> np.ndarray:
    """``<b(x)-b(y), x-y> / |x-y|^2`` for each row pair; NaN where ``x == y``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    bx = field.evaluate(x)
    by = field.evaluate(y)
    field.check_bound(bx)
    field.check_bound(by)
    dx = x - y
    num = np.sum((bx - by) * dx, axis=1)
    den = np.sum(dx * dx, axis=1)
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def _osl_pairs(field, lo, hi, n_pairs, seed, delta):
    d = field.dimension
    u = box_samples(np.concatenate([lo, lo]), np.concatenate([hi, hi]), n_pairs, seed)
    x, y = u[:, :d], u[:, d:]
    # close pairs along each axis: the ratio is most extreme at small separation
    xs = [x]
    ys = [y]
    for k in range(d):
        shifted = x.copy()
        shifted[:, k] += delta
        xs.append(x)
        ys.append(shifted)
    return np.concatenate(xs), np.concatenate(ys)


def estimate_osl_constant(
    field: FieldSpec,
    box,
    n_pairs: int,
    seed: int = DEFAULT_SEED,
    delta: float | None = None,
) -> float:
    """Largest sampled one-sided Lipschitz ratio over pairs in ``box``.

    Pairs come from a scrambled Halton sequence in ``box x box`` plus the
    axis perturbations ``(x, x + delta e_k)`` of every sampled ``x``.  The
    default ``delta`` is half the grid spacing for grid fields and
    ``2^-10`` of the shortest box side otherwise.  The result is a lower
    estimate of the true constant; for a fixed seed it is nondecreasing in
    ``n_pairs``.
    """
    if n_pairs < 1:
        raise FieldError("n_pairs must be at least 1")
    lo, hi = _box_arrays(box, field.dimension)
    if np.any(hi <= lo):
        raise FieldError(f"box {box!r} is degenerate")
    if delta is None:
        delta = field.grid_spacing / 2 if field.grid_spacing else float(np.min(hi - lo)) * 2.0**-10
    if delta <= 0:
        raise FieldError("delta must be positive")
    x, y = _osl_pairs(field, lo, hi, n_pairs, seed, delta)
    ratios = osl_ratios(field, x, y)
    return float(np.nanmax(ratios))


def estimate_sup_norm(field: FieldSpec, region, n_samples: int, seed: int = DEFAULT_SEED) -> float:
    """Max of ``|b(x)|`` over Halton samples of the box ``region`` and its corners."""
    if n_samples < 1:
        raise FieldError("n_samples must be at least 1")
    lo, hi = _box_arrays(region, field.dimension)
    pts = lo + (hi - lo) * box_samples(np.zeros(lo.size), np.ones(lo.size), n_samples, seed)
    corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(lo.size, -1).T
    vals = field.evaluate(np.concatenate([pts, corners]))
    field.check_bound(vals)
    return float(np.max(np.linalg.norm(vals, axis=1)))
