"""Error measurement, order fitting and the explicit error bound.

The bound is assembled from a chain of constants::

    K   = c_dp * M * |b|_inf / 2
    C1  = 8 |b|_inf^2 c_dp R^d
    C2  = K^2
    C3  = kappa + sqrt(C1)
    C   = C2 + 2 K C3 + K + C1
    alpha(h) = 1 + 2 kappa h,  beta(h) = 1 + K h^2
    C_exp = exp((T - t0) (2 kappa + K (T - t0)))

and gives ``|X(t_n) - X_n|_p <= C sqrt((C_exp - 1)/(2 kappa)) h^(1/2)
+ C_exp |X(t0) - X_0|_p``.  The squared errors also satisfy the discrete
recursion ``E_{n+1} <= alpha beta E_n + C h^2``, evaluated in closed form
by :func:`recursion_bound`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .fields import FieldSpec, estimate_osl_constant, estimate_sup_norm
from .grids import grid_from_function
from .integrator import (
    DEFAULT_MEMORY_CAP,
    TimeGrid,
    TrajectoryTable,
    compressibility_estimate,
    euler_flow,
    make_cloud,
    reference_flow,
    tiles,
)
from .maximal import check_lp_bound, check_pointwise_lipschitz, gradient_magnitude, pairs_within
from .sampling import DEFAULT_SEED, ball_volume

__all__ = [
    "BoundConstants",
    "ConstantsSettings",
    "ErrorSample",
    "ConvergenceReport",
    "StudyError",
    "lp_error",
    "fit_order",
    "theoretical_bound",
    "recursion_bound",
    "estimate_constants",
    "run_convergence_study",
]

KAPPA_MIN = 1e-6


class StudyError(RuntimeError):
    """A convergence study could not be carried out."""


@dataclass(frozen=True)
class BoundConstants:
    kappa: float
    K: float
    C1: float
    C2: float
    C3: float
    C: float
    c_dp: float
    M: float
    b_sup: float
    R: float
    d: int
    t0: float
    T: float
    kappa_estimate: float
    kappa_min: float = KAPPA_MIN
    diagnostics: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_chain(
        cls,
        kappa: float,
        c_dp: float,
        M: float,
        b_sup: float,
        R: float,
        d: int,
        T: float,
        t0: float = 0.0,
        kappa_min: float = KAPPA_MIN,
        K: float | None = None,
        diagnostics: dict | None = None,
    ) -> "BoundConstants":
        """Build the chain from its inputs.  ``kappa`` is clamped below at
        ``kappa_min``; ``K`` may be given directly instead of via ``c_dp*M``."""
        k_eff = max(float(kappa), float(kappa_min))
        if K is None:
            K = c_dp * M * b_sup / 2.0
        C1 = 8.0 * b_sup**2 * c_dp * R**d
        C2 = K**2
        C3 = k_eff + math.sqrt(C1)
        C = C2 + 2.0 * K * C3 + K + C1
        out = cls(
            kappa=k_eff,
            K=float(K),
            C1=C1,
            C2=C2,
            C3=C3,
            C=C,
            c_dp=float(c_dp),
            M=float(M),
            b_sup=float(b_sup),
            R=float(R),
            d=int(d),
            t0=float(t0),
            T=float(T),
            kappa_estimate=float(kappa),
            kappa_min=float(kappa_min),
            diagnostics=dict(diagnostics or {}),
        )
        if not all(math.isfinite(v) for v in (out.K, C1, C2, C3, C, out.C_exp)):
            raise StudyError(f"non-finite bound constants: {out.to_dict()}")
        return out

    def alpha(self, h: float) -> float:
        return 1.0 + 2.0 * self.kappa * h

    def beta(self, h: float) -> float:
        return 1.0 + self.K * h * h

    def growth_excess(self, h: float) -> float:
        """``alpha*beta - 1``, expanded to avoid cancellation."""
        return h * (2.0 * self.kappa + self.K * h + 2.0 * self.K * self.kappa * h * h)

    def growth_power(self, h: float, n: int) -> float:
        """``(alpha*beta)^n``."""
        return math.exp(n * math.log1p(self.growth_excess(h)))

    @property
    def horizon(self) -> float:
        return self.T - self.t0

    @property
    def C_exp(self) -> float:
        s = self.horizon
        return math.exp(s * (2.0 * self.kappa + self.K * s))

    def C_exp_tight(self, h: float) -> float:
        """``exp((T-t0)(2 kappa + K h))``, which already bounds ``(alpha beta)^N``."""
        return math.exp(self.horizon * (2.0 * self.kappa + self.K * h))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["C_exp"] = self.C_exp
        out["C2_rule"] = "C2 = K^2"
        return out


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorSample:
    h: float
    lp_error: float
    n_steps: int
    p: float
    R: float

    def __post_init__(self):
        if not (self.lp_error >= 0 and math.isfinite(self.lp_error)):
            raise StudyError(f"invalid error value {self.lp_error!r} at h={self.h!r}")


def lp_error(coarse: TrajectoryTable, reference: TrajectoryTable, n: int, p: float) -> float:
    """``(sum_i w_i |X_ref(t_n, x_i) - X_n(x_i)|^p)^(1/p)``; ``p = inf`` gives the max."""
    if not coarse.cloud.same_as(reference.cloud):
        raise StudyError("tables were computed on different clouds")
    if not p >= 1:
        raise StudyError(f"p must be at least 1, got {p!r}")
    t = coarse.grid.time(n)
    m = reference.step_at_time(t)
    if m is None or not reference.has_step(m):
        raise StudyError(f"reference table has no stored state at t={t!r}")
    diff = np.linalg.norm(reference.at_step(m) - coarse.at_step(n), axis=1)
    if math.isinf(p):
        return float(diff.max())
    return float(np.sum(coarse.cloud.weights * diff**p) ** (1.0 / p))


def fit_order(samples: Sequence[ErrorSample]) -> tuple[float, float, float]:
    """Least-squares line through ``(log h, log error)``.

    Returns ``(slope, intercept, r_squared)``.
    """
    usable = [s for s in samples if s.lp_error > 0]
    hs = np.array([s.h for s in usable], float)
    if len(usable) < 3 or len(np.unique(hs)) < 3:
        raise StudyError(f"need at least 3 samples with positive error and distinct h, got {len(usable)}")
    x = np.log(hs)
    y = np.log(np.array([s.lp_error for s in usable], float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def theoretical_bound(constants: BoundConstants, h: float, E0_norm: float = 0.0) -> float:
    """``C sqrt((C_exp - 1)/(2 kappa)) h^(1/2) + C_exp E0_norm``."""
    if not constants.kappa > 0:
        raise StudyError(
            f"closed-form bound divides by 2*kappa and kappa={constants.kappa!r}; use recursion_bound"
        )
    if not h > 0:
        raise StudyError("h must be positive")
    ce = constants.C_exp
    return constants.C * math.sqrt((ce - 1.0) / (2.0 * constants.kappa)) * math.sqrt(h) + ce * E0_norm


def recursion_bound(constants: BoundConstants, h: float, E0: float, n: int) -> float:
    """Closed form of ``E_{k+1} = alpha beta E_k + C h^2`` after ``n`` steps (squared errors)."""
    if n < 0:
        raise StudyError("n must be nonnegative")
    q = constants.growth_excess(h)
    if q == 0.0:
        return E0 + n * constants.C * h * h
    log_g = math.log1p(q)
    power = math.exp(n * log_g)
    geometric = math.expm1(n * log_g) / q
    return power * E0 + constants.C * h * h * geometric


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantsSettings:
    """Tunables for assembling :class:`BoundConstants` from a field."""

    kappa_min: float = KAPPA_MIN
    lam: float | None = None
    osl_pairs: int = 4096
    sup_samples: int = 4096
    grid_nodes: int = 257
    radii_count: int | None = None
    max_pairs: int = 20000
    histogram_dx: float = 0.1
    compress_snapshots: int = 16


def _snapshot_steps(N: int, count: int) -> list[int]:
    count = max(1, min(count, N))
    return sorted({round(k * N / count) for k in range(count + 1)})


def estimate_constants(
    field: FieldSpec,
    R: float,
    T: float,
    p: float,
    reference: TrajectoryTable | None = None,
    seed: int = DEFAULT_SEED,
    t0: float = 0.0,
    settings: ConstantsSettings | None = None,
) -> BoundConstants:
    """Measure every ingredient of the bound for ``field`` on ``B_R(0)``.

    * ``|b|_inf``: declared bound, else sampled on ``[-R, R]^d``.
    * ``kappa``: sampled OSL constant on the confinement cube of half-width
      ``R + (T - t0)|b|_inf``, clamped below at ``kappa_min``.
    * ``c_dp``: measured L^p maximal ratio of ``|Db|`` (ball radius ``rho``
      = confinement radius), raised if needed to ``vol(B_R)^(2/p) / R^d``
      so that it also covers the constant-term estimate in ``C1``.
    * ``M = 2 c_d L^(1/p) |Db|_{L^p(B_(rho+lam))}`` with ``c_d`` the
      measured difference-quotient constant and ``L`` the compressibility
      estimated from ``reference`` (computed on the fly when omitted).
    """
    s = settings or ConstantsSettings()
    if s.grid_nodes < 17:
        raise StudyError("constants grid needs at least 17 nodes per axis")
    d = field.dimension
    horizon = T - t0
    if field.sup_norm_bound is not None:
        b_sup, b_source = float(field.sup_norm_bound), "declared"
    else:
        b_sup = estimate_sup_norm(field, ([-R] * d, [R] * d), s.sup_samples, seed)
        b_source = "sampled on [-R, R]^d"
    rho = R + horizon * b_sup
    kappa_est = estimate_osl_constant(field, ([-rho] * d, [rho] * d), s.osl_pairs, seed)

    lam = s.lam if s.lam is not None else horizon * b_sup
    # balls must span at least 4 spacings of the grid over B_(rho+lam)
    lam = max(lam, 8.0 * rho / (s.grid_nodes - 9))
    outer = rho + lam
    spacing = 2.0 * outer / (s.grid_nodes - 1)
    b_grid = grid_from_function(field.evaluate, [-outer] * d, [outer] * d, spacing, vector=True)
    db = gradient_magnitude(b_grid)
    r = db.node_norms()
    in_outer = r <= outer * (1 + 1e-12)
    db_norm = float(np.sum(db.values[in_outer] ** p) * db.cell_volume) ** (1.0 / p)
    c_dp_lemma = check_lp_bound(db, lam, rho, p, s.radii_count)
    c_dp_volume = ball_volume(d, R) ** (2.0 / p) / R**d
    c_dp = max(c_dp_lemma, c_dp_volume)

    pairs = pairs_within(b_grid, lam, mask=r <= rho * (1 + 1e-12), max_pairs=s.max_pairs, seed=seed)
    c_d = check_pointwise_lipschitz(b_grid, db, lam, pairs, s.radii_count)

    if reference is None:
        cloud = make_cloud(d, R, 4096, seed)
        grid = TimeGrid.from_step(t0, T, horizon / 64)
        reference = reference_flow(field, cloud, grid, 16, snapshots=_snapshot_steps(grid.N, s.compress_snapshots))
    L = max(
        compressibility_estimate(reference, n, s.histogram_dx)
        for n in _snapshot_steps(reference.grid.N, s.compress_snapshots)
        if reference.has_step(n)
    )
    M = 2.0 * c_d * L ** (1.0 / p) * db_norm
    diagnostics = {
        "b_sup_source": b_source,
        "confinement_radius": rho,
        "lam": lam,
        "constants_grid_spacing": spacing,
        "Db_Lp_norm": db_norm,
        "c_dp_lemma": c_dp_lemma,
        "c_dp_volume": c_dp_volume,
        "c_d": c_d,
        "compressibility_L": L,
        "histogram_dx": s.histogram_dx,
        "p": p,
    }
    return BoundConstants.from_chain(
        kappa_est, c_dp, M, b_sup, R, d, T, t0, kappa_min=s.kappa_min, diagnostics=diagnostics
    )


# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    field: dict
    settings: dict
    samples: list
    fitted_slope: float | None
    fitted_intercept: float | None
    fit_residual: float | None
    theoretical_bounds: list
    recursion_bounds: list
    constants: dict
    recursion_constants: dict
    reference_check: dict
    flags: dict
    per_step_errors: dict | None = None

    @property
    def passed(self) -> bool:
        return bool(self.flags.get("pass"))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["samples"] = [asdict(s) for s in self.samples]
        return out

    def rows(self) -> list[tuple]:
        """``(h, error, bound)`` per sample, h descending."""
        return [(s.h, s.lp_error, b) for s, b in zip(self.samples, self.theoretical_bounds)]


def run_convergence_study(
    field: FieldSpec,
    R: float,
    T: float,
    p: float,
    h_sweep: Sequence[float],
    refinement: int,
    seed: int = DEFAULT_SEED,
    *,
    cloud_size: int = 4096,
    t0: float = 0.0,
    workers: int = 1,
    slope_threshold: float = 0.45,
    r2_threshold: float = 0.98,
    reference_budget: float = 0.05,
    per_step: bool = False,
    memory_cap: int = DEFAULT_MEMORY_CAP,
    constants_settings: ConstantsSettings | None = None,
) -> ConvergenceReport:
    """Measure ``|X(T) - X_N|_{L^p(B_R)}`` over a sweep of step sizes.

    One cloud and one reference flow (Euler at ``min(h_sweep)/refinement``)
    are shared by every coarse run.  A second reference at half the
    refinement gives a Richardson-style estimate of the reference error,
    which must stay below ``reference_budget`` times the smallest measured
    error.
    """
    hs = sorted({float(h) for h in h_sweep}, reverse=True)
    if len(hs) < 3:
        raise StudyError("h_sweep needs at least 3 distinct values")
    for h in hs:
        if not tiles(t0, T, h):
            raise StudyError(f"h={h!r} does not tile [{t0!r}, {T!r}]")
    if refinement < 64:
        raise StudyError(f"refinement must be at least 64, got {refinement}")
    if not p >= 1:
        raise StudyError("p must be at least 1")
    cs = constants_settings or ConstantsSettings()

    cloud = make_cloud(field.dimension, R, cloud_size, seed)
    fine_grid = TimeGrid.from_step(t0, T, hs[-1])
    snaps = None if per_step else _snapshot_steps(fine_grid.N, cs.compress_snapshots)
    reference = reference_flow(field, cloud, fine_grid, refinement, snaps, memory_cap, workers)
    half = reference_flow(field, cloud, fine_grid, refinement // 2, [], memory_cap, workers)
    ref_err = lp_error(half, reference, fine_grid.N, p)

    samples = []
    per_step_errors = {} if per_step else None
    for h in hs:
        grid = TimeGrid.from_step(t0, T, h)
        coarse = euler_flow(field, cloud, grid, None if per_step else [], memory_cap, workers)
        samples.append(ErrorSample(h, lp_error(coarse, reference, grid.N, p), grid.N, p, R))
        if per_step:
            curve = []
            for n in coarse.steps:
                m = reference.step_at_time(grid.time(n))
                if m is not None and reference.has_step(m):
                    curve.append([grid.time(n), lp_error(coarse, reference, n, p)])
            per_step_errors[repr(h)] = curve

    exact = all(s.lp_error == 0.0 for s in samples)
    if exact:
        slope = intercept = r2 = None
    else:
        slope, intercept, r2 = fit_order(samples)

    constants = estimate_constants(field, R, T, p, reference, seed, t0, cs)
    rec_constants = BoundConstants.from_chain(
        max(constants.kappa_estimate, 0.0),
        constants.c_dp,
        constants.M,
        constants.b_sup,
        R,
        field.dimension,
        T,
        t0,
        kappa_min=0.0,
        diagnostics=constants.diagnostics,
    )
    bounds = [theoretical_bound(constants, s.h, 0.0) for s in samples]
    rec_bounds = [recursion_bound(rec_constants, s.h, 0.0, s.n_steps) for s in samples]
    chain_ok = all(
        c.growth_power(s.h, s.n_steps) <= c.C_exp for s in samples for c in (constants, rec_constants)
    )

    positive = [s.lp_error for s in samples if s.lp_error > 0]
    budget_ok = ref_err <= reference_budget * min(positive) if positive else ref_err == 0.0
    flags = {
        "exact": exact,
        "slope_ok": exact or (slope >= slope_threshold and r2 >= r2_threshold),
        "bound_dominates": all(b >= s.lp_error for b, s in zip(bounds, samples)),
        "recursion_dominates": all(b >= s.lp_error**2 for b, s in zip(rec_bounds, samples)),
        "chain_consistent": chain_ok,
        "reference_budget_ok": budget_ok,
    }
    flags["pass"] = all(flags[k] for k in ("slope_ok", "bound_dominates", "recursion_dominates", "chain_consistent", "reference_budget_ok"))
    settings = {
        "R": R,
        "T": T,
        "t0": t0,
        "p": p,
        "h_sweep": hs,
        "refinement": refinement,
        "seed": seed,
        "cloud_size": cloud_size,
        "slope_threshold": slope_threshold,
        "r2_threshold": r2_threshold,
        "reference_budget": reference_budget,
        "constants": asdict(cs),
    }
    return ConvergenceReport(
        field=field.metadata(),
        settings=settings,
        samples=samples,
        fitted_slope=slope,
        fitted_intercept=intercept,
        fit_residual=r2,
        theoretical_bounds=bounds,
        recursion_bounds=rec_bounds,
        constants=constants.to_dict(),
        recursion_constants=rec_constants.to_dict(),
        reference_check={
            "refinement": refinement,
            "half_refinement": refinement // 2,
            "reference_difference": ref_err,
            "smallest_error": min(positive) if positive else 0.0,
            "budget": reference_budget,
        },
        flags=flags,
        per_step_errors=per_step_errors,
    )
