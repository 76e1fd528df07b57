"""Explicit Euler flows over clouds of initial conditions.

The Euler map ``x -> x + h b(x)`` is applied to every point of an
:class:`InitialCloud` simultaneously.  A fine-step Euler run serves as the
reference flow, and :func:`compressibility_estimate` measures how much the
flow concentrates Lebesgue measure.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import FieldSpec
from .sampling import DEFAULT_SEED, ball_samples, ball_volume

__all__ = [
    "TimeGrid",
    "InitialCloud",
    "TrajectoryTable",
    "FlowError",
    "make_cloud",
    "euler_step",
    "euler_flow",
    "reference_flow",
    "push_forward_histogram",
    "compressibility_estimate",
    "DEFAULT_MEMORY_CAP",
]

TILING_RTOL = 1e-12
# stored floats above which only snapshot rows are kept (~256 MB)
DEFAULT_MEMORY_CAP = 2**25
_TABLE_MAGIC = b"EULTRAJ1"


class FlowError(ArithmeticError):
    """Non-finite field value or broken confinement during a flow."""


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    h: float
    N: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError(f"need T > t0, got t0={self.t0!r}, T={self.T!r}")
        if not self.h > 0:
            raise ValueError(f"step must be positive, got h={self.h!r}")
        if self.N < 1:
            raise ValueError("need at least one step")
        span = self.T - self.t0
        if abs(self.N * self.h - span) > TILING_RTOL * span:
            raise ValueError(f"h={self.h!r} does not tile [{self.t0!r}, {self.T!r}] in {self.N} steps")

    @classmethod
    def from_step(cls, t0: float, T: float, h: float) -> "TimeGrid":
        span = T - t0
        if not h > 0 or not span > 0:
            raise ValueError(f"invalid interval/step: t0={t0!r}, T={T!r}, h={h!r}")
        return cls(float(t0), float(T), float(h), max(1, round(span / h)))

    def time(self, n: int) -> float:
        return self.t0 + n * self.h

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.N + 1)


def tiles(t0: float, T: float, h: float) -> bool:
    span = T - t0
    if not (h > 0 and span > 0):
        return False
    n = max(1, round(span / h))
    return abs(n * h - span) <= TILING_RTOL * span


@dataclass(frozen=True, eq=False)
class InitialCloud:
    """Quadrature nodes in ``B_R(0)`` with equal positive weights."""

    radius: float
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        w = np.array(self.weights, dtype=float, copy=True)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a non-empty (n, d) array")
        if w.shape != (pts.shape[0],):
            raise ValueError("one weight per point")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if np.any(np.linalg.norm(pts, axis=1) > self.radius * (1 + 1e-12)):
            raise ValueError("cloud point outside B_R(0)")
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def volume(self) -> float:
        return ball_volume(self.dimension, self.radius)

    def same_as(self, other: "InitialCloud") -> bool:
        return self is other or (
            self.radius == other.radius
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )


def make_cloud(dimension: int, radius: float, size: int, seed: int = DEFAULT_SEED) -> InitialCloud:
    """Halton points in the cube ``[-R, R]^d`` rejection filtered to ``B_R(0)``,
    each weighted ``vol(B_R) / size``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = ball_samples(dimension, radius, size, seed)
    w = np.full(size, ball_volume(dimension, radius) / size)
    return InitialCloud(float(radius), pts, w)


@dataclass(frozen=True, eq=False)
class TrajectoryTable:
    """Positions ``X[n][i]`` at the stored steps of a time grid."""

    cloud: InitialCloud
    grid: TimeGrid
    steps: tuple
    positions: np.ndarray
    scheme: str

    def __post_init__(self):
        if self.scheme not in ("euler", "reference"):
            raise ValueError(f"unknown scheme tag {self.scheme!r}")
        if self.positions.shape != (len(self.steps), self.cloud.size, self.cloud.dimension):
            raise ValueError("positions do not match steps x cloud")
        self.positions.flags.writeable = False

    def has_step(self, n: int) -> bool:
        return n in self._index

    @property
    def _index(self) -> dict:
        return {s: k for k, s in enumerate(self.steps)}

    def at_step(self, n: int) -> np.ndarray:
        try:
            return self.positions[self._index[n]]
        except KeyError:
            raise KeyError(f"step {n} not stored (stored: {self.steps[0]}..{self.steps[-1]}, {len(self.steps)} rows)") from None

    def step_at_time(self, t: float) -> int | None:
        n = round((t - self.grid.t0) / self.grid.h)
        if 0 <= n <= self.grid.N and abs(self.grid.time(n) - t) <= TILING_RTOL * max(1.0, abs(t)):
            return n
        return None

    @property
    def final(self) -> np.ndarray:
        return self.at_step(self.grid.N)

    def to_csv(self, path) -> Path:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        d = self.cloud.dimension
        writer.writerow(["step", "t", "point_index"] + [f"x_{k + 1}" for k in range(d)])
        for row, n in enumerate(self.steps):
            t = repr(self.grid.time(n))
            for i, x in enumerate(self.positions[row]):
                writer.writerow([n, t, i] + [repr(float(v)) for v in x])
        path = Path(path)
        path.write_text(buf.getvalue())
        return path

    def to_binary(self, path) -> Path:
        header = {
            "d": self.cloud.dimension,
            "N": self.grid.N,
            "cloud_size": self.cloud.size,
            "scheme": self.scheme,
            "t0": self.grid.t0,
            "T": self.grid.T,
            "h": self.grid.h,
            "radius": self.cloud.radius,
            "steps": list(self.steps),
        }
        blob = json.dumps(header, sort_keys=True).encode()
        parts = [
            _TABLE_MAGIC,
            struct.pack("<I", len(blob)),
            blob,
            np.ascontiguousarray(self.cloud.points, "<f8").tobytes(),
            np.ascontiguousarray(self.cloud.weights, "<f8").tobytes(),
            np.ascontiguousarray(self.positions, "<f8").tobytes(),
        ]
        path = Path(path)
        path.write_bytes(b"".join(parts))
        return path

    @classmethod
    def from_binary(cls, path) -> "TrajectoryTable":
        raw = Path(path).read_bytes()
        if not raw.startswith(_TABLE_MAGIC):
            raise ValueError(f"{path}: not a trajectory file")
        off = len(_TABLE_MAGIC)
        (hlen,) = struct.unpack("<I", raw[off : off + 4])
        h = json.loads(raw[off + 4 : off + 4 + hlen])
        data = np.frombuffer(raw[off + 4 + hlen :], "<f8").astype(float)
        n, d, rows = h["cloud_size"], h["d"], len(h["steps"])
        pts = data[: n * d].reshape(n, d)
        w = data[n * d : n * d + n]
        pos = data[n * d + n :].reshape(rows, n, d)
        cloud = InitialCloud(h["radius"], pts, w)
        grid = TimeGrid(h["t0"], h["T"], h["h"], h["N"])
        return cls(cloud, grid, tuple(h["steps"]), pos.copy(), h["scheme"])


def euler_step(field: FieldSpec, x, h: float) -> np.ndarray:
    """One explicit Euler step ``x + h b(x)`` for a d-vector or an (n, d) batch."""
    if not h > 0:
        raise ValueError(f"step must be positive, got h={h!r}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    b = field.evaluate(x if x.ndim == 2 else x[None, :]).reshape(x.shape)
    if not np.all(np.isfinite(b)):
        raise FlowError(f"{field.name}: non-finite b(x) in step from x={x.tolist()}")
    return x + h * b


def _stored_steps(N: int, n_points: int, d: int, snapshots, memory_cap: int) -> tuple:
    if snapshots is None:
        if (N + 1) * n_points * d <= memory_cap:
            return tuple(range(N + 1))
        return (0, N)
    steps = {0, N}
    for s in snapshots:
        s = int(s)
        if not 0 <= s <= N:
            raise ValueError(f"snapshot step {s} outside 0..{N}")
        steps.add(s)
    return tuple(sorted(steps))


def _march(field, x0, h, n_fine, stride, keep, bound, radius, t_of):
    """Euler-march one chunk of points; returns positions at the kept coarse steps."""
    rule = field.rule
    x = x0.copy()
    rows = np.empty((len(keep), x.shape[0], x.shape[1]))
    slot = {s: k for k, s in enumerate(keep)}
    rows[0] = x
    # overflow surfaces as a FlowError from _check_row, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_fine + 1):
            x = x + h * rule(x)
            if k % stride == 0:
                n = k // stride
                _check_row(field, x, n, bound, radius, t_of(n), k)
                if n in slot:
                    rows[slot[n]] = x
    return rows


def _check_row(field, x, n, bound, radius, elapsed, n_updates=0):
    finite = np.all(np.isfinite(x), axis=1)
    if not finite.all():
        i = int(np.argmin(finite))
        raise FlowError(f"{field.name}: non-finite state at step {n}, point {i}", n, i)
    if bound is not None:
        # rounding slack grows with the number of updates
        slack = 1e-9 + 4 * np.finfo(float).eps * n_updates
        limit = (radius + elapsed * bound) * (1 + slack) + 1e-300
        norms = np.linalg.norm(x, axis=1)
        if norms.max() > limit:
            i = int(np.argmax(norms))
            raise FlowError(
                f"{field.name}: |X| = {norms[i]!r} exceeds R + t|b|_inf = {limit!r} at step {n}, point {i}",
                n,
                i,
            )


def _run(field, cloud, grid, fine_h, stride, steps, workers, scheme):
    if field.dimension != cloud.dimension:
        raise ValueError(f"field dimension {field.dimension} != cloud dimension {cloud.dimension}")
    n_fine = grid.N * stride
    bound = field.sup_norm_bound
    t_of = lambda n: n * grid.h
    workers = max(1, int(workers))
    chunks = [c for c in np.array_split(np.arange(cloud.size), workers) if c.size]
    out = np.empty((len(steps), cloud.size, cloud.dimension))
    out[0] = cloud.points

    def job(idx):
        return _march(field, cloud.points[idx], fine_h, n_fine, stride, steps, bound, cloud.radius, t_of)

    if len(chunks) == 1:
        results = [job(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            futures = [pool.submit(job, c) for c in chunks]
            results, errors = [], []
            for c, fut in zip(chunks, futures):
                try:
                    results.append(fut.result())
                except FlowError as exc:
                    n, i = exc.args[1], exc.args[2]
                    errors.append((n, int(c[i]), exc))
            if errors:
                n, i, exc = min(errors, key=lambda e: (e[0], e[1]))
                raise FlowError(f"{field.name}: flow failed at step {n}, point {i}: {exc.args[0]}", n, i)
    for c, rows in zip(chunks, results):
        out[:, c] = rows
    return TrajectoryTable(cloud, grid, steps, out, scheme)


def euler_flow(
    field: FieldSpec,
    cloud: InitialCloud,
    grid: TimeGrid,
    snapshots=None,
    memory_cap: int = DEFAULT_MEMORY_CAP,
    workers: int = 1,
) -> TrajectoryTable:
    """Iterate the Euler map ``grid.N`` times from every cloud point.

    All steps are stored when they fit under ``memory_cap`` floats and no
    ``snapshots`` are requested; otherwise only the requested steps (always
    including 0 and N).  Points are split across ``workers`` threads; the
    result does not depend on the split.
    """
    steps = _stored_steps(grid.N, cloud.size, cloud.dimension, snapshots, memory_cap)
    return _run(field, cloud, grid, grid.h, 1, steps, workers, "euler")


def reference_flow(
    field: FieldSpec,
    cloud: InitialCloud,
    grid: TimeGrid,
    refinement: int,
    snapshots=None,
    memory_cap: int = DEFAULT_MEMORY_CAP,
    workers: int = 1,
) -> TrajectoryTable:
    """Euler with step ``h / refinement``, recorded on the coarse steps of ``grid``."""
    if int(refinement) != refinement or refinement < 1:
        raise ValueError(f"refinement must be a positive integer, got {refinement!r}")
    refinement = int(refinement)
    steps = _stored_steps(grid.N, cloud.size, cloud.dimension, snapshots, memory_cap)
    return _run(field, cloud, grid, grid.h / refinement, refinement, steps, workers, "reference")


def push_forward_histogram(table: TrajectoryTable, n: int, cell: float):
    """Bin the weighted points at step ``n`` into cubes of side ``cell``.

    Returns ``(cells, counts, masses)``: integer cell coordinates (sorted),
    point counts and summed weights per occupied cell.  Bins are unbounded,
    so no point is ever dropped.
    """
    if not cell > 0:
        raise ValueError("histogram cell size must be positive")
    if table.cloud.size == 0 or len(table.steps) == 0:
        raise ValueError("empty trajectory table")
    x = table.at_step(n)
    keys = np.floor(x / cell).astype(np.int64)
    cells, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    masses = np.bincount(inverse, weights=table.cloud.weights, minlength=len(cells))
    return cells, counts, masses


def compressibility_estimate(table: TrajectoryTable, n: int, histogram_dx: float) -> float:
    """Estimated compressibility constant of the flow at step ``n``.

    Largest histogram cell density of the pushed-forward cloud measure,
    divided by the uniform density of the cloud on ``B_R(0)``.
    """
    _, counts, masses = push_forward_histogram(table, n, histogram_dx)
    if int(counts.sum()) != table.cloud.size:
        raise AssertionError("histogram lost points")
    uniform = math.fsum(table.cloud.weights) / table.cloud.volume
    return float(masses.max() / histogram_dx**table.cloud.dimension / uniform)
