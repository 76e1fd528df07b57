"""Regular grids carrying scalar or vector node values.

Both grid types share one geometry: an origin (lower corner), a single
spacing used on every axis, and a node array in C order.  Values are
interpolated multilinearly inside the bounding box and extended by zero
outside it.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ScalarGrid",
    "GridField",
    "GridError",
    "grid_from_function",
    "save_grid",
    "load_grid",
]

# relative distance to a node below which a query snaps onto it
_SNAP = 1e-9
_BINARY_MAGIC = b"EULGRID1"


class GridError(ValueError):
    """Malformed grid geometry, payload or file."""


def _frozen_array(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def _multilinear(origin, spacing, values, points):
    """Multilinear interpolation with zero extension.

    ``values`` has shape ``grid_shape + payload_shape``; the result has shape
    ``(n,) + payload_shape``.
    """
    d = origin.size
    shape = np.array(values.shape[:d])
    payload = values.shape[d:]
    pts = np.asarray(points, dtype=float).reshape(-1, d)
    t = (pts - origin) / spacing
    r = np.rint(t)
    t = np.where(np.abs(t - r) <= _SNAP * np.maximum(1.0, np.abs(r)), r, t)
    inside = np.all((t >= 0) & (t <= shape - 1), axis=1)
    out = np.zeros((pts.shape[0],) + payload)
    if not inside.any():
        return out
    ti = t[inside]
    lower = np.clip(np.floor(ti).astype(np.int64), 0, np.maximum(shape - 2, 0))
    frac = ti - lower
    acc = np.zeros((ti.shape[0],) + payload)
    for corner in itertools.product((0, 1), repeat=d):
        c = np.array(corner)
        idx = np.minimum(lower + c, shape - 1)
        w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        node_vals = values[tuple(idx.T)]
        acc += w.reshape((-1,) + (1,) * len(payload)) * node_vals
    out[inside] = acc
    return out


@dataclass(frozen=True, eq=False)
class _RegularGrid:
    origin: np.ndarray
    spacing: float
    values: np.ndarray

    _payload_ndim = 0

    def __post_init__(self):
        origin = _frozen_array(np.atleast_1d(self.origin))
        if origin.ndim != 1 or origin.size == 0:
            raise GridError("origin must be a non-empty 1-D coordinate vector")
        spacing = float(self.spacing)
        if not np.isfinite(spacing) or spacing <= 0:
            raise GridError(f"spacing must be positive and finite, got {self.spacing!r}")
        values = _frozen_array(self.values)
        if values.ndim != origin.size + self._payload_ndim:
            raise GridError(
                f"values of ndim {values.ndim} do not match dimension {origin.size}"
            )
        if values.size == 0:
            raise GridError("grid has no nodes")
        if not np.all(np.isfinite(values)):
            raise GridError("grid values must be finite")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "values", values)

    @property
    def dimension(self) -> int:
        return self.origin.size

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[: self.dimension]

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.shape) - 1)

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.origin.copy(), self.upper

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dimension

    def axes(self) -> list[np.ndarray]:
        return [self.origin[k] + self.spacing * np.arange(n) for k, n in enumerate(self.shape)]

    def node_coordinates(self) -> np.ndarray:
        """Coordinates of every node, shape ``grid_shape + (d,)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_norms(self) -> np.ndarray:
        return np.linalg.norm(self.node_coordinates(), axis=-1)

    def interpolate(self, points) -> np.ndarray:
        return _multilinear(self.origin, self.spacing, self.values, points)

    def contains_ball(self, radius: float, center=None) -> bool:
        c = np.zeros(self.dimension) if center is None else np.asarray(center, float)
        slack = _SNAP * self.spacing
        return bool(np.all(self.origin - slack <= c - radius) and np.all(c + radius <= self.upper + slack))

    def same_geometry(self, other: "_RegularGrid") -> bool:
        return (
            self.shape == other.shape
            and self.spacing == other.spacing
            and np.array_equal(self.origin, other.origin)
        )


@dataclass(frozen=True, eq=False)
class ScalarGrid(_RegularGrid):
    """Scalar node values on a regular grid, zero outside the box."""

    _payload_ndim = 0

    def with_values(self, values) -> "ScalarGrid":
        return ScalarGrid(self.origin, self.spacing, values)


@dataclass(frozen=True, eq=False)
class GridField(_RegularGrid):
    """Vector node values (one ``d``-vector per node) on a regular grid."""

    _payload_ndim = 1

    def __post_init__(self):
        super().__post_init__()
        if self.values.shape[-1] != self.dimension:
            raise GridError(
                f"vector payload has {self.values.shape[-1]} components, expected {self.dimension}"
            )

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=-1)))

    def magnitude(self) -> ScalarGrid:
        return ScalarGrid(self.origin, self.spacing, np.linalg.norm(self.values, axis=-1))


def grid_from_function(func, lower, upper, spacing, vector=False):
    """Sample ``func`` (mapping ``(n, d)`` points to values) on the nodes of a box."""
    lower = np.atleast_1d(np.asarray(lower, float))
    upper = np.atleast_1d(np.asarray(upper, float))
    counts = np.rint((upper - lower) / spacing).astype(int) + 1
    if np.any(counts < 1):
        raise GridError("empty box")
    axes = [lower[k] + spacing * np.arange(n) for k, n in enumerate(counts)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lower.size)
    vals = np.asarray(func(pts), dtype=float)
    if vector:
        return GridField(lower, spacing, vals.reshape(tuple(counts) + (lower.size,)))
    return ScalarGrid(lower, spacing, vals.reshape(tuple(counts)))


# ---------------------------------------------------------------------------
# serialization: CSV with a commented header, or a compact binary


def _header(grid) -> dict:
    return {
        "kind": "vector" if isinstance(grid, GridField) else "scalar",
        "d": grid.dimension,
        "shape": list(grid.shape),
        "origin": [float(v) for v in grid.origin],
        "spacing": grid.spacing,
        "interpolation": "multilinear",
    }


def _from_header(header: dict, flat: np.ndarray):
    try:
        d = int(header["d"])
        shape = tuple(int(n) for n in header["shape"])
        kind = header["kind"]
        origin = np.array(header["origin"], float)
        spacing = float(header["spacing"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GridError(f"bad grid header: {exc}") from exc
    if header.get("interpolation", "multilinear") != "multilinear":
        raise GridError(f"unsupported interpolation {header['interpolation']!r}")
    if kind == "vector":
        return GridField(origin, spacing, flat.reshape(shape + (d,)))
    if kind == "scalar":
        return ScalarGrid(origin, spacing, flat.reshape(shape))
    raise GridError(f"unknown grid kind {kind!r}")


def save_grid(grid, path) -> Path:
    """Write ``grid`` as ``.csv`` (text) or any other suffix (binary)."""
    path = Path(path)
    header = _header(grid)
    if path.suffix.lower() == ".csv":
        buf = io.StringIO()
        buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        rows = grid.values.reshape(int(np.prod(grid.shape)), -1)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
        path.write_text(buf.getvalue())
    else:
        blob = json.dumps(header, sort_keys=True).encode()
        payload = np.ascontiguousarray(grid.values, dtype="<f8").tobytes()
        path.write_bytes(_BINARY_MAGIC + struct.pack("<I", len(blob)) + blob + payload)
    return path


def load_grid(path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        lines = path.read_text().splitlines()
        if not lines or not lines[0].startswith("#"):
            raise GridError(f"{path}: missing header line")
        header = json.loads(lines[0][1:])
        rows = [list(map(float, r)) for r in csv.reader(lines[1:]) if r]
        return _from_header(header, np.array(rows, float).ravel())
    raw = path.read_bytes()
    if not raw.startswith(_BINARY_MAGIC):
        raise GridError(f"{path}: not a grid file")
    off = len(_BINARY_MAGIC)
    (hlen,) = struct.unpack("<I", raw[off : off + 4])
    header = json.loads(raw[off + 4 : off + 4 + hlen])
    flat = np.frombuffer(raw[off + 4 + hlen :], dtype="<f8").astype(float)
    return _from_header(header, flat)
