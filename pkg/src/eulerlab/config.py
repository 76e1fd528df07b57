"""Experiment configuration: an INI file with one section per concern.

Every key has a type and a default (see ``SCHEMA``); ``auto`` stands for
"derive it".  Example::

    [field]
    kind = power
    alpha = 0.5

    [study]
    kind = convergence
    R = 1.0
    T = 1.0
    p = 2.0
    h_sweep = 2^-4, 2^-5, 2^-6, 2^-7, 2^-8, 2^-9, 2^-10
    refinement = 1024

Lists are comma separated; ``2^-4`` style powers are accepted wherever a
float is.  :meth:`ExperimentConfig.to_text` writes the canonical form,
which parses back to an identical config.
"""
from __future__ import annotations

import configparser
import copy
import re
from dataclasses import dataclass, field
from pathlib import Path

from .fields import FIELD_KINDS
from .integrator import tiles
from .maximal import family_half_width, family_spacing
from .sampling import DEFAULT_SEED

__all__ = ["ExperimentConfig", "Diagnostic", "ConfigError", "SCHEMA", "STUDY_KINDS", "validate"]

STUDY_KINDS = ("convergence", "compressibility", "maximal_checks", "constants_only")

# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "field": {
        "kind": ("str", "power"),
        "dimension": ("int", 1),
        "alpha": ("float", 0.5),
        "cap": ("float", 1.0),
        "rate": ("float", -1.0),
        "value": ("floats", [1.0]),
        "matrix": ("floats", []),
        "width": ("float", 0.1),
        "spacing": ("float", 1 / 64),
        "extent": ("float", 2.0),
    },
    "study": {
        "kind": ("str", "convergence"),
        "R": ("float", 1.0),
        "T": ("float", 1.0),
        "t0": ("float", 0.0),
        "p": ("float", 2.0),
        "h_sweep": ("floats", [2.0**-k for k in range(4, 11)]),
        "refinement": ("int", 1024),
        "cloud_size": ("int", 8192),
        "seed": ("int", DEFAULT_SEED),
        "slope_threshold": ("float", 0.45),
        "r2_threshold": ("float", 0.98),
        "reference_budget": ("float", 0.05),
        "per_step": ("bool", False),
        "memory_cap": ("int", 2**25),
    },
    "constants": {
        "kappa_min": ("float", 1e-6),
        "lam": ("optfloat", None),
        "osl_pairs": ("int", 4096),
        "sup_samples": ("int", 4096),
        "grid_nodes": ("int", 257),
        "radii_count": ("optint", None),
        "max_pairs": ("int", 20000),
        "histogram_dx": ("float", 0.1),
        "compress_snapshots": ("int", 16),
    },
    "compressibility": {
        "h": ("float", 2.0**-6),
        "refinement": ("int", 16),
        "histogram_dx": ("float", 0.1),
        "snapshots": ("int", 8),
        "expected": ("optfloat", None),
        "tolerance": ("float", 0.1),
    },
    "maximal": {
        "dimension": ("int", 1),
        "nodes": ("int", 513),
        "extent": ("float", 4.0),
        "lam": ("float", 1.0),
        "rho": ("float", 1.0),
        "p_values": ("floats", [1.5, 2.0, 3.0]),
        "spike_levels": ("int", 7),
        "radii_count": ("optint", None),
        "max_pairs": ("int", 50000),
    },
    "output": {
        "dir": ("str", "out"),
        "svg": ("bool", True),
    },
}

_POWER = re.compile(r"^\s*([-+]?[0-9.]+)\s*\^\s*([-+]?[0-9.]+)\s*$")


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    key: str
    message: str
    source: str = "<config>"
    line: int | None = None

    def __str__(self):
        where = f"{self.source}:{self.line}" if self.line else self.source
        return f"{where}: {self.key}: {self.message}"


def _float(text: str) -> float:
    m = _POWER.match(text)
    if m:
        return float(m.group(1)) ** float(m.group(2))
    return float(text)


def _parse(kind: str, text: str):
    text = text.strip()
    if kind == "str":
        return text
    if kind == "int":
        return int(text, 0)
    if kind == "float":
        return _float(text)
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "floats":
        return [_float(t) for t in text.split(",") if t.strip()]
    if kind == "optfloat":
        return None if text.lower() in ("auto", "none", "") else _float(text)
    if kind == "optint":
        return None if text.lower() in ("auto", "none", "") else int(text, 0)
    raise AssertionError(kind)


def _format(kind: str, value) -> str:
    if value is None:
        return "auto"
    if kind in ("float", "optfloat"):
        return repr(float(value))
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {s: {k: copy.deepcopy(d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})
    source: str = "<config>"
    lines: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def set(self, dotted: str, text: str) -> None:
        """Override ``section.key`` from its text form (as on the command line)."""
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError([Diagnostic(dotted, "unknown key", "<command line>")])
        kind = SCHEMA[section][key][0]
        try:
            self.values[section][key] = _parse(kind, text)
        except ValueError as exc:
            raise ConfigError([Diagnostic(dotted, f"bad {kind} value {text!r}: {exc}", "<command line>")]) from None

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        cfg = cls(source=source)
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError([Diagnostic("<file>", str(exc).splitlines()[0], source, getattr(exc, "lineno", None))]) from None
        cfg.lines = _line_index(text)
        problems = []
        for section in parser.sections():
            if section not in SCHEMA:
                problems.append(Diagnostic(section, "unknown section", source, cfg.lines.get((section, None))))
                continue
            for key, raw in parser.items(section):
                line = cfg.lines.get((section, key))
                if key not in SCHEMA[section]:
                    problems.append(Diagnostic(f"{section}.{key}", "unknown key", source, line))
                    continue
                kind = SCHEMA[section][key][0]
                try:
                    cfg.values[section][key] = _parse(kind, raw)
                except ValueError as exc:
                    problems.append(Diagnostic(f"{section}.{key}", f"bad {kind} value {raw!r}: {exc}", source, line))
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), source=str(path))

    def to_text(self) -> str:
        out = []
        for section, keys in SCHEMA.items():
            out.append(f"[{section}]")
            for key, (kind, _) in keys.items():
                out.append(f"{key} = {_format(kind, self.values[section][key])}")
            out.append("")
        return "\n".join(out)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    def diag(self, dotted: str, message: str) -> Diagnostic:
        section, _, key = dotted.partition(".")
        return Diagnostic(dotted, message, self.source, self.lines.get((section, key)))


def _line_index(text: str) -> dict:
    lines = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            lines[(section, None)] = no
        elif section and "=" in stripped and not stripped.startswith(("#", ";")):
            lines[(section, stripped.split("=", 1)[0].strip())] = no
    return lines


def validate(cfg: ExperimentConfig) -> list[Diagnostic]:
    """Every violated precondition of the configured study, one diagnostic each."""
    out: list[Diagnostic] = []
    f, st, cs, cp, mx = cfg["field"], cfg["study"], cfg["constants"], cfg["compressibility"], cfg["maximal"]
    bad = lambda key, msg: out.append(cfg.diag(key, msg))  # noqa: E731
    kind = st["kind"]
    if kind not in STUDY_KINDS:
        bad("study.kind", f"must be one of {', '.join(STUDY_KINDS)}, got {kind!r}")

    needs_field = kind in ("convergence", "compressibility", "constants_only")
    if needs_field:
        if f["kind"] not in FIELD_KINDS:
            bad("field.kind", f"must be one of {', '.join(FIELD_KINDS)}, got {f['kind']!r}")
        if f["dimension"] < 1:
            bad("field.dimension", "must be a positive integer")
        if f["kind"] == "power":
            if f["dimension"] != 1:
                bad("field.dimension", "the power field is one-dimensional")
            if not 0 < f["alpha"] < 1:
                bad("field.alpha", "must lie in (0, 1) for the power field")
            if not f["cap"] > 0:
                bad("field.cap", "must be positive")
        if f["kind"] == "rotation":
            if f["dimension"] != 2:
                bad("field.dimension", "the rotation field is two-dimensional")
            if not 0 < f["alpha"] <= 1:
                bad("field.alpha", "must lie in (0, 1] for the rotation field")
        if f["kind"] == "convolution":
            if not 0 < f["alpha"] < 1:
                bad("field.alpha", "must lie in (0, 1) for the convolution field")
            if not (f["width"] > 0 and f["spacing"] > 0 and f["extent"] > 0):
                bad("field.spacing", "width, spacing and extent must be positive")
        if f["kind"] == "constant" and len(f["value"]) != f["dimension"]:
            bad("field.value", f"needs {f['dimension']} components, got {len(f['value'])}")
        if f["kind"] == "affine":
            if len(f["matrix"]) != f["dimension"] ** 2:
                bad("field.matrix", f"needs {f['dimension'] ** 2} entries (row-major), got {len(f['matrix'])}")
            if len(f["value"]) not in (0, f["dimension"]):
                bad("field.value", f"offset needs {f['dimension']} components, got {len(f['value'])}")
        if not st["R"] > 0:
            bad("study.R", "must be positive")
        if not st["T"] > st["t0"]:
            bad("study.T", "must exceed study.t0")
        if st["cloud_size"] < 1:
            bad("study.cloud_size", "must be at least 1")
    if st["seed"] < 0:
        bad("study.seed", "must be nonnegative")

    if kind in ("convergence", "constants_only"):
        if not st["p"] > 1:
            bad("study.p", "must exceed 1: the maximal-function L^p bound behind the error constants fails at p = 1")
        if cs["grid_nodes"] < 17:
            bad("constants.grid_nodes", "must be at least 17")
        for key in ("osl_pairs", "sup_samples", "max_pairs", "compress_snapshots"):
            if cs[key] < 1:
                bad(f"constants.{key}", "must be at least 1")
        if not cs["kappa_min"] > 0:
            bad("constants.kappa_min", "must be positive (the closed-form bound divides by 2*kappa)")
        if cs["lam"] is not None and not cs["lam"] > 0:
            bad("constants.lam", "must be positive or auto")
        if cs["radii_count"] is not None and cs["radii_count"] < 1:
            bad("constants.radii_count", "must be positive or auto")
        if not cs["histogram_dx"] > 0:
            bad("constants.histogram_dx", "must be positive")

    if kind == "convergence":
        hs = st["h_sweep"]
        if len(set(hs)) < 3:
            bad("study.h_sweep", f"needs at least 3 distinct step sizes, got {len(set(hs))}")
        for h in hs:
            if not tiles(st["t0"], st["T"], h):
                bad("study.h_sweep", f"h={h!r} does not tile [t0, T] = [{st['t0']!r}, {st['T']!r}]: (T - t0)/h must be an integer")
        if st["refinement"] < 64:
            bad("study.refinement", f"must be at least 64, got {st['refinement']}")
        elif st["refinement"] % 2:
            bad("study.refinement", "must be even (the reference check halves it)")
        if not 0 < st["reference_budget"]:
            bad("study.reference_budget", "must be positive")
        if not 0 <= st["r2_threshold"] <= 1:
            bad("study.r2_threshold", "must lie in [0, 1]")

    if kind == "compressibility":
        if not tiles(st["t0"], st["T"], cp["h"]):
            bad("compressibility.h", f"h={cp['h']!r} does not tile [t0, T]: (T - t0)/h must be an integer")
        if cp["refinement"] < 1:
            bad("compressibility.refinement", "must be at least 1")
        if not cp["histogram_dx"] > 0:
            bad("compressibility.histogram_dx", "must be positive")
        if cp["snapshots"] < 1:
            bad("compressibility.snapshots", "must be at least 1")
        if cp["expected"] is not None and not cp["tolerance"] > 0:
            bad("compressibility.tolerance", "must be positive")

    if kind == "maximal_checks":
        if mx["dimension"] not in (1, 2, 3):
            bad("maximal.dimension", "must be 1, 2 or 3")
        if mx["nodes"] < 3 or not mx["extent"] > 0:
            bad("maximal.nodes", "needs at least 3 nodes and a positive extent")
        else:
            spacing = family_spacing(mx["nodes"], mx["extent"])
            if not mx["lam"] >= spacing:
                bad("maximal.lam", f"must be at least the grid spacing {spacing!r} (a smaller ball holds no other node)")
            half = family_half_width(mx["nodes"], mx["extent"])
            if half < mx["rho"] + mx["lam"]:
                bad(
                    "maximal.extent",
                    f"grid half-width {half!r} (spacing {spacing!r}, a power of two) must contain the ball of radius rho + lam",
                )
        if not mx["rho"] > 0:
            bad("maximal.rho", "must be positive")
        for p in mx["p_values"]:
            if not p > 1:
                bad("maximal.p_values", f"p={p!r}: the L^p bound for the maximal function needs p > 1; the bound is false for p=1")
        if mx["spike_levels"] < 2:
            bad("maximal.spike_levels", "must be at least 2")
        if mx["radii_count"] is not None and mx["radii_count"] < 1:
            bad("maximal.radii_count", "must be positive or auto")
    return out
