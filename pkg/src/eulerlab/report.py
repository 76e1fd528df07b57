"""Deterministic JSON/CSV output and a small native SVG log-log plot."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

__all__ = ["to_jsonable", "dumps_json", "write_json", "write_csv", "loglog_svg"]


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays, tuples and non-finite floats."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps_json(obj))
    return path


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


# ---------------------------------------------------------------------------
# SVG

_W, _H = 640, 480
_ML, _MR, _MT, _MB = 80, 20, 30, 60


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def loglog_svg(
    h,
    errors,
    bounds=None,
    slope: float | None = None,
    intercept: float | None = None,
    title: str = "",
) -> str:
    """Errors against step size on log-log axes.

    Draws the measured errors, the fitted power law, an ``h^(1/2)`` guide
    through the largest-h error, and the error bound curve when given.
    """
    h = np.asarray(h, float)
    err = np.asarray(errors, float)
    series = [v for v in err if v > 0]
    if bounds is not None:
        series += [v for v in bounds if v > 0]
    if not series:
        series = [1.0]
    x_lo, x_hi = math.floor(np.log10(h.min())), math.ceil(np.log10(h.max()))
    y_lo, y_hi = math.floor(np.log10(min(series))), math.ceil(np.log10(max(series)))
    if x_hi == x_lo:
        x_hi += 1
    if y_hi == y_lo:
        y_hi += 1

    def px(v):
        return _ML + (math.log10(v) - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def py(v):
        return _H - _MB - (math.log10(v) - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{_W / 2}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
    ]
    for e in range(x_lo, x_hi + 1):
        x = px(10.0**e)
        out.append(f'<line x1="{_fmt(x)}" y1="{_MT}" x2="{_fmt(x)}" y2="{_H - _MB}" stroke="#ddd"/>')
        out.append(f'<text x="{_fmt(x)}" y="{_H - _MB + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">1e{e}</text>')
    for e in range(y_lo, y_hi + 1):
        y = py(10.0**e)
        out.append(f'<line x1="{_ML}" y1="{_fmt(y)}" x2="{_W - _MR}" y2="{_fmt(y)}" stroke="#ddd"/>')
        out.append(f'<text x="{_ML - 6}" y="{_fmt(y + 4)}" text-anchor="end" font-family="sans-serif" font-size="11">1e{e}</text>')
    out.append(f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" fill="none" stroke="black"/>')
    out.append(f'<text x="{_W / 2}" y="{_H - 15}" text-anchor="middle" font-family="sans-serif" font-size="12">step size h</text>')
    out.append(
        f'<text x="18" y="{_H / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {_H / 2})">L^p error</text>'
    )

    def polyline(xs, ys, style):
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(xs, ys) if b > 0)
        return f'<polyline points="{pts}" fill="none" {style}/>'

    hs = np.sort(h)
    if bounds is not None:
        order = np.argsort(h)
        out.append(polyline(h[order], np.asarray(bounds, float)[order], 'stroke="#c33" stroke-width="1.5"'))
    if slope is not None and intercept is not None:
        fit = np.exp(intercept) * hs**slope
        out.append(polyline(hs, fit, 'stroke="#36c" stroke-width="1.5"'))
    pos = err > 0
    if pos.any():
        k = int(np.argmax(np.where(pos, h, -np.inf)))
        guide = err[k] * (hs / h[k]) ** 0.5
        out.append(polyline(hs, guide, 'stroke="#888" stroke-dasharray="6,4"'))
    for a, b in zip(h, err):
        if b > 0:
            out.append(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="4" fill="black"/>')

    legend = [("#000", "measured error"), ("#36c", "least-squares fit"), ("#888", "h^1/2 guide")]
    if bounds is not None:
        legend.append(("#c33", "error bound"))
    for k, (color, label) in enumerate(legend):
        y = _MT + 16 + 16 * k
        out.append(f'<line x1="{_ML + 10}" y1="{y}" x2="{_ML + 30}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_ML + 36}" y="{y + 4}" font-family="sans-serif" font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
