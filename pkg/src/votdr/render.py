"""CSV and SVG output for analyzed traces.

Both writers are deterministic: the same inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .analysis import REFLECTIVE, AnalysisReport, LogTrace

CSV_COLUMNS = ("bin_start_ns", "distance_m", "counts", "prob_per_pulse", "corrected_prob", "log5_db")


def _g(x: float) -> str:
    return f"{x:.9g}"


def trace_csv(log_trace: LogTrace) -> str:
    """Rows per bin. ``distance_m`` is taken at the bin center; ``log5_db``
    is blank where the log trace holds the ``-inf`` sentinel."""
    tr = log_trace.trace
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    starts = tr.bin_starts * 1e9
    for i in range(len(tr)):
        v = log_trace.values[i]
        w.writerow(
            (
                _g(starts[i]),
                _g(log_trace.distance[i]),
                int(tr.counts[i]),
                _g(tr.prob[i]),
                _g(tr.corrected[i]),
                f"{v:.9f}" if math.isfinite(v) else "",
            )
        )
    return buf.getvalue()


def emit_trace_csv(log_trace: LogTrace, path) -> None:
    Path(path).write_text(trace_csv(log_trace), encoding="utf-8")


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Columns of a trace CSV as arrays; blank ``log5_db`` cells become ``-inf``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError("unexpected CSV header")
    body = rows[1:]
    out = {}
    for j, name in enumerate(CSV_COLUMNS):
        col = [r[j] for r in body]
        if name == "counts":
            out[name] = np.array([int(c) for c in col], dtype=np.int64)
        elif name == "log5_db":
            out[name] = np.array([float(c) if c else -np.inf for c in col])
        else:
            out[name] = np.array([float(c) for c in col])
    return out


_W, _H = 900, 500
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _nice_step(span: float, target: int = 8) -> float:
    raw = span / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for m in (1, 2, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def _decimate(x, y, columns: int):
    """Min and max per pixel column, in x order, so spikes survive."""
    if len(x) <= 2 * columns:
        return x, y
    edges = np.linspace(x[0], x[-1], columns + 1)
    col = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, columns - 1)
    xs, ys = [], []
    starts = np.flatnonzero(np.r_[True, col[1:] != col[:-1]])
    ends = np.r_[starts[1:], len(x)]
    for a, b in zip(starts, ends):
        seg = y[a:b]
        i_min, i_max = a + int(np.argmin(seg)), a + int(np.argmax(seg))
        for i in sorted({i_min, i_max}):
            xs.append(x[i])
            ys.append(y[i])
    return np.array(xs), np.array(ys)


def svg_document(log_trace: LogTrace, report: AnalysisReport | None = None, title: str = "") -> str:
    """Log trace against distance in km, with the fit line and event markers."""
    ok = log_trace.finite
    x = log_trace.distance[ok] / 1e3
    y = log_trace.values[ok]
    pw, ph = _W - _ML - _MR, _H - _MT - _MB
    if len(x) == 0:
        x0, x1, y0, y1 = 0.0, 1.0, -1.0, 1.0
    else:
        x0, x1 = float(x.min()), float(x.max())
        y0, y1 = float(y.min()), float(y.max())
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return _ML + (v - x0) / (x1 - x0) * pw

    def py(v):
        return _MT + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    step = _nice_step(x1 - x0)
    for t in np.arange(math.ceil(x0 / step) * step, x1 + 1e-9, step):
        X = px(t)
        out.append(f'<line x1="{X:.2f}" y1="{_MT + ph}" x2="{X:.2f}" y2="{_MT + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{_MT + ph + 18}" text-anchor="middle">{t:g}</text>')
    step = _nice_step(y1 - y0)
    for t in np.arange(math.ceil(y0 / step) * step, y1 + 1e-9, step):
        Y = py(t)
        out.append(f'<line x1="{_ML - 5}" y1="{Y:.2f}" x2="{_ML}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8}" y="{Y + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{_ML + pw / 2:.1f}" y="{_H - 12}" text-anchor="middle">Distance (km)</text>')
    out.append(
        f'<text x="16" y="{_MT + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MT + ph / 2:.1f})">5 log10(N/N0) (dB)</text>'
    )
    if title:
        out.append(f'<text x="{_ML}" y="{_MT - 10}">{_escape(title)}</text>')

    xd, yd = _decimate(x, y, pw)
    if len(xd):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xd, yd))
        out.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="0.8" points="{pts}"/>')

    if report is not None:
        if report.fit_region is not None and math.isfinite(report.slope):
            a, b = (v / 1e3 for v in report.fit_region)
            ya, yb = report.intercept + report.slope * a, report.intercept + report.slope * b
            out.append(
                f'<line x1="{px(a):.2f}" y1="{py(ya):.2f}" x2="{px(b):.2f}" y2="{py(yb):.2f}" '
                'stroke="#c0392b" stroke-dasharray="6,4"/>'
            )
        for e in report.events:
            X = px(e.position / 1e3)
            colour = "#27ae60" if e.kind == REFLECTIVE else "#8e44ad"
            out.append(
                f'<line x1="{X:.2f}" y1="{_MT}" x2="{X:.2f}" y2="{_MT + ph}" '
                f'stroke="{colour}" stroke-width="0.6"/>'
            )
        out.append(
            f'<text x="{_ML + pw - 4}" y="{_MT + 14}" text-anchor="end">'
            f"slope {report.slope:.4f} dB/km, DR {report.dynamic_range:.2f} dB</text>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(log_trace: LogTrace, report: AnalysisReport | None, path, title: str = "") -> None:
    Path(path).write_text(svg_document(log_trace, report, title), encoding="utf-8")
