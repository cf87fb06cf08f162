"""Figure rendering: sweep curves and embedding scatters as deterministic SVG.

The SVG is emitted directly (no plotting dependency) so identical inputs
produce byte-identical files, which makes the reports diffable and testable.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datasets import DataError
from .sweep import aggregate, detect_interpolation_threshold, locate_test_error_peak, \
    read_records_csv

WIDTH, HEIGHT = 800, 500
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 24, 36, 64

CLASS_COLORS = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

_KINDS = {
    "error": (("train_error", "#1f77b4"), ("test_error", "#d62728"),
              ("kp_in_sample", "#2ca02c"), ("kp_out_of_sample", "#9467bd")),
    "loss": (("train_loss", "#1f77b4"), ("test_loss", "#d62728")),
    "kp": (("kp_in_sample", "#2ca02c"), ("kp_out_of_sample", "#9467bd")),
}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        ]

    def line(self, x1, y1, x2, y2, stroke="#333333", width=1.0, dash=""):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{stroke}" stroke-width="{width}"{extra}/>'
        )

    def polyline(self, points, stroke, width=2.0):
        path = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        self.parts.append(
            f'<polyline points="{path}" fill="none" stroke="{stroke}" stroke-width="{width}"/>'
        )

    def circle(self, cx, cy, r, fill, cls="", stroke=""):
        tag = f' class="{cls}"' if cls else ""
        pen = f' stroke="{stroke}" stroke-width="1.5"' if stroke else ""
        self.parts.append(
            f'<circle{tag} cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" fill="{fill}"{pen}/>'
        )

    def star(self, cx, cy, r, fill, cls=""):
        pts = []
        for i in range(10):
            radius = r if i % 2 == 0 else 0.4 * r
            angle = -np.pi / 2 + i * np.pi / 5
            pts.append((cx + radius * np.cos(angle), cy + radius * np.sin(angle)))
        path = "M " + " L ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in pts) + " Z"
        tag = f' class="{cls}"' if cls else ""
        self.parts.append(f'<path{tag} d="{path}" fill="{fill}"/>')

    def text(self, x, y, s, size=12, anchor="start", color="#222222"):
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}" fill="{color}">{s}</text>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _x_mapper(widths, x_log):
    values = np.log10(widths) if x_log else np.asarray(widths, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    span = (hi - lo) or 1.0
    inner = WIDTH - MARGIN_L - MARGIN_R

    def to_px(w):
        v = np.log10(w) if x_log else w
        return MARGIN_L + (v - lo) / span * inner

    return to_px


def _y_mapper(ymax):
    inner = HEIGHT - MARGIN_T - MARGIN_B

    def to_px(v):
        return HEIGHT - MARGIN_B - v / ymax * inner

    return to_px


def render_curves(sweep_csv, out_path, kind: str = "error", x_log: bool = True,
                  epsilon: float = 0.005) -> None:
    """Line plot of per-width mean metrics from a sweep results CSV."""
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {tuple(_KINDS)}, got {kind!r}")
    try:
        records = read_records_csv(sweep_csv)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if not records:
        raise DataError(f"{sweep_csv}: no result rows to plot")
    rows = aggregate(records)
    widths = [r.width_k for r in rows]

    series = []
    for metric, color in _KINDS[kind]:
        values = [r.mean[metric] for r in rows]
        if all(v is None for v in values):
            continue
        if any(v is None for v in values):
            raise DataError(f"metric {metric} is present for only part of the sweep")
        series.append((metric, color, values))
    if not series:
        raise DataError(f"no columns available for plot kind {kind!r}")

    ymax = 1.0 if kind != "loss" else max(v for _, _, vals in series for v in vals) * 1.05
    to_x = _x_mapper(widths, x_log)
    to_y = _y_mapper(ymax)

    canvas = _Canvas()
    axis_y = HEIGHT - MARGIN_B
    canvas.line(MARGIN_L, MARGIN_T, MARGIN_L, axis_y)
    canvas.line(MARGIN_L, axis_y, WIDTH - MARGIN_R, axis_y)
    for width in widths:
        x = to_x(width)
        canvas.line(x, axis_y, x, axis_y + 5)
        canvas.text(x, axis_y + 18, str(width), size=10, anchor="middle")
    for tick in np.linspace(0.0, ymax, 6):
        y = to_y(tick)
        canvas.line(MARGIN_L - 5, y, MARGIN_L, y)
        canvas.text(MARGIN_L - 9, y + 4, f"{tick:.3g}", size=10, anchor="end")
    canvas.text((MARGIN_L + WIDTH - MARGIN_R) / 2, HEIGHT - 18,
                "width k" + (" (log scale)" if x_log else ""), anchor="middle")

    threshold = detect_interpolation_threshold(
        widths, [r.mean["train_error"] for r in rows], epsilon
    ) if all(r.mean["train_error"] is not None for r in rows) else None
    if threshold is not None:
        x = to_x(threshold)
        canvas.line(x, MARGIN_T, x, axis_y, stroke="#888888", dash="6,4")
        canvas.text(x + 4, MARGIN_T + 12, f"interpolation threshold k={threshold}", size=11,
                    color="#555555")
        peak = locate_test_error_peak(widths, [r.mean["test_error"] for r in rows], threshold)
        if peak is not None and kind == "error":
            px, pv = peak
            canvas.circle(to_x(px), to_y(pv), 5, "none", stroke="#b22222")
            canvas.text(to_x(px) + 6, to_y(pv) - 6, f"peak k={px}", size=11, color="#b22222")

    for metric, color, values in series:
        canvas.polyline([(to_x(w), to_y(v)) for w, v in zip(widths, values)], stroke=color)

    legend_x = WIDTH - MARGIN_R - 180
    for i, (metric, color, _) in enumerate(series):
        y = MARGIN_T + 10 + 18 * i
        canvas.line(legend_x, y, legend_x + 26, y, stroke=color, width=3)
        canvas.text(legend_x + 32, y + 4, metric, size=11)

    Path(out_path).write_text(canvas.render(), encoding="ascii")


def _read_embedding_csv(path):
    lines = [ln for ln in Path(path).read_text(encoding="ascii").splitlines() if ln]
    header = "sample_id,x,y,true_label,assigned_label,is_noisy"
    if not lines or lines[0] != header:
        raise DataError(f"{path}: expected embedding header {header!r}")
    rows = []
    for line in lines[1:]:
        sid, x, y, true, assigned, noisy = line.split(",")
        rows.append((int(sid), float(x), float(y), int(true), int(assigned), int(noisy)))
    if not rows:
        raise DataError(f"{path}: no embedding rows to plot")
    return rows


def render_tsne(embedding_csv, out_path) -> None:
    """Scatter an embedding: clean points as circles, noisy points as stars,
    both colored by true class."""
    rows = _read_embedding_csv(embedding_csv)
    xs = np.array([r[1] for r in rows])
    ys = np.array([r[2] for r in rows])
    span_x = (xs.max() - xs.min()) or 1.0
    span_y = (ys.max() - ys.min()) or 1.0
    inner_w = WIDTH - MARGIN_L - MARGIN_R
    inner_h = HEIGHT - MARGIN_T - MARGIN_B

    canvas = _Canvas()
    for sid, x, y, true, assigned, noisy in rows:
        px = MARGIN_L + (x - xs.min()) / span_x * inner_w
        py = MARGIN_T + (1.0 - (y - ys.min()) / span_y) * inner_h
        color = CLASS_COLORS[true % len(CLASS_COLORS)]
        if noisy:
            canvas.star(px, py, 6.0, color, cls="noisy")
        else:
            canvas.circle(px, py, 3.0, color, cls="clean")

    seen = sorted({r[3] for r in rows})
    for i, label in enumerate(seen):
        y = MARGIN_T + 12 + 16 * i
        canvas.circle(WIDTH - MARGIN_R - 70, y - 4, 4, CLASS_COLORS[label % len(CLASS_COLORS)])
        canvas.text(WIDTH - MARGIN_R - 60, y, f"class {label}", size=11)

    Path(out_path).write_text(canvas.render(), encoding="ascii")
