"""CSV and SVG emission from persisted trial records.

The SVG is written by hand (no plotting library): outputs must regenerate
bit-identically from the study store alone, so every coordinate is formatted
with a fixed precision and no timestamps or generated ids are embedded.
"""

from __future__ import annotations

import csv

from .design import EnvDesign
from .search import nondominated_sort

WIDTH, HEIGHT = 640, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 36, 52

COLOR_FRONT = "#d62728"  # non-dominated
COLOR_DOMINATED = "#1f77b4"
COLOR_BASELINE = "#2ca02c"
COLOR_CROSS = "#444444"


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _bounds(values, pad_fraction=0.08):
    lo, hi = min(values), max(values)
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = (hi - lo) * pad_fraction
    return lo - pad, hi + pad


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


class _Scatter:
    def __init__(self, x_label, y_label, title):
        self.elements = []
        self.x_label = x_label
        self.y_label = y_label
        self.title = title
        self.x_range = (0.0, 1.0)
        self.y_range = (0.0, 1.0)

    def set_ranges(self, xs, ys):
        self.x_range = _bounds(xs)
        self.y_range = _bounds(ys)

    def _px(self, x):
        lo, hi = self.x_range
        return MARGIN_L + (x - lo) / (hi - lo) * (WIDTH - MARGIN_L - MARGIN_R)

    def _py(self, y):
        lo, hi = self.y_range
        return HEIGHT - MARGIN_B - (y - lo) / (hi - lo) * (HEIGHT - MARGIN_T - MARGIN_B)

    def point(self, x, y, color, r=4.0, opacity=0.85):
        self.elements.append(
            f'<circle cx="{_fmt(self._px(x))}" cy="{_fmt(self._py(y))}" r="{r}" '
            f'fill="{color}" fill-opacity="{opacity}"/>'
        )

    def cross(self, x, y, dx, dy, color):
        px, py = self._px(x), self._py(y)
        x0, x1 = self._px(x - dx), self._px(x + dx)
        y0, y1 = self._py(y - dy), self._py(y + dy)
        self.elements.append(
            f'<line x1="{_fmt(x0)}" y1="{_fmt(py)}" x2="{_fmt(x1)}" y2="{_fmt(py)}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        self.elements.append(
            f'<line x1="{_fmt(px)}" y1="{_fmt(y0)}" x2="{_fmt(px)}" y2="{_fmt(y1)}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )

    def polyline(self, xs, ys, color, width=1.8, dash=None):
        pts = " ".join(f"{_fmt(self._px(x))},{_fmt(self._py(y))}" for x, y in zip(xs, ys))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.elements.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{dash_attr}/>'
        )

    def render(self, legend) -> str:
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-family="sans-serif" '
            f'font-size="15">{self.title}</text>',
        ]
        ax_y = HEIGHT - MARGIN_B
        parts.append(
            f'<line x1="{MARGIN_L}" y1="{ax_y}" x2="{WIDTH - MARGIN_R}" y2="{ax_y}" stroke="black"/>'
        )
        parts.append(
            f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{ax_y}" stroke="black"/>'
        )
        for t in _ticks(*self.x_range):
            px = self._px(t)
            parts.append(f'<line x1="{_fmt(px)}" y1="{ax_y}" x2="{_fmt(px)}" y2="{ax_y + 5}" stroke="black"/>')
            parts.append(
                f'<text x="{_fmt(px)}" y="{ax_y + 20}" text-anchor="middle" font-family="sans-serif" '
                f'font-size="11">{_fmt(t)}</text>'
            )
        for t in _ticks(*self.y_range):
            py = self._py(t)
            parts.append(f'<line x1="{MARGIN_L - 5}" y1="{_fmt(py)}" x2="{MARGIN_L}" y2="{_fmt(py)}" stroke="black"/>')
            parts.append(
                f'<text x="{MARGIN_L - 8}" y="{_fmt(py + 4)}" text-anchor="end" font-family="sans-serif" '
                f'font-size="11">{_fmt(t)}</text>'
            )
        parts.append(
            f'<text x="{(MARGIN_L + WIDTH - MARGIN_R) / 2}" y="{HEIGHT - 12}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{self.x_label}</text>'
        )
        parts.append(
            f'<text x="16" y="{(MARGIN_T + ax_y) / 2}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="13" transform="rotate(-90 16 {(MARGIN_T + ax_y) / 2})">{self.y_label}</text>'
        )
        for i, (label, color) in enumerate(legend):
            y = MARGIN_T + 14 + 18 * i
            x = WIDTH - MARGIN_R - 170
            parts.append(f'<circle cx="{x}" cy="{y - 4}" r="4" fill="{color}"/>')
            parts.append(
                f'<text x="{x + 10}" y="{y}" font-family="sans-serif" font-size="12">{label}</text>'
            )
        parts.extend(self.elements)
        parts.append("</svg>")
        return "\n".join(parts)


def pareto_scatter_svg(trials, baseline_trials=(), title="Study results") -> str:
    """Scatter of all complete trials: non-dominated red, dominated blue,
    manual-design reference runs green, and a mean +/- std cross."""
    complete = [t for t in trials if t.point() is not None]
    base_complete = [t for t in baseline_trials if t.point() is not None]
    plot = _Scatter("invalid share", "mean error", title)
    points = [t.point() for t in complete]
    base_points = [t.point() for t in base_complete]
    all_pts = points + base_points
    if not all_pts:
        return plot.render([("no complete trials", COLOR_DOMINATED)])
    plot.set_ranges([p[0] for p in all_pts], [p[1] for p in all_pts])
    ranks = nondominated_sort(points)
    for (x, y), rank in sorted(zip(points, ranks)):
        plot.point(x, y, COLOR_FRONT if rank == 0 else COLOR_DOMINATED)
    for x, y in sorted(base_points):
        plot.point(x, y, COLOR_BASELINE)
    if len(points) >= 2:
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        mx = sum(xs) / len(xs)
        my = sum(ys) / len(ys)
        sx = (sum((x - mx) ** 2 for x in xs) / len(xs)) ** 0.5
        sy = (sum((y - my) ** 2 for y in ys) / len(ys)) ** 0.5
        plot.cross(mx, my, sx, sy, COLOR_CROSS)
    legend = [("non-dominated", COLOR_FRONT), ("dominated", COLOR_DOMINATED)]
    if base_points:
        legend.append(("manual baseline", COLOR_BASELINE))
    legend.append(("mean +/- std", COLOR_CROSS))
    return plot.render(legend)


CURVE_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def rolling_average(values, window: int = 2):
    """Trailing rolling mean; the first point averages only itself."""
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out.append(sum(values[lo : i + 1]) / (i + 1 - lo))
    return out


def learning_curves_svg(series, y_label, title="Verification learning curves") -> str:
    """``series``: list of (label, steps, values); values are smoothed with a
    two-point rolling average before drawing."""
    plot = _Scatter("training steps", y_label, title)
    xs_all, ys_all = [], []
    smoothed = []
    for label, xs, ys in series:
        sm = rolling_average(list(ys), 2)
        smoothed.append((label, list(xs), sm))
        xs_all.extend(xs)
        ys_all.extend(sm)
    if not xs_all:
        return plot.render([("no data", COLOR_DOMINATED)])
    plot.set_ranges(xs_all, ys_all)
    legend = []
    for i, (label, xs, ys) in enumerate(smoothed):
        color = CURVE_COLORS[i % len(CURVE_COLORS)]
        plot.polyline(xs, ys, color)
        for x, y in zip(xs, ys):
            plot.point(x, y, color, r=2.5)
        legend.append((label, color))
    return plot.render(legend)


def trials_to_csv(trials, path) -> None:
    """Flat per-trial table: metrics, spread, provenance, and all design variables."""
    design_names = list(EnvDesign().to_dict())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["trial_id", "status", "provenance", "invalid_share", "mean_error",
             "invalid_share_std", "mean_error_std", "wall_time"] + design_names
        )
        for t in trials:
            m = t.metrics
            s = t.metrics_std
            row = [
                t.trial_id,
                t.status,
                t.provenance,
                "" if m is None else _fmt(m.invalid_share),
                "" if m is None or m.mean_error is None else _fmt(m.mean_error),
                "" if s is None else _fmt(s.invalid_share),
                "" if s is None or s.mean_error is None else _fmt(s.mean_error),
                _fmt(t.wall_time),
            ]
            design = t.design.to_dict()
            row.extend(design[name] for name in design_names)
            writer.writerow(row)
