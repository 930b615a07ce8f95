"""Deterministic report rendering: CSV, Markdown, and a minimal SVG plotter.

Everything here is pure string generation: no timestamps, no locale, no
float formatting that could drift between runs, so identical inputs give
byte-identical files.

The *_REFERENCE constants are the benchmark figures reported by the
published study this pipeline reproduces. They are displayed next to
locally computed results for orientation and are never asserted against:
that study's corpus (140K market apps joined with antivirus verdicts) is
proprietary, so local numbers come from synthetic corpora.
"""

from __future__ import annotations

from typing import Optional, Sequence

# (model kind, malware fraction, detection threshold) ->
#   metric -> (train, test) as published.
GRID_REFERENCE: dict[tuple[str, float, int], dict[str, tuple[float, float]]] = {
    ("logistic", 0.02, 1): {"f1": (0.82, 0.11), "precision": (0.80, 0.07), "recall": (0.85, 0.22)},
    ("logistic", 0.25, 1): {"f1": (0.89, 0.62), "precision": (0.93, 0.61), "recall": (0.85, 0.63)},
    ("logistic", 0.50, 1): {"f1": (0.93, 0.75), "precision": (0.97, 0.91), "recall": (0.89, 0.64)},
    ("logistic", 0.02, 2): {"f1": (0.65, 0.23), "precision": (0.95, 0.27), "recall": (0.50, 0.19)},
    ("logistic", 0.25, 2): {"f1": (0.89, 0.70), "precision": (0.94, 0.67), "recall": (0.85, 0.74)},
    ("logistic", 0.50, 2): {"f1": (0.94, 0.83), "precision": (0.98, 0.90), "recall": (0.90, 0.76)},
    ("logistic", 0.02, 4): {"f1": (0.81, 0.29), "precision": (0.81, 0.22), "recall": (0.81, 0.42)},
    ("logistic", 0.25, 4): {"f1": (0.91, 0.76), "precision": (0.95, 0.72), "recall": (0.87, 0.79)},
    ("logistic", 0.50, 4): {"f1": (0.95, 0.86), "precision": (0.99, 0.86), "recall": (0.92, 0.86)},
    ("linear_svm", 0.02, 1): {"f1": (0.86, 0.08), "precision": (0.78, 0.05), "recall": (0.96, 0.23)},
    ("linear_svm", 0.25, 1): {"f1": (0.92, 0.67), "precision": (0.91, 0.62), "recall": (0.93, 0.71)},
    ("linear_svm", 0.50, 1): {"f1": (0.95, 0.81), "precision": (0.96, 0.88), "recall": (0.94, 0.76)},
    ("linear_svm", 0.02, 2): {"f1": (0.83, 0.18), "precision": (0.75, 0.11), "recall": (0.93, 0.38)},
    ("linear_svm", 0.25, 2): {"f1": (0.92, 0.70), "precision": (0.92, 0.62), "recall": (0.91, 0.80)},
    ("linear_svm", 0.50, 2): {"f1": (0.95, 0.85), "precision": (0.97, 0.89), "recall": (0.93, 0.81)},
    ("linear_svm", 0.02, 4): {"f1": (0.85, 0.27), "precision": (0.76, 0.18), "recall": (0.96, 0.53)},
    ("linear_svm", 0.25, 4): {"f1": (0.93, 0.76), "precision": (0.93, 0.69), "recall": (0.92, 0.84)},
    ("linear_svm", 0.50, 4): {"f1": (0.96, 0.87), "precision": (0.98, 0.87), "recall": (0.94, 0.88)},
    ("forest", 0.02, 1): {"f1": (0.99, 0.12), "precision": (0.99, 0.08), "recall": (0.99, 0.32)},
    ("forest", 0.25, 1): {"f1": (0.99, 0.73), "precision": (0.99, 0.70), "recall": (0.99, 0.76)},
    ("forest", 0.50, 1): {"f1": (0.99, 0.83), "precision": (0.99, 0.87), "recall": (0.99, 0.80)},
    ("forest", 0.02, 2): {"f1": (0.99, 0.22), "precision": (0.99, 0.15), "recall": (0.99, 0.45)},
    ("forest", 0.25, 2): {"f1": (0.99, 0.78), "precision": (0.99, 0.74), "recall": (0.99, 0.82)},
    ("forest", 0.50, 2): {"f1": (0.99, 0.87), "precision": (0.99, 0.89), "recall": (0.99, 0.85)},
    ("forest", 0.02, 4): {"f1": (0.99, 0.32), "precision": (0.99, 0.22), "recall": (0.99, 0.58)},
    ("forest", 0.25, 4): {"f1": (0.99, 0.82), "precision": (0.99, 0.77), "recall": (0.99, 0.86)},
    ("forest", 0.50, 4): {"f1": (0.99, 0.89), "precision": (0.99, 0.88), "recall": (0.99, 0.90)},
}

# (detection threshold, window start rank) -> (train F1, test F1) for the
# published forest robustness sweep over 15-feature windows.
WINDOW_REFERENCE: dict[tuple[int, int], tuple[float, float]] = {
    (1, 1): (0.99, 0.83), (1, 3): (0.99, 0.86), (1, 5): (0.99, 0.84),
    (1, 7): (0.99, 0.74), (1, 9): (0.96, 0.72), (1, 11): (0.88, 0.67),
    (1, 13): (0.80, 0.64),
    (2, 1): (0.99, 0.87), (2, 3): (0.99, 0.87), (2, 5): (0.99, 0.86),
    (2, 7): (0.99, 0.79), (2, 9): (0.96, 0.75), (2, 11): (0.88, 0.71),
    (2, 13): (0.75, 0.66),
    (4, 1): (0.99, 0.89), (4, 3): (0.99, 0.88), (4, 5): (0.99, 0.87),
    (4, 7): (0.99, 0.80), (4, 9): (0.96, 0.77), (4, 11): (0.89, 0.73),
    (4, 13): (0.77, 0.69),
}

MODEL_LABELS = {
    "logistic": "Logistic Regression",
    "linear_svm": "Linear SVM",
    "forest": "Random Forest",
}


def fmt(value) -> str:
    """Stable cell formatting: full-precision repr for floats."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def fmt4(value: Optional[float]) -> str:
    """Markdown-friendly 4-decimal formatting."""
    if value is None or value != value:
        return "-"
    return f"{value:.4f}"


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def markdown_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(" --- " for _ in header) + "|")
    for row in rows:
        lines.append("| " + " | ".join(str(c) for c in row) + " |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_PALETTE = ("#1b6ca8", "#c84b31", "#2d6a4f", "#7b2d8b", "#b8860b", "#444444", "#008b8b")

_W, _H = 720, 440
_ML, _MR, _MT, _MB = 70, 30, 44, 56  # margins around the plot area


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _tick_label(v: float) -> str:
    return f"{v:g}" if abs(v) >= 1e-4 or v == 0 else f"{v:.1e}"


def svg_line_chart(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str,
    x_label: str,
    y_label: str,
    y_range: Optional[tuple[float, float]] = None,
    log_x: bool = False,
) -> str:
    """Multi-series line chart as a standalone SVG document string.

    Coordinates are rounded to 0.01 px so output bytes are stable.
    """
    import math

    def tx(x: float) -> float:
        return math.log2(x) if log_x else x

    xs_all = [tx(x) for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    if y_range is not None:
        y_lo, y_hi = y_range
    else:
        y_lo, y_hi = min(ys_all), max(ys_all)
        pad = 0.05 * (y_hi - y_lo or 1.0)
        y_lo, y_hi = y_lo - pad, y_hi + pad
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(x: float) -> float:
        return round(_ML + (tx(x) - x_lo) / (x_hi - x_lo) * pw, 2)

    def py(y: float) -> float:
        return round(_MT + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph, 2)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="24" text-anchor="middle" font-size="15">{title}</text>',
    ]
    # Axes and grid.
    for v in _ticks(y_lo, y_hi):
        y = py(v)
        parts.append(
            f'<line x1="{_ML}" y1="{y}" x2="{_W - _MR}" y2="{y}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_ML - 8}" y="{y + 4}" text-anchor="end" font-size="11">'
            f"{_tick_label(v)}</text>"
        )
    x_tick_vals: list[float]
    if log_x:
        lo_p, hi_p = math.ceil(x_lo - 1e-9), math.floor(x_hi + 1e-9)
        x_tick_vals = [float(2**p) for p in range(int(lo_p), int(hi_p) + 1)]
    else:
        x_tick_vals = _ticks(x_lo, x_hi)
    for v in x_tick_vals:
        x = px(v) if not log_x else round(_ML + (math.log2(v) - x_lo) / (x_hi - x_lo) * pw, 2)
        parts.append(
            f'<line x1="{x}" y1="{_MT}" x2="{x}" y2="{_H - _MB}" '
            f'stroke="#eeeeee" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x}" y="{_H - _MB + 18}" text-anchor="middle" font-size="11">'
            f"{_tick_label(v)}</text>"
        )
    parts.append(
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" '
        f'fill="none" stroke="#333333" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{_ML + pw / 2}" y="{_H - 14}" text-anchor="middle" font-size="12">'
        f"{x_label}</text>"
    )
    parts.append(
        f'<text x="18" y="{_MT + ph / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {_MT + ph / 2})">{y_label}</text>'
    )
    # Series.
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x)},{py(y)}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{px(x)}" cy="{py(y)}" r="3" fill="{color}"/>')
        ly = _MT + 10 + 16 * i
        parts.append(
            f'<line x1="{_W - _MR - 130}" y1="{ly}" x2="{_W - _MR - 106}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{_W - _MR - 100}" y="{ly + 4}" font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
