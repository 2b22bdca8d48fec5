"""Self-contained SVG emission for accuracy curves and weight histograms.

No plotting dependency: charts are assembled as plain SVG text. Line charts
show one polyline per series (accuracy vs. epoch, legend per tag); bar charts
render binned counts.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")

_W, _H = 860, 520
_ML, _MR, _MT, _MB = 70, 180, 40, 55  # margins: right one holds the legend


def _ticks(lo: float, hi: float, count: int = 6) -> list:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def _chart_frame(title: str, x_label: str, y_label: str,
                 x_lo, x_hi, y_lo, y_hi):
    """Common background, axes, and tick grid; returns (parts, to_px)."""
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def to_px(x, y):
        px = _ML + (x - x_lo) / (x_hi - x_lo) * pw if x_hi > x_lo else _ML
        py = _MT + ph - (y - y_lo) / (y_hi - y_lo) * ph if y_hi > y_lo else _MT + ph
        return px, py

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_ML}" y="24" font-family="sans-serif" font-size="16">'
        f'{escape(title)}</text>',
    ]
    for tx in _ticks(x_lo, x_hi):
        px, _ = to_px(tx, y_lo)
        parts.append(f'<line x1="{px:.1f}" y1="{_MT}" x2="{px:.1f}" '
                     f'y2="{_MT + ph}" stroke="#dddddd"/>')
        parts.append(f'<text x="{px:.1f}" y="{_MT + ph + 18}" font-family="sans-serif" '
                     f'font-size="11" text-anchor="middle">{tx:g}</text>')
    for ty in _ticks(y_lo, y_hi):
        _, py = to_px(x_lo, ty)
        parts.append(f'<line x1="{_ML}" y1="{py:.1f}" x2="{_ML + pw}" '
                     f'y2="{py:.1f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{_ML - 8}" y="{py + 4:.1f}" font-family="sans-serif" '
                     f'font-size="11" text-anchor="end">{ty:.3g}</text>')
    parts.append(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" '
                 f'fill="none" stroke="#444444"/>')
    parts.append(f'<text x="{_ML + pw / 2:.1f}" y="{_H - 14}" font-family="sans-serif" '
                 f'font-size="13" text-anchor="middle">{escape(x_label)}</text>')
    parts.append(f'<text x="20" y="{_MT + ph / 2:.1f}" font-family="sans-serif" '
                 f'font-size="13" text-anchor="middle" '
                 f'transform="rotate(-90 20 {_MT + ph / 2:.1f})">{escape(y_label)}</text>')
    return parts, to_px


def _legend(parts: list, labels: list) -> None:
    x = _W - _MR + 14
    for i, label in enumerate(labels):
        y = _MT + 14 + 18 * i
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 22}" y2="{y - 4}" '
                     f'stroke="{color}" stroke-width="2.5"/>')
        parts.append(f'<text x="{x + 28}" y="{y}" font-family="sans-serif" '
                     f'font-size="11">{escape(label)}</text>')


def line_chart(series: list, title: str = "", x_label: str = "epoch",
               y_label: str = "accuracy") -> str:
    """Polyline chart for [(label, [(x, y), ...]), ...]; one point per row."""
    if not series or all(not pts for _, pts in series):
        raise ValueError("line chart needs at least one non-empty series")
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts]
    parts, to_px = _chart_frame(title, x_label, y_label,
                                min(xs), max(xs), min(0.0, min(ys)), max(1.0, max(ys)))
    for i, (label, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{to_px(x, y)[0]:.2f},{to_px(x, y)[1]:.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
    _legend(parts, [label for label, _ in series])
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(series: list, title: str = "", x_label: str = "weight value",
              y_label: str = "count") -> str:
    """Bars for [(label, [(lo, hi, count), ...]), ...] on a shared bin grid."""
    if not series or all(not bars for _, bars in series):
        raise ValueError("bar chart needs at least one non-empty series")
    lo = min(b[0] for _, bars in series for b in bars)
    hi = max(b[1] for _, bars in series for b in bars)
    top = max(b[2] for _, bars in series for b in bars)
    parts, to_px = _chart_frame(title, x_label, y_label, lo, hi, 0.0, top * 1.05)
    for i, (label, bars) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        for blo, bhi, count in bars:
            x0, y0 = to_px(blo, count)
            x1, base = to_px(bhi, 0.0)
            parts.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" '
                         f'width="{max(x1 - x0, 0.5):.2f}" '
                         f'height="{max(base - y0, 0.0):.2f}" fill="{color}" '
                         f'fill-opacity="0.45"/>')
    _legend(parts, [label for label, _ in series])
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
