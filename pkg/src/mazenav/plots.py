"""Tiny deterministic SVG plotting helpers.

Hand-rolled on purpose: output bytes depend only on the inputs, so a rerun
of the pipeline reproduces every artifact exactly.
"""
from __future__ import annotations

from . import maze as mz

WIDTH = 640
HEIGHT = 400
MARGIN = 52
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0:
        span = 1.0
    return [out_lo + (v - lo) * (out_hi - out_lo) / span for v in vals]


def _frame(title: str, body: list[str]) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="15">{title}</text>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def line_chart(series: dict[str, tuple[list, list]], title: str, xlabel: str, ylabel: str) -> str:
    """series: name -> (xs, ys). Returns SVG text."""
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    if not all_x:
        return _frame(title, ['<text x="320" y="200" text-anchor="middle">no data</text>'])
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    left, right, top, bottom = MARGIN, WIDTH - 20, 40, HEIGHT - MARGIN
    body = [
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="{(left + right) // 2}" y="{HEIGHT - 12}" text-anchor="middle">{xlabel}</text>',
        f'<text x="14" y="{(top + bottom) // 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {(top + bottom) // 2})">{ylabel}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        ypix = bottom - frac * (bottom - top)
        body.append(
            f'<text x="{left - 6}" y="{_fmt(ypix + 4)}" text-anchor="end">{_fmt(yv)}</text>'
        )
        xv = x_lo + frac * (x_hi - x_lo)
        xpix = left + frac * (right - left)
        body.append(
            f'<text x="{_fmt(xpix)}" y="{bottom + 16}" text-anchor="middle">{_fmt(xv)}</text>'
        )
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        px = _scale(xs, x_lo, x_hi, left, right)
        py = _scale(ys, y_lo, y_hi, bottom, top)
        points = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(px, py))
        body.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        body.append(
            f'<text x="{right - 4}" y="{40 + 16 * i}" text-anchor="end" fill="{color}">{name}</text>'
        )
    return _frame(title, body)


def bar_chart(labels: list[str], values: list[float], title: str, ylabel: str) -> str:
    left, right, top, bottom = MARGIN, WIDTH - 20, 40, HEIGHT - MARGIN
    v_hi = max(values) if values and max(values) > 0 else 1.0
    n = max(len(values), 1)
    slot = (right - left) / n
    body = [
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="14" y="{(top + bottom) // 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {(top + bottom) // 2})">{ylabel}</text>',
    ]
    for i, (label, v) in enumerate(zip(labels, values)):
        h = (bottom - top) * v / v_hi
        x = left + i * slot + slot * 0.15
        body.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(bottom - h)}" width="{_fmt(slot * 0.7)}" '
            f'height="{_fmt(h)}" fill="{PALETTE[0]}"/>'
        )
        body.append(
            f'<text x="{_fmt(x + slot * 0.35)}" y="{bottom + 16}" text-anchor="middle">{label}</text>'
        )
        body.append(
            f'<text x="{_fmt(x + slot * 0.35)}" y="{_fmt(bottom - h - 4)}" '
            f'text-anchor="middle">{_fmt(v)}</text>'
        )
    return _frame(title, body)


def graph_figure(
    maze: mz.MazeMap,
    entry_cells: list[tuple[int, int]],
    edges: list[tuple[int, int]],
    title: str,
) -> str:
    """Memory graph drawn over the maze occupancy grid; node j sits at the
    logged cell of buffer entry j."""
    h, w = maze.occupancy.shape
    cell = min((WIDTH - 2 * MARGIN) / w, (HEIGHT - 80) / h)
    ox, oy = MARGIN, 40

    def cx(x):
        return ox + (x + 0.5) * cell

    def cy(y):
        return oy + (y + 0.5) * cell

    body = []
    for y in range(h):
        for x in range(w):
            if maze.occupancy[y, x]:
                body.append(
                    f'<rect x="{_fmt(ox + x * cell)}" y="{_fmt(oy + y * cell)}" '
                    f'width="{_fmt(cell)}" height="{_fmt(cell)}" fill="#444"/>'
                )
    for a, b in sorted(edges):
        if a < len(entry_cells) and b < len(entry_cells):
            xa, ya = entry_cells[a]
            xb, yb = entry_cells[b]
            body.append(
                f'<line x1="{_fmt(cx(xa))}" y1="{_fmt(cy(ya))}" x2="{_fmt(cx(xb))}" '
                f'y2="{_fmt(cy(yb))}" stroke="{PALETTE[1]}" stroke-width="1"/>'
            )
    for j, (x, y) in enumerate(entry_cells):
        body.append(
            f'<circle cx="{_fmt(cx(x))}" cy="{_fmt(cy(y))}" r="{_fmt(cell * 0.25)}" '
            f'fill="{PALETTE[0]}"/>'
        )
        body.append(
            f'<text x="{_fmt(cx(x))}" y="{_fmt(cy(y) - cell * 0.3)}" '
            f'text-anchor="middle" font-size="9">{j}</text>'
        )
    return _frame(title, body)
