"""Minimal static SVG charts (grouped bars and line series)."""

from html import escape

WIDTH = 640
HEIGHT = 360
MARGIN = 56
PALETTE = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"]


def _num(x):
    return f"{x:.2f}"


def _frame(title, body, legend):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    parts += body
    for k, name in enumerate(legend):
        y = MARGIN + 14 * k
        color = PALETTE[k % len(PALETTE)]
        parts.append(f'<rect x="{WIDTH - MARGIN + 4}" y="{y - 8}" width="8" height="8" fill="{color}"/>')
        parts.append(
            f'<text x="{WIDTH - MARGIN + 14}" y="{y}" font-family="sans-serif" '
            f'font-size="9">{escape(str(name))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _scale(lo, hi):
    if hi == lo:
        hi = lo + 1.0
    plot_h = HEIGHT - 2 * MARGIN
    return lambda v: HEIGHT - MARGIN - (v - lo) / (hi - lo) * plot_h


def _axis_labels(lo, hi, ys):
    return [
        f'<text x="{MARGIN - 4}" y="{_num(ys(v) + 3)}" text-anchor="end" '
        f'font-family="sans-serif" font-size="9">{v:.3g}</text>'
        for v in (lo, (lo + hi) / 2, hi)
    ]


def bar_chart(title, groups, series):
    """``groups``: list of group labels; ``series``: ``{name: [value per group]}``.
    Draws one bar per series inside each group."""
    values = [v for vals in series.values() for v in vals]
    lo = min(0.0, min(values))
    hi = max(values)
    ys = _scale(lo, hi)
    plot_w = WIDTH - 2 * MARGIN
    group_w = plot_w / max(len(groups), 1)
    bar_w = group_w * 0.8 / max(len(series), 1)
    body = _axis_labels(lo, hi, ys)
    for g, label in enumerate(groups):
        x0 = MARGIN + g * group_w + group_w * 0.1
        for k, (name, vals) in enumerate(series.items()):
            top = ys(max(vals[g], 0.0))
            bottom = ys(min(vals[g], 0.0))
            body.append(
                f'<rect class="bar" x="{_num(x0 + k * bar_w)}" y="{_num(top)}" '
                f'width="{_num(bar_w * 0.9)}" height="{_num(bottom - top)}" '
                f'fill="{PALETTE[k % len(PALETTE)]}"><title>{escape(str(name))}: {vals[g]:.6g}</title></rect>'
            )
        body.append(
            f'<text x="{_num(x0 + group_w * 0.4)}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="9">{escape(str(label))}</text>'
        )
    return _frame(title, body, list(series))


def line_chart(title, xs, series):
    """One polyline per entry of ``series`` (``{name: [y per x]}``)."""
    values = [v for vals in series.values() for v in vals]
    lo, hi = min(values), max(values)
    ys = _scale(lo, hi)
    x_lo, x_hi = min(xs), max(xs)
    span = (x_hi - x_lo) or 1.0
    plot_w = WIDTH - 2 * MARGIN

    def px(x):
        return MARGIN + (x - x_lo) / span * plot_w

    body = _axis_labels(lo, hi, ys)
    for x in xs:
        body.append(
            f'<text x="{_num(px(x))}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="9">{x:g}</text>'
        )
    for k, (name, vals) in enumerate(series.items()):
        pts = " ".join(f"{_num(px(x))},{_num(ys(v))}" for x, v in zip(xs, vals))
        body.append(
            f'<polyline class="series" fill="none" stroke="{PALETTE[k % len(PALETTE)]}" '
            f'stroke-width="2" points="{pts}"><title>{escape(str(name))}</title></polyline>'
        )
    return _frame(title, body, list(series))
