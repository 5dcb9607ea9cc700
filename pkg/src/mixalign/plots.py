"""Hand-rolled SVG figures: curves, bars, heatmaps, scatter.

No plotting library: every emitter is a pure function from numbers to an
SVG string with fixed float formatting, so identical inputs give identical
bytes. Every figure embeds a provenance comment (config digest, seeds)
right after the opening tag.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb")

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 64, 20, 34, 46  # margins: left, right, top, bottom


def _fmt(x) -> str:
    out = format(float(x), ".6g")
    return "0" if out == "-0" else out


def _esc(text) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def _open(width, height, provenance):
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
    )
    if provenance:
        head += f"<!-- {_esc(provenance)} -->\n"
    head += f'<rect width="{width}" height="{height}" fill="white"/>\n'
    return head


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _axes(x_lo, x_hi, y_lo, y_hi, x_label, y_label):
    """Axis frame, ticks, labels; returns (svg text, x map, y map)."""
    def sx(v):
        return _ML + (v - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def sy(v):
        return _H - _MB - (v - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    out = [f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
           f'height="{_H - _MT - _MB}" fill="none" stroke="#999"/>']
    for v in _ticks(x_lo, x_hi):
        x = _fmt(sx(v))
        out.append(f'<line x1="{x}" y1="{_H - _MB}" x2="{x}" y2="{_H - _MB + 4}" stroke="#999"/>')
        out.append(f'<text x="{x}" y="{_H - _MB + 16}" font-size="10" '
                   f'text-anchor="middle">{_fmt(v)}</text>')
    for v in _ticks(y_lo, y_hi):
        y = _fmt(sy(v))
        out.append(f'<line x1="{_ML - 4}" y1="{y}" x2="{_ML}" y2="{y}" stroke="#999"/>')
        out.append(f'<text x="{_ML - 7}" y="{y}" font-size="10" text-anchor="end" '
                   f'dominant-baseline="middle">{_fmt(v)}</text>')
    out.append(f'<text x="{(_ML + _W - _MR) // 2}" y="{_H - 8}" font-size="12" '
               f'text-anchor="middle">{_esc(x_label)}</text>')
    out.append(f'<text x="14" y="{(_MT + _H - _MB) // 2}" font-size="12" '
               f'text-anchor="middle" transform="rotate(-90 14 {(_MT + _H - _MB) // 2})">'
               f'{_esc(y_label)}</text>')
    return "\n".join(out) + "\n", sx, sy


def svg_kl_curves(curves, y_label, title="", provenance="") -> str:
    """Overlaid step-vs-value lines; curves is [(label, [(step, value), ...]), ...]."""
    if not curves:
        raise ContractError("no curves to plot")
    for label, pts in curves:
        if not pts:
            raise ContractError(f"curve {label!r} is empty")
    xs = [s for _, pts in curves for s, _ in pts]
    ys = [v for _, pts in curves for _, v in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    pad = 0.05 * (y_hi - y_lo or 1.0)
    frame, sx, sy = _axes(x_lo, x_hi or 1, y_lo - pad, y_hi + pad, "step", y_label)
    body = [frame]
    for i, (label, pts) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        path = " ".join(f"{_fmt(sx(s))},{_fmt(sy(v))}" for s, v in pts)
        body.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for s, v in pts:
            body.append(f'<circle cx="{_fmt(sx(s))}" cy="{_fmt(sy(v))}" r="2.5" fill="{color}"/>')
        ly = _MT + 14 + 14 * i
        body.append(f'<line x1="{_W - _MR - 130}" y1="{ly - 4}" x2="{_W - _MR - 110}" '
                    f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{_W - _MR - 105}" y="{ly}" font-size="11">{_esc(label)}</text>')
    if title:
        body.append(f'<text x="{_W // 2}" y="20" font-size="13" text-anchor="middle">'
                    f'{_esc(title)}</text>')
    return _open(_W, _H, provenance) + "\n".join(body) + "\n</svg>\n"


def svg_weight_bars(series, domain_labels, title="", provenance="") -> str:
    """Grouped bars: series is [(series_label, values), ...] over the domains."""
    if not series:
        raise ContractError("no weight series to plot")
    k = len(domain_labels)
    for label, values in series:
        if len(values) != k:
            raise ContractError(f"series {label!r} has {len(values)} values for {k} domains")
    y_hi = max(max(v) for _, v in series)
    frame, sx, sy = _axes(0, k, 0, y_hi * 1.1 or 1.0, "domain", "weight")
    body = [frame]
    n = len(series)
    group = (_W - _ML - _MR) / k
    bar = group * 0.8 / n
    for i, (label, values) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        for j, v in enumerate(values):
            x = _ML + j * group + group * 0.1 + i * bar
            y = sy(v)
            body.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(bar)}" '
                        f'height="{_fmt(_H - _MB - y)}" fill="{color}"/>')
        ly = _MT + 14 + 14 * i
        body.append(f'<rect x="{_W - _MR - 130}" y="{ly - 9}" width="10" height="10" '
                    f'fill="{color}"/>')
        body.append(f'<text x="{_W - _MR - 115}" y="{ly}" font-size="11">{_esc(label)}</text>')
    for j, name in enumerate(domain_labels):
        x = _fmt(_ML + (j + 0.5) * group)
        body.append(f'<text x="{x}" y="{_H - _MB + 28}" font-size="10" '
                    f'text-anchor="middle">{_esc(name)}</text>')
    if title:
        body.append(f'<text x="{_W // 2}" y="20" font-size="13" text-anchor="middle">'
                    f'{_esc(title)}</text>')
    return _open(_W, _H, provenance) + "\n".join(body) + "\n</svg>\n"


def _heat_color(t: float) -> str:
    """White through blue to near-black; t in [0, 1]."""
    stops = ((255, 255, 255), (68, 119, 170), (20, 30, 60))
    t = min(max(t, 0.0), 1.0) * (len(stops) - 1)
    i = min(int(t), len(stops) - 2)
    f = t - i
    rgb = tuple(round(a + (b - a) * f) for a, b in zip(stops[i], stops[i + 1]))
    return f"rgb({rgb[0]},{rgb[1]},{rgb[2]})"


def svg_heatmap(matrix, row_labels, col_labels, title="", provenance="") -> str:
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (len(row_labels), len(col_labels)):
        raise ContractError(f"matrix {m.shape} does not match labels "
                            f"({len(row_labels)}, {len(col_labels)})")
    if not np.all(np.isfinite(m)):
        raise ContractError("heatmap values must be finite")
    lo, hi = float(m.min()), float(m.max())
    span = hi - lo
    rows, cols = m.shape
    side = min((_W - _ML - _MR) / cols, (_H - _MT - _MB) / rows)
    x0, y0 = _ML, _MT
    body = []
    for i in range(rows):
        for j in range(cols):
            t = 0.0 if span == 0 else (m[i, j] - lo) / span
            x, y = x0 + j * side, y0 + i * side
            body.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(side)}" '
                        f'height="{_fmt(side)}" fill="{_heat_color(t)}" stroke="#ddd" '
                        f'stroke-width="0.5"/>')
            if side >= 28:
                text_color = "#000" if t < 0.55 else "#fff"
                body.append(f'<text x="{_fmt(x + side / 2)}" y="{_fmt(y + side / 2)}" '
                            f'font-size="9" fill="{text_color}" text-anchor="middle" '
                            f'dominant-baseline="middle">{_fmt(round(m[i, j], 4))}</text>')
    for i, name in enumerate(row_labels):
        body.append(f'<text x="{x0 - 5}" y="{_fmt(y0 + (i + 0.5) * side)}" font-size="9" '
                    f'text-anchor="end" dominant-baseline="middle">{_esc(name)}</text>')
    for j, name in enumerate(col_labels):
        body.append(f'<text x="{_fmt(x0 + (j + 0.5) * side)}" y="{y0 - 5}" font-size="9" '
                    f'text-anchor="middle">{_esc(name)}</text>')
    if title:
        body.append(f'<text x="{_W // 2}" y="16" font-size="13" text-anchor="middle">'
                    f'{_esc(title)}</text>')
    # color scale reference
    body.append(f'<text x="{_W - _MR}" y="{_H - 10}" font-size="9" text-anchor="end">'
                f'{_fmt(lo)} (white) to {_fmt(hi)} (dark)</text>')
    return _open(_W, _H, provenance) + "\n".join(body) + "\n</svg>\n"


def svg_model_map(coords, point_labels, title="", provenance="", explained=None) -> str:
    """2-D scatter of model positions; coords is (M, 2)."""
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] != len(point_labels):
        raise ContractError(f"coords shape {pts.shape} does not fit {len(point_labels)} labels")
    x_lo, x_hi = float(pts[:, 0].min()), float(pts[:, 0].max())
    y_lo, y_hi = float(pts[:, 1].min()), float(pts[:, 1].max())
    x_pad = 0.08 * (x_hi - x_lo or 1.0)
    y_pad = 0.08 * (y_hi - y_lo or 1.0)
    frame, sx, sy = _axes(x_lo - x_pad, x_hi + x_pad, y_lo - y_pad, y_hi + y_pad,
                          "component 1", "component 2")
    body = [frame]
    # color by run id prefix so one run's checkpoints share a color
    prefixes = []
    for label in point_labels:
        p = label.split("@")[0]
        if p not in prefixes:
            prefixes.append(p)
    for i, label in enumerate(point_labels):
        color = PALETTE[prefixes.index(label.split("@")[0]) % len(PALETTE)]
        x, y = _fmt(sx(pts[i, 0])), _fmt(sy(pts[i, 1]))
        body.append(f'<circle cx="{x}" cy="{y}" r="3.5" fill="{color}"/>')
        body.append(f'<text x="{_fmt(float(x) + 5)}" y="{y}" font-size="8">{_esc(label)}</text>')
    if explained is not None and len(explained) >= 2:
        body.append(f'<text x="{_W - _MR}" y="{_H - 8}" font-size="9" text-anchor="end">'
                    f'spectrum: {_fmt(explained[0])}, {_fmt(explained[1])}</text>')
    if title:
        body.append(f'<text x="{_W // 2}" y="20" font-size="13" text-anchor="middle">'
                    f'{_esc(title)}</text>')
    return _open(_W, _H, provenance) + "\n".join(body) + "\n</svg>\n"
