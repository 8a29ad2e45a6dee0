"""Minimal self-contained SVG line plots (no plotting runtime needed)."""

from __future__ import annotations

import numpy as np

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 40, 50


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min(s for s in (mag, 2 * mag, 5 * mag, 10 * mag) if s >= raw)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + step / 2, step)


def line_plot(path: str, x, series: dict, title: str = "", xlabel: str = "",
              ylabel: str = "", logx: bool = False, logy: bool = False) -> None:
    """Write one SVG with a polyline per entry of ``series``."""
    x = np.asarray(x, dtype=np.float64)
    tx = np.log10(x) if logx else x
    ys, tys = {}, {}
    for name, y in series.items():
        y = np.asarray(y, dtype=np.float64)
        ys[name] = y
        tys[name] = np.log10(np.maximum(y, 1e-300)) if logy else y
    all_y = np.concatenate([v for v in tys.values()]) if tys else np.array([0.0, 1.0])
    xlo, xhi = float(tx.min()), float(tx.max())
    ylo, yhi = float(np.nanmin(all_y)), float(np.nanmax(all_y))
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad

    def px(v):
        return _ML + (v - xlo) / (xhi - xlo) * (_W - _ML - _MR)

    def py(v):
        return _H - _MB - (v - ylo) / (yhi - ylo) * (_H - _MT - _MB)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="14" '
             f'font-family="sans-serif">{title}</text>']
    # axes
    parts.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
                 'stroke="black"/>')
    parts.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>')
    for t in _ticks(xlo, xhi):
        xp = px(t)
        lab = f"1e{t:.0f}" if logx else f"{t:.4g}"
        parts.append(f'<line x1="{xp:.1f}" y1="{_H - _MB}" x2="{xp:.1f}" y2="{_H - _MB + 4}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{xp:.1f}" y="{_H - _MB + 16}" text-anchor="middle" '
                     f'font-size="10" font-family="sans-serif">{lab}</text>')
    for t in _ticks(ylo, yhi):
        yp = py(t)
        lab = f"1e{t:.0f}" if logy else f"{t:.4g}"
        parts.append(f'<line x1="{_ML - 4}" y1="{yp:.1f}" x2="{_ML}" y2="{yp:.1f}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{_ML - 6}" y="{yp + 3:.1f}" text-anchor="end" font-size="10" '
                     f'font-family="sans-serif">{lab}</text>')
    parts.append(f'<text x="{_W / 2:.1f}" y="{_H - 12}" text-anchor="middle" font-size="12" '
                 f'font-family="sans-serif">{xlabel}</text>')
    parts.append(f'<text x="16" y="{_H / 2:.1f}" text-anchor="middle" font-size="12" '
                 f'font-family="sans-serif" transform="rotate(-90 16 {_H / 2:.1f})">{ylabel}</text>')
    for i, (name, _) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(tx, tys[name])
                       if np.isfinite(a) and np.isfinite(b))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = _MT + 14 * (i + 1)
        parts.append(f'<line x1="{_W - _MR - 110}" y1="{ly}" x2="{_W - _MR - 90}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_W - _MR - 85}" y="{ly + 4}" font-size="10" '
                     f'font-family="sans-serif">{name}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
