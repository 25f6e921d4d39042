"""Minimal log-log SVG plots: axes, data polylines, least-squares fits and a legend."""
from __future__ import annotations

import math

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 640, 440
ML, MR, MT, MB = 70, 170, 40, 55


def _decades(lo, hi):
    return list(range(math.floor(lo), math.ceil(hi) + 1))


def loglog_svg(series, title="", xlabel="", ylabel="", fit=True):
    """SVG text for ``series``: a mapping name -> (x values, y values)."""
    pts = {k: (np.asarray(x, float), np.asarray(y, float)) for k, (x, y) in series.items()}
    pos = [(x > 0) & (y > 0) for x, y in pts.values()]
    allx = np.concatenate([np.log10(x[m]) for (x, _), m in zip(pts.values(), pos)])
    ally = np.concatenate([np.log10(y[m]) for (_, y), m in zip(pts.values(), pos)])
    x0, x1 = math.floor(allx.min()), math.ceil(allx.max())
    y0, y1 = math.floor(ally.min()), math.ceil(ally.max())
    x1 = max(x1, x0 + 1)
    y1 = max(y1, y0 + 1)

    def sx(v):
        return ML + (v - x0) / (x1 - x0) * (W - ML - MR)

    def sy(v):
        return H - MB - (v - y0) / (y1 - y0) * (H - MT - MB)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>']
    out.append(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="black"/>')
    for d in _decades(x0, x1):
        X = sx(d)
        out.append(f'<line x1="{X:.1f}" y1="{H - MB}" x2="{X:.1f}" y2="{H - MB + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.1f}" y="{H - MB + 18}" text-anchor="middle">1e{d}</text>')
    for d in _decades(y0, y1):
        Y = sy(d)
        out.append(f'<line x1="{ML - 5}" y1="{Y:.1f}" x2="{ML}" y2="{Y:.1f}" stroke="black"/>')
        out.append(f'<text x="{ML - 8}" y="{Y + 4:.1f}" text-anchor="end">1e{d}</text>')
    if title:
        out.append(f'<text x="{(W - MR + ML) / 2:.1f}" y="22" text-anchor="middle" font-size="14">{title}</text>')
    if xlabel:
        out.append(f'<text x="{(W - MR + ML) / 2:.1f}" y="{H - 12}" text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{(H - MB + MT) / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(H - MB + MT) / 2:.1f})">{ylabel}</text>')
    for k, ((name, (x, y)), m) in enumerate(zip(pts.items(), pos)):
        c = _COLORS[k % len(_COLORS)]
        lx, ly = np.log10(x[m]), np.log10(y[m])
        path = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(lx, ly))
        out.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        for a, b in zip(lx, ly):
            out.append(f'<circle cx="{sx(a):.1f}" cy="{sy(b):.1f}" r="3" fill="{c}"/>')
        label = name
        if fit and len(lx) >= 2:
            slope, icpt = np.polyfit(lx, ly, 1)
            a, b = lx.min(), lx.max()
            out.append(f'<line x1="{sx(a):.1f}" y1="{sy(slope * a + icpt):.1f}" x2="{sx(b):.1f}" '
                       f'y2="{sy(slope * b + icpt):.1f}" stroke="{c}" stroke-dasharray="4 3"/>')
            label = f"{name} (slope {slope:.2f})"
        ty = MT + 16 + 18 * k
        out.append(f'<line x1="{W - MR + 10}" y1="{ty - 4}" x2="{W - MR + 30}" y2="{ty - 4}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{W - MR + 35}" y="{ty}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_loglog(path, series, **kwargs):
    with open(path, "w") as fh:
        fh.write(loglog_svg(series, **kwargs))
