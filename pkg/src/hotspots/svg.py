"""Minimal deterministic SVG output: domain overlays and line plots."""
from __future__ import annotations

import math

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(v):
    return f"{v:.4f}"


class _Canvas:
    def __init__(self, lo, hi, width=640, pad=20, flip=True, height=None):
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        span = np.maximum(self.hi - self.lo, 1e-12)
        self.sx = (width - 2 * pad) / span[0]
        self.sy = self.sx if height is None else (height - 2 * pad) / span[1]
        self.w = width
        self.h = int(math.ceil(span[1] * self.sy + 2 * pad)) if height is None else height
        self.pad = pad
        self.flip = flip
        self.items = []

    def xy(self, p):
        p = np.asarray(p, float)
        x = self.pad + (p[..., 0] - self.lo[0]) * self.sx
        y = self.pad + (p[..., 1] - self.lo[1]) * self.sy
        if self.flip:
            y = self.h - y
        return x, y

    def polyline(self, pts, color, width=1.0, closed=False, dash=None):
        x, y = self.xy(pts)
        coords = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(x, y))
        tag = "polygon" if closed else "polyline"
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<{tag} points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def circle(self, p, color, r=3.0):
        x, y = self.xy(np.asarray(p, float))
        self.items.append(f'<circle cx="{_f(float(x))}" cy="{_f(float(y))}" r="{r}" fill="{color}"/>')

    def text(self, x, y, s, size=11, anchor="start"):
        self.items.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" '
                          f'font-family="sans-serif">{_escape(s)}</text>')

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">')
        return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *self.items, "</svg>"]) + "\n"


def _escape(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def domain_svg(domain, curves=(), points=None, width=640):
    """Domain boundary coloured by tag, optional level curves and marked points.

    ``curves`` is a sequence of ``(LevelCurve, colour)`` pairs; ``points`` maps
    labels to coordinates.
    """
    tag_color = {"dirichlet_d": "#d62728", "left_ell": "#2ca02c", "side_s": "#1f77b4", "neumann_other": "#333333"}
    v = domain.vertices
    pad = 0.05 * float(np.ptp(v, axis=0).max())
    cv = _Canvas(v.min(0) - pad, v.max(0) + pad, width)
    for (i, j), t in zip(domain.edges, domain.tags):
        cv.polyline(v[[i, j]], tag_color[t], 1.5)
    for curve, color in curves:
        for ch in curve.chains:
            cv.polyline(ch, color, 1.0, dash="4,2")
    for k, (label, p) in enumerate(sorted((points or {}).items())):
        cv.circle(p, PALETTE[k % len(PALETTE)])
        x, y = cv.xy(np.asarray(p, float))
        cv.text(float(x) + 5, float(y) - 5, label)
    return cv.render()


def line_plot_svg(series, xlabel="", ylabel="", logy=False, title="", width=640, height=400):
    """Line plot of ``{label: (x, y)}`` with optional log-scaled y axis."""
    data = []
    for label in sorted(series):
        x, y = (np.asarray(a, float) for a in series[label])
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
        y = np.log10(y) if logy else y
        data.append((label, x[ok], np.where(ok, y, 0.0)[ok]))
    allx = np.concatenate([d[1] for d in data]) if data else np.zeros(1)
    ally = np.concatenate([d[2] for d in data]) if data else np.zeros(1)
    if allx.size == 0:
        allx = ally = np.zeros(1)
    lo = np.array([allx.min(), ally.min()])
    hi = np.array([allx.max(), ally.max()])
    hi = np.where(hi > lo, hi, lo + 1.0)
    cv = _Canvas(lo, hi, width, pad=50, height=height)
    cv.polyline(np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]), "#999999", 0.5,
                closed=True)
    for k, (label, x, y) in enumerate(data):
        color = PALETTE[k % len(PALETTE)]
        if x.size > 1:
            cv.polyline(np.column_stack([x, y]), color, 1.5)
        for p in zip(x, y):
            cv.circle(p, color, 2.0)
        cv.text(width - 45, 60 + 14 * k, label, anchor="end")
    cv.text(width / 2, height - 10, xlabel, anchor="middle")
    cv.text(10, 30, (f"log10 {ylabel}" if logy else ylabel))
    cv.text(width / 2, 20, title, anchor="middle")
    cv.text(50, height - 30, f"{lo[0]:.3g}")
    cv.text(width - 50, height - 30, f"{hi[0]:.3g}", anchor="end")
    cv.text(45, height - 50, f"{lo[1]:.3g}", anchor="end")
    cv.text(45, 55, f"{hi[1]:.3g}", anchor="end")
    return cv.render()
