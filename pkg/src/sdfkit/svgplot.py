"""Dependency-free SVG line, bar and histogram charts for the evaluation reports."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 400
ML, MR, MT, MB = 64, 20, 40, 56
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _nice_ticks(lo: float, hi: float, n: int = 5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:g}"


class _Canvas:
    def __init__(self, title, xlabel, ylabel, xlim, ylim, header=()):
        self.xlim = xlim
        self.ylim = ylim
        self.parts = ['<?xml version="1.0" encoding="UTF-8"?>']
        for line in header:
            self.parts.append(f"<!-- {escape(line)} -->")
        self.parts.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
                          f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">')
        self.parts.append(f'<rect width="{W}" height="{H}" fill="white"/>')
        self.parts.append(f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="15">'
                          f'{escape(title)}</text>')
        self.parts.append(f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
        self.parts.append(f'<text x="16" y="{H / 2}" text-anchor="middle" '
                          f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>')

    def x(self, v):
        a, b = self.xlim
        return ML + (v - a) / (b - a) * (W - ML - MR)

    def y(self, v):
        a, b = self.ylim
        return H - MB - (v - a) / (b - a) * (H - MT - MB)

    def axes(self, xticks=None, xticklabels=None):
        p = self.parts
        p.append(f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}" stroke="black"/>')
        p.append(f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}" stroke="black"/>')
        for t in _nice_ticks(*self.ylim):
            if self.ylim[0] - 1e-12 <= t <= self.ylim[1] + 1e-12:
                yy = self.y(t)
                p.append(f'<line x1="{ML - 4}" y1="{yy:.2f}" x2="{ML}" y2="{yy:.2f}" stroke="black"/>')
                p.append(f'<text x="{ML - 7}" y="{yy + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
        if xticks is None:
            xticks = [t for t in _nice_ticks(*self.xlim)
                      if self.xlim[0] - 1e-12 <= t <= self.xlim[1] + 1e-12]
            xticklabels = [_fmt(t) for t in xticks]
        for t, lab in zip(xticks, xticklabels):
            xx = self.x(t)
            p.append(f'<line x1="{xx:.2f}" y1="{H - MB}" x2="{xx:.2f}" y2="{H - MB + 4}" stroke="black"/>')
            p.append(f'<text x="{xx:.2f}" y="{H - MB + 17}" text-anchor="middle">{escape(lab)}</text>')

    def legend(self, names):
        for i, name in enumerate(names):
            yy = MT + 6 + 16 * i
            c = COLORS[i % len(COLORS)]
            self.parts.append(f'<line x1="{W - MR - 120}" y1="{yy}" x2="{W - MR - 100}" y2="{yy}" '
                              f'stroke="{c}" stroke-width="2"/>')
            self.parts.append(f'<text x="{W - MR - 95}" y="{yy + 4}">{escape(name)}</text>')

    def done(self) -> str:
        self.parts.append("</svg>")
        return "\n".join(self.parts) + "\n"


def _limits(values, pad=0.05):
    v = np.asarray([x for x in np.ravel(values) if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def line_chart(x, series: dict, title="", xlabel="", ylabel="", ylim=None, header=()) -> str:
    x = np.asarray(x, dtype=float)
    ylim = ylim or _limits(list(series.values()))
    cv = _Canvas(title, xlabel, ylabel, _limits(x, 0.0), ylim, header)
    cv.axes()
    for i, (name, ys) in enumerate(series.items()):
        pts = " ".join(f"{cv.x(a):.2f},{cv.y(b):.2f}" for a, b in zip(x, ys) if np.isfinite(b))
        cv.parts.append(f'<polyline fill="none" stroke="{COLORS[i % len(COLORS)]}" '
                        f'stroke-width="2" points="{pts}"/>')
    if len(series) > 1:
        cv.legend(list(series))
    return cv.done()


def bar_chart(labels, values, title="", xlabel="", ylabel="", ylim=(0.0, 1.0), header=()) -> str:
    n = len(labels)
    cv = _Canvas(title, xlabel, ylabel, (0.0, float(max(n, 1))), ylim, header)
    cv.axes(xticks=[i + 0.5 for i in range(n)], xticklabels=[str(s) for s in labels])
    for i, v in enumerate(values):
        x0, x1 = cv.x(i + 0.1), cv.x(i + 0.9)
        y0, y1 = cv.y(ylim[0]), cv.y(min(max(v, ylim[0]), ylim[1]))
        cv.parts.append(f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{x1 - x0:.2f}" '
                        f'height="{y0 - y1:.2f}" fill="{COLORS[0]}"/>')
    return cv.done()


def histogram(values, bins=20, title="", xlabel="", ylabel="count", marks=None,
              header=()) -> str:
    """Histogram with optional vertical marker lines, ``marks = {label: x}``."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    cv = _Canvas(title, xlabel, ylabel, (lo, hi), (0.0, float(max(counts.max(initial=0), 1)) * 1.05),
                 header)
    cv.axes()
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        x0, x1 = cv.x(a), cv.x(b)
        y1 = cv.y(c)
        cv.parts.append(f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{max(x1 - x0 - 1, 0.5):.2f}" '
                        f'height="{cv.y(0) - y1:.2f}" fill="{COLORS[0]}"/>')
    for i, (name, xv) in enumerate((marks or {}).items()):
        xx = cv.x(min(max(xv, lo), hi))
        c = COLORS[(i + 1) % len(COLORS)]
        cv.parts.append(f'<line x1="{xx:.2f}" y1="{MT}" x2="{xx:.2f}" y2="{H - MB}" '
                        f'stroke="{c}" stroke-dasharray="5,3" stroke-width="2"/>')
        cv.parts.append(f'<text x="{xx + 4:.2f}" y="{MT + 12 + 14 * i}" fill="{c}">'
                        f'{escape(name)}</text>')
    return cv.done()
