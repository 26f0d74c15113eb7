"""Dependency-free SVG rendering of reliability, cosine-PDF and Pareto plots.

Coordinates are rounded to two decimals so output is byte-stable.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .errors import SchemaMismatch
from .tables import BIN_COLUMNS, PARETO_COLUMNS

W, H = 400, 400
MARGIN = 50
PLOT = W - 2 * MARGIN
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
KINDS = ("reliability", "pdf", "pareto")


def q(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


class Canvas:
    def __init__(self, title: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2:.2f}" y="25.00" text-anchor="middle" font-size="14">{escape(title)}</text>',
        ]

    def x(self, u: float, lo: float = 0.0, hi: float = 1.0) -> float:
        return MARGIN + (u - lo) / (hi - lo) * PLOT

    def y(self, u: float, lo: float = 0.0, hi: float = 1.0) -> float:
        return H - MARGIN - (u - lo) / (hi - lo) * PLOT

    def add(self, s: str) -> None:
        self.parts.append(s)

    def axes(self, xlabel: str, ylabel: str, xr=(0.0, 1.0), yr=(0.0, 1.0)) -> None:
        x0, y0, x1, y1 = MARGIN, H - MARGIN, W - MARGIN, MARGIN
        self.add(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
        self.add(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
        for k in range(6):
            fx = xr[0] + (xr[1] - xr[0]) * k / 5
            fy = yr[0] + (yr[1] - yr[0]) * k / 5
            self.add(f'<text x="{q(self.x(fx, *xr))}" y="{y0 + 15}" text-anchor="middle" font-size="10">{fx:.2g}</text>')
            self.add(f'<text x="{x0 - 5}" y="{q(self.y(fy, *yr) + 3)}" text-anchor="end" font-size="10">{fy:.2g}</text>')
        self.add(f'<text x="{W / 2:.2f}" y="{H - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
        self.add(f'<text x="14" y="{H / 2:.2f}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 14 {H / 2:.2f})">{escape(ylabel)}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _need(header: list[str], columns: list[str], kind: str) -> None:
    missing = [c for c in columns if c not in header]
    if missing:
        raise SchemaMismatch(f"{kind} plot needs columns {missing}")


def reliability_svg(header: list[str], rows: list[list[str]], method: str | None = None,
                    seed: int | None = None) -> str:
    need = [c for c in BIN_COLUMNS if c not in ("method", "seed")]
    _need(header, need, "reliability")
    col = {h: i for i, h in enumerate(header)}
    if "method" in col:
        keys = list(dict.fromkeys((r[col["method"]], r[col["seed"]]) for r in rows))
        if method is not None:
            keys = [k for k in keys if k[0] == method]
        if seed is not None:
            keys = [k for k in keys if int(k[1]) == seed]
        if not keys:
            raise SchemaMismatch("no reliability bins match the requested method/seed")
        chosen = keys[0]
        rows = [r for r in rows if (r[col["method"]], r[col["seed"]]) == chosen]
        title = f"Reliability: {chosen[0]} (seed {chosen[1]})"
    else:
        title = "Reliability"
    try:
        bins = sorted((int(r[col["bin_index"]]), float(r[col["lower"]]), float(r[col["upper"]]),
                       int(r[col["count"]]), float(r[col["accuracy"]]), float(r[col["mean_confidence"]]))
                      for r in rows)
    except (ValueError, IndexError) as exc:
        raise SchemaMismatch(f"bad reliability row: {exc}") from exc
    c = Canvas(title)
    c.axes("confidence", "accuracy")
    for _, lo, hi, count, acc, conf in bins:
        x, w = c.x(lo), c.x(hi) - c.x(lo)
        top = c.y(acc if count else 0.0)
        c.add(f'<rect class="bar" x="{q(x)}" y="{q(top)}" width="{q(w)}" height="{q(c.y(0.0) - top)}" '
              f'fill="#1f77b4" stroke="black" stroke-width="0.5"/>')
        if count:
            a, b = sorted((c.y(acc), c.y(conf)))
            c.add(f'<rect class="gap" x="{q(x)}" y="{q(a)}" width="{q(w)}" height="{q(b - a)}" '
                  f'fill="#d62728" fill-opacity="0.35" stroke="#d62728" stroke-width="0.5"/>')
    c.add(f'<line class="diagonal" x1="{q(c.x(0))}" y1="{q(c.y(0))}" x2="{q(c.x(1))}" y2="{q(c.y(1))}" '
          f'stroke="gray" stroke-dasharray="4 3"/>')
    return c.render()


def pdf_svg(header: list[str], rows: list[list[str]]) -> str:
    if not header or header[0] != "bin_center" or len(header) < 2:
        raise SchemaMismatch("pdf plot needs a bin_center column followed by one density column per method")
    try:
        data = [[float(v) for v in r] for r in rows]
    except ValueError as exc:
        raise SchemaMismatch(f"bad pdf row: {exc}") from exc
    top = max([v for r in data for v in r[1:] if math.isfinite(v)] + [1e-12])
    ymax = math.ceil(top * 1.1 * 10) / 10
    c = Canvas("Pairwise text-feature cosine")
    c.axes("cosine similarity", "density", (-1.0, 1.0), (0.0, ymax))
    for k, name in enumerate(header[1:]):
        pts = " ".join(f"{q(c.x(r[0], -1, 1))},{q(c.y(r[k + 1], 0, ymax))}" for r in data)
        color = PALETTE[k % len(PALETTE)]
        c.add(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        c.add(f'<text x="{W - MARGIN - 5}" y="{MARGIN + 14 * (k + 1)}" text-anchor="end" font-size="11" '
              f'fill="{color}">{escape(name)}</text>')
    return c.render()


def pareto_svg(header: list[str], rows: list[list[str]]) -> str:
    _need(header, PARETO_COLUMNS, "pareto")
    col = {h: i for i, h in enumerate(header)}
    try:
        pts = [(float(r[col["lambda"]]), float(r[col["accuracy"]]), float(r[col["ece"]])) for r in rows]
    except (ValueError, IndexError) as exc:
        raise SchemaMismatch(f"bad pareto row: {exc}") from exc
    if not pts:
        raise SchemaMismatch("pareto table has no rows")
    eces = [p[2] for p in pts]
    accs = [p[1] for p in pts]
    xr = (0.0, max(eces) * 1.2 or 1.0)
    yr = (max(0.0, min(accs) - 0.05), min(1.0, max(accs) + 0.05))
    if yr[1] <= yr[0]:
        yr = (0.0, 1.0)
    c = Canvas("Accuracy vs ECE across lambda")
    c.axes("ECE", "accuracy", xr, yr)
    for lam, acc, e in pts:
        x, y = c.x(e, *xr), c.y(acc, *yr)
        c.add(f'<circle cx="{q(x)}" cy="{q(y)}" r="4" fill="#1f77b4"/>')
        c.add(f'<text x="{q(x + 6)}" y="{q(y - 6)}" font-size="10">{lam:g}</text>')
    return c.render()


def render(kind: str, header: list[str], rows: list[list[str]], method=None, seed=None) -> str:
    if kind == "reliability":
        return reliability_svg(header, rows, method, seed)
    if kind == "pdf":
        return pdf_svg(header, rows)
    if kind == "pareto":
        return pareto_svg(header, rows)
    raise SchemaMismatch(f"unknown plot kind {kind!r}; expected one of {KINDS}")
