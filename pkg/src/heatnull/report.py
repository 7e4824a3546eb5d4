"""Deterministic CSV writing and a small native SVG line-plot emitter."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def fmt(v) -> str:
    """Round-trip exact text for numbers, plain str otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return "" if v is None else str(v)


def write_csv(path: Path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in columns])
    return path


def write_field_csv(path: Path, grid, times, values, name: str = "value") -> Path:
    """Long format (t, x[, y], value) with one row per node and time."""
    pts = grid.points
    cols = ["t", "x"] + (["y"] if grid.dim == 2 else []) + [name]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for t, row in zip(times, values):
            for p, v in zip(pts, row):
                w.writerow([fmt(t)] + [fmt(c) for c in p] + [fmt(v)])
    return path


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_plot(path: Path, series, xlabel: str, ylabel: str, title: str = "", logy: bool = False,
              width: int = 640, height: int = 400) -> Path:
    """``series`` is a list of (label, xs, ys).  Non-positive values are dropped on a log axis."""
    ml, mr, mt, mb = 70, 20, 30, 50
    pw, ph = width - ml - mr, height - mt - mb
    cleaned = []
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        ok = np.isfinite(xs) & np.isfinite(ys)
        if logy:
            ok &= ys > 0
            ys = np.where(ok, np.log10(np.where(ok, ys, 1.0)), 0.0)
        cleaned.append((label, xs[ok], ys[ok]))
    allx = np.concatenate([c[1] for c in cleaned]) if cleaned else np.zeros(0)
    ally = np.concatenate([c[2] for c in cleaned]) if cleaned else np.zeros(0)
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for tx in _ticks(x0, x1):
        X = sx(tx)
        out.append(f'<line x1="{X:.2f}" y1="{mt + ph}" x2="{X:.2f}" y2="{mt + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{mt + ph + 16}" text-anchor="middle">{tx:.3g}</text>')
    for ty in _ticks(y0, y1):
        Y = sy(ty)
        lab = f"1e{ty:.1f}" if logy else f"{ty:.3g}"
        out.append(f'<line x1="{ml - 4}" y1="{Y:.2f}" x2="{ml}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 6}" y="{Y + 4:.2f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="15" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>')
    if title:
        out.append(f'<text x="{ml + pw / 2:.1f}" y="18" text-anchor="middle">{_esc(title)}</text>')
    for i, (label, xs, ys) in enumerate(cleaned):
        col = PALETTE[i % len(PALETTE)]
        if xs.size:
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
            if xs.size <= 30:
                for x, y in zip(xs, ys):
                    out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="{col}"/>')
        ly = mt + 14 + 14 * i
        out.append(f'<line x1="{ml + pw - 110}" y1="{ly - 4}" x2="{ml + pw - 90}" y2="{ly - 4}" stroke="{col}"/>')
        out.append(f'<text x="{ml + pw - 85}" y="{ly}">{_esc(label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def finite_or_text(v: float) -> float | str:
    return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
