"""Dependency-free static SVG line plots for run traces."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

W, H = 640, 400
PAD_L, PAD_R, PAD_T, PAD_B = 70, 20, 30, 45
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class PlotError(ValueError):
    pass


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_svg(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    reference: tuple[str, Sequence[float], Sequence[float]] | float | None = None,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
) -> str:
    """Render solid series and an optional dashed reference as SVG text.

    ``reference`` is either a horizontal level or a ``(label, x, y)`` curve.
    """
    xs = [x for _, sx, _ in series for x in sx]
    ys = [y for _, _, sy in series for y in sy if math.isfinite(y)]
    if not xs or not ys:
        raise PlotError("nothing to plot")
    if isinstance(reference, (int, float)):
        ys.append(float(reference))
    elif reference is not None:
        xs += list(reference[1])
        ys += [y for y in reference[2] if math.isfinite(y)]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    span = y1 - y0
    y0, y1 = y0 - 0.05 * span, y1 + 0.05 * span

    def px(x):
        return PAD_L + (x - x0) / (x1 - x0) * (W - PAD_L - PAD_R)

    def py(y):
        return H - PAD_B - (y - y0) / (y1 - y0) * (H - PAD_T - PAD_B)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="14" font-family="sans-serif">{title}</text>',
        f'<line x1="{PAD_L}" y1="{H - PAD_B}" x2="{W - PAD_R}" y2="{H - PAD_B}" stroke="black"/>',
        f'<line x1="{PAD_L}" y1="{PAD_T}" x2="{PAD_L}" y2="{H - PAD_B}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(
            f'<text x="{px(t):.2f}" y="{H - PAD_B + 16}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif">{_fmt(t)}</text>'
        )
    for t in _ticks(y0, y1):
        out.append(
            f'<text x="{PAD_L - 6}" y="{py(t) + 4:.2f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{_fmt(t)}</text>'
        )
    out.append(f'<text x="{W / 2:.1f}" y="{H - 8}" text-anchor="middle" font-size="12" font-family="sans-serif">{xlabel}</text>')
    out.append(
        f'<text x="16" y="{H / 2:.1f}" text-anchor="middle" font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 16 {H / 2:.1f})">{ylabel}</text>'
    )
    if isinstance(reference, (int, float)):
        out.append(
            f'<line x1="{PAD_L}" y1="{py(reference):.2f}" x2="{W - PAD_R}" y2="{py(reference):.2f}" '
            f'stroke="black" stroke-dasharray="6,4"/>'
        )
    elif reference is not None:
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(reference[1], reference[2]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-dasharray="6,4"/>')
    for i, (label, sx, sy) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        pts = [(px(x), py(y)) for x, y in zip(sx, sy) if math.isfinite(y)]
        if len(pts) == 1:
            out.append(f'<circle cx="{pts[0][0]:.2f}" cy="{pts[0][1]:.2f}" r="3" fill="{color}"/>')
        else:
            poly = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline points="{poly}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(
            f'<text x="{W - PAD_R - 4}" y="{PAD_T + 14 * (i + 1)}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif" fill="{color}">{label}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_csv(path: str | Path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise PlotError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if not body:
        raise PlotError(f"{path} has no data rows")
    data = []
    for r in body:
        vals = []
        for v in r:
            try:
                vals.append(float(v))
            except ValueError:
                vals.append(float("nan"))
        data.append(vals)
    return header, data


def emit_plot(csv_path: str | Path, kind: str | None = None, reference: float | None = None, out: str | Path | None = None) -> Path:
    """Render ``energy``, ``marginal`` or ``error`` traces to an SVG next to the CSV."""
    header, data = read_csv(csv_path)
    cols = {h: [row[i] for row in data] for i, h in enumerate(header)}
    if kind is None:
        if "E_symmetric" in cols:
            kind = "energy"
        elif "reference" in cols and "tt" in cols:
            kind = "marginal"
        elif any(h.startswith("err_mode") for h in header):
            kind = "error"
        else:
            raise PlotError(f"cannot infer plot kind from columns {header}")
    if kind == "energy":
        if "iteration" not in cols or "E_symmetric" not in cols:
            raise PlotError("energy plot needs iteration and E_symmetric columns")
        series = [("symmetric", cols["iteration"], cols["E_symmetric"])]
        if "E_mixed" in cols:
            series.append(("mixed", cols["iteration"], cols["E_mixed"]))
        svg = line_svg(series, reference, "imaginary-time energy", "iteration", "energy")
    elif kind == "marginal":
        if not {"x", "reference", "tt"} <= set(cols):
            raise PlotError("marginal plot needs x, reference and tt columns")
        svg = line_svg(
            [("tensor train", cols["x"], cols["tt"])],
            ("reference", cols["x"], cols["reference"]),
            "marginal density",
            "x",
            "density",
        )
    elif kind == "error":
        errs = [h for h in header if h.startswith("err_mode")]
        if "iteration" not in cols or not errs:
            raise PlotError("error plot needs iteration and err_mode* columns")
        svg = line_svg([(h, cols["iteration"], cols[h]) for h in errs], None, "marginal error", "iteration", "relative L2 error")
    else:
        raise PlotError(f"unknown plot kind {kind!r}")
    out = Path(out) if out is not None else Path(csv_path).with_suffix(".svg")
    out.write_text(svg)
    return out
