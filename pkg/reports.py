#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
CSV and SVG report writers. Every file is written to a temporary name in
the target directory and renamed into place, so readers never see a
half-written report.
"""

import csv
import logging
import os
import tempfile
from contextlib import contextmanager
from html import escape

import numpy as np

logger = logging.getLogger(__name__)

SVG_WIDTH = 800
SVG_HEIGHT = 480
SVG_MARGIN = 60
SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


@contextmanager
def atomic_write(path: str, mode: str = "w"):
    """Open a temp file next to `path`; on success rename it over `path`."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, encoding="utf-8", newline="") as f:
            yield f
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return "nan"
        return f"{float(value):.6g}"
    return str(value)


def write_csv(path: str, header, rows, comments=()):
    """Write rows under a header line; `comments` go first as '# ...' lines."""
    with atomic_write(path) as f:
        for comment in comments:
            f.write(f"# {comment}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        n_rows = 0
        for row in rows:
            writer.writerow([_format(v) for v in row])
            n_rows += 1
    logger.info(f"Wrote {n_rows} rows to {path}")


def write_text(path: str, text: str):
    with atomic_write(path) as f:
        f.write(text)


def _scale(values, lo, hi, out_lo, out_hi):
    if hi == lo:
        return np.full(np.shape(values), 0.5 * (out_lo + out_hi))
    return out_lo + (np.asarray(values, dtype=float) - lo) * (out_hi - out_lo) / (hi - lo)


def write_svg_chart(path: str, x, series: dict, title: str = "", x_label: str = "",
                    y_label: str = "", step: bool = False, errors: dict = None):
    """
    Self-contained line (or step) chart. `series` maps a legend label to y
    values on the common x grid; `errors` optionally maps labels to sigma.
    """
    x = np.asarray(x, dtype=float)
    errors = errors or {}
    finite = [np.asarray(y, dtype=float)[np.isfinite(y)] for y in series.values()]
    finite = [f for f in finite if f.size]
    y_lo = min((f.min() for f in finite), default=0.0)
    y_hi = max((f.max() for f in finite), default=1.0)
    for label, sigma in errors.items():
        y = np.asarray(series[label], dtype=float)
        band = np.asarray(sigma, dtype=float)
        ok = np.isfinite(y) & np.isfinite(band)
        if ok.any():
            y_lo = min(y_lo, float((y - band)[ok].min()))
            y_hi = max(y_hi, float((y + band)[ok].max()))
    x_lo, x_hi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)

    left, right = SVG_MARGIN, SVG_WIDTH - SVG_MARGIN // 2
    top, bottom = SVG_MARGIN // 2, SVG_HEIGHT - SVG_MARGIN

    svg_header = f"""<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">
  <rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>
  <text x="{SVG_WIDTH / 2:.0f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>
  <line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>
  <line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>
  <text x="{(left + right) / 2:.0f}" y="{SVG_HEIGHT - 15}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(x_label)}</text>
  <text x="15" y="{(top + bottom) / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 15 {(top + bottom) / 2:.0f})">{escape(y_label)}</text>
  <text x="{left - 5}" y="{bottom}" text-anchor="end" font-family="sans-serif" font-size="10">{y_lo:.3g}</text>
  <text x="{left - 5}" y="{top + 10}" text-anchor="end" font-family="sans-serif" font-size="10">{y_hi:.3g}</text>
  <text x="{left}" y="{bottom + 15}" text-anchor="middle" font-family="sans-serif" font-size="10">{x_lo:.4g}</text>
  <text x="{right}" y="{bottom + 15}" text-anchor="middle" font-family="sans-serif" font-size="10">{x_hi:.4g}</text>"""

    svg_footer = """
</svg>
"""

    with atomic_write(path) as f:
        f.write(svg_header)
        for i, (label, y) in enumerate(series.items()):
            color = SVG_COLORS[i % len(SVG_COLORS)]
            y = np.asarray(y, dtype=float)
            px = _scale(x, x_lo, x_hi, left, right)
            py = _scale(np.nan_to_num(y, nan=y_lo), y_lo, y_hi, bottom, top)
            if step and px.size > 1:
                edges = np.append(px, px[-1] + (px[-1] - px[-2]))
                points = []
                for j in range(px.size):
                    points.append(f"{edges[j]:.1f},{py[j]:.1f}")
                    points.append(f"{edges[j + 1]:.1f},{py[j]:.1f}")
            else:
                points = [f"{a:.1f},{b:.1f}" for a, b in zip(px, py)]
            f.write(f"""
  <polyline fill="none" stroke="{color}" stroke-width="1.2" points="{' '.join(points)}"/>
  <text x="{right - 5}" y="{top + 15 * (i + 1)}" text-anchor="end" font-family="sans-serif" font-size="11" fill="{color}">{escape(label)}</text>""")
            if label in errors:
                sigma = np.asarray(errors[label], dtype=float)
                lo = _scale(y - sigma, y_lo, y_hi, bottom, top)
                hi = _scale(y + sigma, y_lo, y_hi, bottom, top)
                for a, b, c in zip(px, lo, hi):
                    if np.isfinite(b) and np.isfinite(c):
                        f.write(f"""
  <line x1="{a:.1f}" y1="{b:.1f}" x2="{a:.1f}" y2="{c:.1f}" stroke="{color}" stroke-width="0.8"/>""")
        f.write(svg_footer)
    logger.info(f"Wrote chart {path}")
