"""Posture timeline CSV and SVG hypnogram."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .simulator import PostureLabel

WIDTH, HEIGHT = 900, 420
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 130, 60, 30, 40
AMPLITUDE_MAX = 100.0


def write_timeline_csv(path: str | Path, predictions: Sequence[tuple[int, int]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_ms", "predicted_label"])
        for t, label in predictions:
            writer.writerow([int(t), PostureLabel(int(label)).name.lower()])


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def hypnogram_svg(predictions: Sequence[tuple[int, int]], amplitudes: Sequence[tuple[int, float]] = (),
                  title: str = "Sleep posture hypnogram") -> str:
    """Step plot of predicted posture lanes over time, amplitude on a secondary axis.

    Pure string formatting with fixed precision, so equal input gives equal bytes.
    """
    lanes = list(PostureLabel)
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    lane_h = plot_h / len(lanes)
    times = [t for t, _ in predictions] + [t for t, _ in amplitudes]
    t0 = min(times) if times else 0
    t1 = max(times) if times else 1
    span = max(t1 - t0, 1)

    def x(t: float) -> float:
        return MARGIN_LEFT + (t - t0) / span * plot_w

    def lane_y(label: int) -> float:
        return MARGIN_TOP + (int(label) + 0.5) * lane_h

    def amp_y(a: float) -> float:
        return MARGIN_TOP + plot_h - min(max(a, 0.0), AMPLITUDE_MAX) / AMPLITUDE_MAX * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    for label in lanes:
        y = lane_y(label)
        out.append(f'<line x1="{MARGIN_LEFT}" y1="{_fmt(y)}" x2="{MARGIN_LEFT + plot_w}" y2="{_fmt(y)}" '
                   f'stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{MARGIN_LEFT - 8}" y="{_fmt(y + 4)}" text-anchor="end">'
                   f'{escape(label.display_name)}</text>')
    out.append(f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{_fmt(plot_h)}" '
               f'fill="none" stroke="#444444"/>')

    minutes = span / 60000.0
    step = 1 if minutes <= 12 else 5 if minutes <= 60 else 30 if minutes <= 360 else 60
    m = 0
    while m <= minutes + 1e-9:
        xt = x(t0 + m * 60000)
        out.append(f'<line x1="{_fmt(xt)}" y1="{MARGIN_TOP + plot_h}" x2="{_fmt(xt)}" '
                   f'y2="{MARGIN_TOP + plot_h + 4}" stroke="#444444"/>')
        out.append(f'<text x="{_fmt(xt)}" y="{MARGIN_TOP + plot_h + 16}" text-anchor="middle">{m}</text>')
        m += step
    out.append(f'<text x="{MARGIN_LEFT + plot_w / 2:.2f}" y="{HEIGHT - 6}" text-anchor="middle">time (min)</text>')
    out.append(f'<text x="{WIDTH - 8}" y="{MARGIN_TOP - 10}" text-anchor="end" fill="#d62728">amplitude</text>')
    for a in (0, 50, 100):
        out.append(f'<text x="{MARGIN_LEFT + plot_w + 6}" y="{_fmt(amp_y(a) + 4)}" fill="#d62728">{a}</text>')

    if amplitudes:
        pts = " ".join(f"{_fmt(x(t))},{_fmt(amp_y(a))}" for t, a in amplitudes)
        out.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="0.8" '
                   f'stroke-opacity="0.6"/>')
    if predictions:
        pts = []
        prev_y = None
        for t, label in predictions:
            y = lane_y(label)
            if prev_y is not None and y != prev_y:
                pts.append(f"{_fmt(x(t))},{_fmt(prev_y)}")
            pts.append(f"{_fmt(x(t))},{_fmt(y)}")
            prev_y = y
        out.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_hypnogram(path: str | Path, predictions: Sequence[tuple[int, int]],
                    amplitudes: Sequence[tuple[int, float]] = (), title: str = "Sleep posture hypnogram") -> None:
    Path(path).write_text(hypnogram_svg(predictions, amplitudes, title), encoding="utf-8")
