"""Standalone SVG charts of benchmark summaries.

Two charts: grouped success-rate bars (one group per setting, one bar per
planner) and success rate against candidate count k. Every plotted value is
also written as a text label, so the files double as a readable record.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from .bench import Summary

WIDTH, HEIGHT = 720, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 170, 40, 60
PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f",
           "#bab0ac")


class EmptySummaryError(ValueError):
    """Raised when there is nothing to plot."""


def _plot_box():
    return MARGIN_L, MARGIN_T, WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B


def _y(rate: float) -> float:
    _, top, _, h = _plot_box()
    return top + h * (1.0 - rate / 100.0)


def _text(x, y, s, size=12, anchor="middle", extra=""):
    return (f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" text-anchor="{anchor}" '
            f'font-family="sans-serif"{extra}>{escape(str(s))}</text>')


def _frame(title: str, y_label: str) -> list[str]:
    left, top, w, h = _plot_box()
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           _text(left + w / 2, 22, title, 15)]
    for tick in range(0, 101, 20):
        y = _y(tick)
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + w}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(_text(left - 6, y + 4, tick, 11, "end"))
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + h}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top + h}" x2="{left + w}" y2="{top + h}" stroke="black"/>')
    out.append(_text(16, top + h / 2, y_label, 12, "middle", f' transform="rotate(-90 16 {top + h / 2:.1f})"'))
    return out


def _legend(names: Sequence[str]) -> list[str]:
    x = WIDTH - MARGIN_R + 14
    out = []
    for i, name in enumerate(names):
        y = MARGIN_T + 8 + 18 * i
        out.append(f'<rect x="{x}" y="{y - 9}" width="10" height="10" fill="{PALETTE[i % len(PALETTE)]}"/>')
        out.append(_text(x + 16, y, name, 11, "start"))
    return out


def _unique(values: Iterable[str]) -> list[str]:
    seen: list[str] = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return seen


def success_bars_svg(summaries: Sequence[Summary], title: str = "Success rate") -> str:
    """Grouped bars: x groups are settings, bars within a group are planners."""
    if not summaries:
        raise EmptySummaryError("no summary rows to plot")
    settings = _unique(s.setting for s in summaries)
    planners = _unique(s.planner for s in summaries)
    rate = {(s.setting, s.planner): s.success_rate for s in summaries}
    left, top, w, h = _plot_box()
    group_w = w / len(settings)
    bar_w = 0.8 * group_w / len(planners)
    out = _frame(title, "success rate (%)")
    for g, setting in enumerate(settings):
        x0 = left + g * group_w + 0.1 * group_w
        for p, planner in enumerate(planners):
            if (setting, planner) not in rate:
                continue
            r = rate[(setting, planner)]
            x, y = x0 + p * bar_w, _y(r)
            out.append(f'<rect class="bar" data-setting="{escape(setting)}" data-planner="{escape(planner)}" '
                       f'data-rate="{r:.2f}" x="{x:.1f}" y="{y:.1f}" width="{bar_w * 0.9:.1f}" '
                       f'height="{top + h - y:.1f}" fill="{PALETTE[p % len(PALETTE)]}"/>')
            out.append(_text(x + bar_w * 0.45, y - 3, f"{r:.2f}", 9))
        out.append(_text(left + (g + 0.5) * group_w, top + h + 18, setting, 12))
    out += _legend(planners)
    out.append("</svg>")
    return "\n".join(out) + "\n"


_K = re.compile(r"^k=(\d+)$")


def k_series(summaries: Sequence[Summary]) -> dict[str, list[tuple[int, float]]]:
    """Per planner, (k, success rate) points sorted by k, from "k=N" settings."""
    series: dict[str, list[tuple[int, float]]] = {}
    for s in summaries:
        m = _K.match(s.setting)
        if m is None:
            raise ValueError(f"setting {s.setting!r} is not of the form k=N")
        series.setdefault(s.planner, []).append((int(m.group(1)), s.success_rate))
    return {p: sorted(pts) for p, pts in series.items()}


def success_vs_k_svg(series: dict[str, Sequence[tuple[int, float]]], title: str = "Success rate vs candidates") -> str:
    """Line chart of success rate against the number of learned candidates."""
    if not series or not any(series.values()):
        raise EmptySummaryError("no points to plot")
    ks = sorted({k for pts in series.values() for k, _ in pts})
    left, top, w, h = _plot_box()
    kmin, kmax = ks[0], ks[-1]
    span = max(kmax - kmin, 1)

    def x_of(k):
        return left + w * (0.5 if kmax == kmin else 0.05 + 0.9 * (k - kmin) / span)

    out = _frame(title, "success rate (%)")
    for k in ks:
        out.append(_text(x_of(k), top + h + 18, k, 12))
    out.append(_text(left + w / 2, top + h + 40, "candidates k", 12))
    names = list(series)
    for i, name in enumerate(names):
        color = PALETTE[i % len(PALETTE)]
        pts = [(x_of(k), _y(r), k, r) for k, r in series[name]]
        coords = " ".join(f"{x:.1f},{y:.1f}" for x, y, _, _ in pts)
        out.append(f'<polyline class="series" data-planner="{escape(name)}" points="{coords}" fill="none" '
                   f'stroke="{color}" stroke-width="2"/>')
        for x, y, k, r in pts:
            out.append(f'<circle class="point" data-k="{k}" data-rate="{r:.2f}" cx="{x:.1f}" cy="{y:.1f}" r="3" '
                       f'fill="{color}"/>')
            out.append(_text(x, y - 7, f"{r:.2f}", 10))
    out += _legend(names)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(summaries: Sequence[Summary], path, chart: str = "auto") -> Path:
    """Write one chart for ``summaries``. ``chart`` is "bars", "k" or "auto"
    (the k chart when every setting reads k=N). Nothing is written on error."""
    summaries = list(summaries)
    if not summaries:
        raise EmptySummaryError("no summary rows to plot")
    if chart == "auto":
        chart = "k" if all(_K.match(s.setting) for s in summaries) else "bars"
    if chart == "bars":
        svg = success_bars_svg(summaries)
    elif chart == "k":
        svg = success_vs_k_svg(k_series(summaries))
    else:
        raise ValueError(f"unknown chart type {chart!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    return path
