"""Static SVG charts for the report bundle."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence

import svgwrite

logger = logging.getLogger(__name__)

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3")

WIDTH = 720
HEIGHT = 420
MARGIN_LEFT = 70
MARGIN_RIGHT = 150
MARGIN_TOP = 50
MARGIN_BOTTOM = 70
FONT_SIZE = 12


def _r(value: float) -> float:
    return round(float(value), 2)


class _Canvas:
    """Plot area with a linear y scale and a legend column on the right."""

    def __init__(self, path: Path | str, title: str, low: float, high: float):
        if high <= low:
            high = low + 1.0
        self.path = Path(path)
        self.low = low
        self.high = high
        self.left = MARGIN_LEFT
        self.right = WIDTH - MARGIN_RIGHT
        self.top = MARGIN_TOP
        self.bottom = HEIGHT - MARGIN_BOTTOM
        self.dwg = svgwrite.Drawing(str(self.path), size=(WIDTH, HEIGHT), profile="full")
        self.dwg.add(self.dwg.rect(insert=(0, 0), size=(WIDTH, HEIGHT), fill="white"))
        self.text(title, WIDTH / 2, MARGIN_TOP / 2, anchor="middle", weight="bold", size=FONT_SIZE + 2)
        self.legend_rows = 0

    def y(self, value: float) -> float:
        share = (value - self.low) / (self.high - self.low)
        return _r(self.bottom - share * (self.bottom - self.top))

    def text(
        self, content: str, x: float, y: float, anchor: str = "start", weight: str = "normal", size: int = FONT_SIZE
    ) -> None:
        self.dwg.add(
            self.dwg.text(
                content,
                insert=(_r(x), _r(y)),
                text_anchor=anchor,
                font_size=size,
                font_weight=weight,
                font_family="sans-serif",
            )
        )

    def axes(self, ticks: int = 5, label: str = "") -> None:
        line = {"stroke": "black", "stroke_width": 1}
        self.dwg.add(self.dwg.line(start=(self.left, self.top), end=(self.left, self.bottom), **line))
        zero = self.y(0.0) if self.low <= 0.0 <= self.high else self.bottom
        self.dwg.add(self.dwg.line(start=(self.left, zero), end=(self.right, zero), **line))
        for index in range(ticks + 1):
            value = self.low + (self.high - self.low) * index / ticks
            y = self.y(value)
            self.dwg.add(self.dwg.line(start=(self.left - 4, y), end=(self.left, y), **line))
            self.text(f"{value:.2f}", self.left - 6, y + 4, anchor="end", size=FONT_SIZE - 2)
        if label:
            self.text(label, 14, (self.top + self.bottom) / 2, anchor="middle")

    def legend(self, name: str, color: str) -> None:
        x = self.right + 16
        y = self.top + 18 * self.legend_rows
        self.dwg.add(self.dwg.rect(insert=(x, _r(y)), size=(12, 12), fill=color))
        self.text(name, x + 18, y + 10, size=FONT_SIZE - 1)
        self.legend_rows += 1

    def save(self) -> None:
        self.dwg.save(pretty=True)
        logger.info("Wrote %s", self.path)


def _bounds(values: Sequence[Optional[float]]) -> tuple[float, float]:
    present = [v for v in values if v is not None]
    if not present:
        return 0.0, 1.0
    low = min(0.0, min(present))
    high = max(0.0, max(present))
    pad = (high - low) * 0.05 or 1.0
    return (low - pad if low < 0 else 0.0), high + pad


def bar_chart(
    path: Path | str,
    title: str,
    categories: Sequence[str],
    series: Mapping[str, Sequence[Optional[float]]],
    y_label: str = "",
) -> None:
    """Grouped bars, one group per category and one bar per series; missing values are skipped."""
    canvas = _Canvas(path, title, *_bounds([v for values in series.values() for v in values]))
    canvas.axes(label=y_label)
    group_width = (canvas.right - canvas.left) / max(len(categories), 1)
    bar_width = group_width * 0.8 / max(len(series), 1)
    zero = canvas.y(0.0)
    for position, category in enumerate(categories):
        x0 = canvas.left + group_width * position + group_width * 0.1
        for index, values in enumerate(series.values()):
            value = values[position]
            if value is None:
                continue
            top = min(canvas.y(value), zero)
            height = abs(canvas.y(value) - zero)
            canvas.dwg.add(
                canvas.dwg.rect(
                    insert=(_r(x0 + bar_width * index), _r(top)),
                    size=(_r(bar_width), _r(height)),
                    fill=PALETTE[index % len(PALETTE)],
                )
            )
        canvas.text(category, x0 + group_width * 0.4, canvas.bottom + 18, anchor="middle", size=FONT_SIZE - 1)
    for index, name in enumerate(series):
        canvas.legend(name, PALETTE[index % len(PALETTE)])
    canvas.save()


def scatter_chart(
    path: Path | str,
    title: str,
    groups: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    lines: Optional[Mapping[str, tuple[float, float]]] = None,
    x_label: str = "",
    y_label: str = "",
) -> None:
    """Points per group, plus an optional ``(intercept, slope)`` line per group."""
    xs = [x for x_values, _ in groups.values() for x in x_values]
    ys = [y for _, y_values in groups.values() for y in y_values]
    x_low, x_high = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x_high <= x_low:
        x_high = x_low + 1.0
    canvas = _Canvas(path, title, *_bounds(ys))
    canvas.axes(label=y_label)

    def x(value: float) -> float:
        return _r(canvas.left + (value - x_low) / (x_high - x_low) * (canvas.right - canvas.left))

    canvas.text(f"{x_low:.2f}", canvas.left, canvas.bottom + 18, anchor="middle", size=FONT_SIZE - 2)
    canvas.text(f"{x_high:.2f}", canvas.right, canvas.bottom + 18, anchor="middle", size=FONT_SIZE - 2)
    if x_label:
        canvas.text(x_label, (canvas.left + canvas.right) / 2, canvas.bottom + 40, anchor="middle")

    for index, (name, (x_values, y_values)) in enumerate(groups.items()):
        color = PALETTE[index % len(PALETTE)]
        for px, py in zip(x_values, y_values):
            if canvas.low <= py <= canvas.high:
                canvas.dwg.add(canvas.dwg.circle(center=(x(px), canvas.y(py)), r=2.5, fill=color, fill_opacity=0.6))
        if lines and name in lines:
            intercept, slope = lines[name]
            y0, y1 = intercept + slope * x_low, intercept + slope * x_high
            if all(canvas.low <= v <= canvas.high for v in (y0, y1)):
                canvas.dwg.add(
                    canvas.dwg.line(
                        start=(x(x_low), canvas.y(y0)), end=(x(x_high), canvas.y(y1)), stroke=color, stroke_width=2
                    )
                )
        canvas.legend(name, color)
    canvas.save()
