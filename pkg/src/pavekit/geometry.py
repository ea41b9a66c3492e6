"""Polygon geometry and the crack-width severity workflow.

Pixel<->mm conversion comes from the image footprint: px_per_mm along an
axis is total pixels / actual mm.  Width is measured between two picked
points at three places along a crack, averaged, converted to mm, and
banded into a severity.  Band edges belong to the lower band.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotations import DistressType, Severity, is_linear

Point = tuple[float, float]


class GeometryError(ValueError):
    pass


class ThresholdError(ValueError):
    """Severity thresholds missing or malformed for a distress type."""


@dataclass(frozen=True)
class PixelScale:
    """Pixels per millimetre, possibly different along x and y."""

    x_px_per_mm: float
    y_px_per_mm: float

    def __post_init__(self):
        for v in (self.x_px_per_mm, self.y_px_per_mm):
            if not (math.isfinite(v) and v > 0):
                raise GeometryError(f"px_per_mm must be finite and positive, got {v}")

    @classmethod
    def isotropic(cls, px_per_mm: float) -> "PixelScale":
        return cls(px_per_mm, px_per_mm)

    @classmethod
    def from_image(cls, width_px: int, height_px: int, footprint_mm: tuple[float, float]) -> "PixelScale":
        return cls(width_px / footprint_mm[0], height_px / footprint_mm[1])

    def along(self, p1: Point, p2: Point) -> float:
        """Scale of the dominant axis of the segment direction."""
        dx, dy = abs(p2[0] - p1[0]), abs(p2[1] - p1[1])
        return self.x_px_per_mm if dx >= dy else self.y_px_per_mm


@dataclass(frozen=True)
class WidthBand:
    low_max_mm: float
    high_min_mm: float

    def __post_init__(self):
        if not (0 < self.low_max_mm < self.high_min_mm):
            raise ThresholdError(
                f"need 0 < low_max_mm < high_min_mm, got ({self.low_max_mm}, {self.high_min_mm})"
            )

    def band(self, width_mm: float) -> Severity:
        if width_mm <= self.low_max_mm:
            return Severity.LOW
        if width_mm > self.high_min_mm:
            return Severity.HIGH
        return Severity.MEDIUM


@dataclass
class SeverityThresholds:
    bands: dict[DistressType, WidthBand]
    provenance: str = ""

    def band_for(self, t: DistressType) -> WidthBand:
        if t not in self.bands:
            raise ThresholdError(f"no width band configured for {t.value}")
        return self.bands[t]

    @classmethod
    def from_file(cls, path: Path | str) -> "SeverityThresholds":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        bands = {}
        for key, spec in doc.items():
            if key == "provenance":
                continue
            bands[DistressType.parse(key)] = WidthBand(
                float(spec["low_max_mm"]), float(spec["high_min_mm"])
            )
        return cls(bands, provenance=str(doc.get("provenance", "")))


@dataclass
class WidthMeasurement:
    samples_px: list[float]
    mean_px: float
    mean_mm: float
    severity: Severity


def pixel_threshold(scale: PixelScale, threshold_mm: float, axis: str = "x") -> float:
    """Convert a mm threshold to pixels along one axis: px_per_mm * mm."""
    if not math.isfinite(threshold_mm) or threshold_mm < 0:
        raise GeometryError(f"threshold_mm must be finite and >= 0, got {threshold_mm}")
    per_mm = scale.x_px_per_mm if axis == "x" else scale.y_px_per_mm
    return per_mm * threshold_mm


def width_between(p1: Point, p2: Point) -> float:
    """Euclidean pixel distance between two picked edge points."""
    if p1 == p2:
        raise GeometryError("width endpoints coincide")
    return math.hypot(p2[0] - p1[0], p2[1] - p1[1])


def measure_width(
    samples: Sequence[tuple[Point, Point]],
    scale: PixelScale,
    distress_type: DistressType,
    thresholds: SeverityThresholds,
) -> WidthMeasurement:
    """Average three two-point widths and band the mm mean into a severity.

    Each sample converts with the scale along its own dominant axis; for
    isotropic scales mean_mm is exactly mean_px / px_per_mm.
    """
    if not is_linear(distress_type):
        raise ThresholdError(
            f"{distress_type.value} is not width-banded; pattern severity comes from its label"
        )
    if len(samples) != 3:
        raise GeometryError(f"need exactly 3 width samples, got {len(samples)}")
    band = thresholds.band_for(distress_type)
    widths_px = [width_between(p1, p2) for p1, p2 in samples]
    widths_mm = [w / scale.along(p1, p2) for w, (p1, p2) in zip(widths_px, samples)]
    mean_px = sum(widths_px) / 3.0
    mean_mm = sum(widths_mm) / 3.0
    return WidthMeasurement(widths_px, mean_px, mean_mm, band.band(mean_mm))


def polygon_area(vertices: Sequence[Point]) -> float:
    """Shoelace area (absolute value), invariant to vertex order."""
    n = len(vertices)
    if n < 3:
        raise GeometryError(f"degenerate polygon with {n} vertices")
    acc = 0.0
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return abs(acc) / 2.0


def polygon_bbox(vertices: Sequence[Point]) -> tuple[float, float, float, float]:
    xs = [v[0] for v in vertices]
    ys = [v[1] for v in vertices]
    return min(xs), min(ys), max(xs), max(ys)


def polygon_diameter(vertices: Sequence[Point]) -> float:
    """Longest distance between any two vertices (convex-hull diameter).

    The diameter of a polygon is attained at hull vertices, so the hull
    prefilter keeps the pairwise scan cheap for chunky polygons.
    """
    pts = _convex_hull(vertices)
    best = 0.0
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            d = math.hypot(pts[j][0] - pts[i][0], pts[j][1] - pts[i][1])
            if d > best:
                best = d
    return best


def _convex_hull(points: Sequence[Point]) -> list[Point]:
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def rasterize(vertices: Sequence[Point], width: int, height: int) -> np.ndarray:
    """Scanline even-odd fill; a pixel is set iff its center is inside.

    Returns a (height, width) uint8 mask.  Crossing intervals are
    half-open [enter, exit), so centers exactly on a right boundary
    stay out while centers on a left boundary are in.
    """
    n = len(vertices)
    if n < 3:
        raise GeometryError(f"degenerate polygon with {n} vertices")
    for x, y in vertices:
        if not (0 <= x <= width and 0 <= y <= height):
            raise GeometryError(f"vertex ({x}, {y}) outside {width}x{height} raster")
    mask = np.zeros((height, width), dtype=np.uint8)
    ys = [v[1] for v in vertices]
    row_lo = max(0, int(math.floor(min(ys) - 0.5)))
    row_hi = min(height - 1, int(math.ceil(max(ys))))
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        crossings = []
        for i in range(n):
            x1, y1 = vertices[i]
            x2, y2 = vertices[(i + 1) % n]
            if y1 == y2:
                continue
            # half-open span [min_y, max_y) so shared vertices count once
            if min(y1, y2) <= yc < max(y1, y2):
                t = (yc - y1) / (y2 - y1)
                crossings.append(x1 + t * (x2 - x1))
        crossings.sort()
        for k in range(0, len(crossings) - 1, 2):
            x_enter, x_exit = crossings[k], crossings[k + 1]
            col_lo = max(0, int(math.ceil(x_enter - 0.5)))
            col_hi = min(width - 1, int(math.ceil(x_exit - 0.5)) - 1)
            if col_hi >= col_lo:
                mask[row, col_lo : col_hi + 1] = 1
    return mask
