"""ASTM D6433-style Pavement Condition Index from distress records.

The pipeline per sample unit: density of each (type, severity, extent)
record, deduct value from an externally supplied curve, then the
iterative corrected-deduct procedure, and finally PCI = 100 - max CDV.
Deduct and correction curves are data files, never hard-coded; the
repository ships a synthetic set with hand-derivable values and an
approximate digitization clearly labeled as such.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .annotations import (
    DistressType,
    ImageAnnotation,
    Severity,
    is_linear,
    is_pattern,
)
from .geometry import SeverityThresholds, polygon_area, polygon_diameter

DEDUCT_FLOOR = 2.0  # deducts at or below this are "negligible" in the iteration

RATING_BANDS = [
    (85.0, "good"),
    (70.0, "satisfactory"),
    (55.0, "fair"),
    (40.0, "poor"),
    (25.0, "very poor"),
    (10.0, "serious"),
    (float("-inf"), "failed"),
]


class CurveError(ValueError):
    """Curve data missing or failing validation."""


class PciError(ValueError):
    pass


@dataclass(frozen=True)
class DistressRecord:
    distress_type: DistressType
    severity: Severity
    extent: float  # linear types: metres of crack; pattern types: square metres

    def __post_init__(self):
        if self.distress_type is DistressType.MANHOLE:
            raise PciError("manholes carry no deduct and cannot form records")
        if not (math.isfinite(self.extent) and self.extent > 0):
            raise PciError(f"extent must be positive, got {self.extent}")


def _validate_curve(points: list[tuple[float, float]], name: str, y_max: float) -> None:
    if len(points) < 2:
        raise CurveError(f"{name}: need at least 2 points")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    if any(x2 <= x1 for x1, x2 in zip(xs, xs[1:])):
        raise CurveError(f"{name}: x values must be strictly increasing")
    if any(y2 < y1 for y1, y2 in zip(ys, ys[1:])):
        raise CurveError(f"{name}: y values must be non-decreasing")
    if any(not (0 <= y <= y_max) for y in ys):
        raise CurveError(f"{name}: y values must lie in [0, {y_max}]")


@dataclass
class DeductCurveSet:
    """Deduct curves keyed by (type, severity); correction curves by q.

    Deduct curves interpolate linearly in log10(density%); correction
    curves linearly in total deduct.  Both clamp to their endpoint
    values outside the tabulated span, and evaluated values are clamped
    to [0, 100].
    """

    deduct_curves: dict[tuple[DistressType, Severity], list[tuple[float, float]]]
    correction_curves: dict[int, list[tuple[float, float]]]
    provenance: str = ""

    def __post_init__(self):
        for (t, s), pts in self.deduct_curves.items():
            _validate_curve(pts, f"deduct {t.value}|{s.label}", y_max=100.0)
            if any(x <= 0 for x, _ in pts):
                raise CurveError(f"deduct {t.value}|{s.label}: density points must be > 0")
        if 1 not in self.correction_curves:
            raise CurveError("correction curve for q=1 is required")
        for q, pts in self.correction_curves.items():
            if q < 1:
                raise CurveError(f"correction q must be >= 1, got {q}")
            # control points may exceed 100 (evaluation clamps); 200 is a sanity rail
            _validate_curve(pts, f"correction q={q}", y_max=200.0)
        for x, y in self.correction_curves[1]:
            if abs(x - y) > 1e-9:
                raise CurveError("correction q=1 must be the identity within its span")

    @classmethod
    def from_file(cls, path: Path | str) -> "DeductCurveSet":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        deduct = {}
        for key, pts in doc["deduct"].items():
            type_label, _, sev_label = key.partition("|")
            deduct[(DistressType.parse(type_label), Severity.parse(sev_label))] = [
                (float(x), float(y)) for x, y in pts
            ]
        correction = {
            int(q): [(float(x), float(y)) for x, y in pts]
            for q, pts in doc["correction"].items()
        }
        return cls(deduct, correction, provenance=str(doc.get("provenance", "")))

    def to_file(self, path: Path | str) -> None:
        doc = {
            "deduct": {
                f"{t.value}|{s.label}": [[x, y] for x, y in pts]
                for (t, s), pts in sorted(
                    self.deduct_curves.items(), key=lambda kv: (kv[0][0].value, kv[0][1])
                )
            },
            "correction": {
                str(q): [[x, y] for x, y in pts]
                for q, pts in sorted(self.correction_curves.items())
            },
            "provenance": self.provenance,
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _interp_clamped(points: list[tuple[float, float]], x: float) -> float:
    if x <= points[0][0]:
        return points[0][1]
    if x >= points[-1][0]:
        return points[-1][1]
    for (x1, y1), (x2, y2) in zip(points, points[1:]):
        if x1 <= x <= x2:
            t = (x - x1) / (x2 - x1)
            return y1 + t * (y2 - y1)
    raise AssertionError("unreachable: x inside span but no bracketing segment")


@dataclass
class PciIteration:
    q: int
    tdv: float
    cdv: float
    deducts: list[float]  # the deduct list this iteration evaluated


@dataclass
class PciReport:
    densities: list[float]
    deducts: list[float]
    iterations: list[PciIteration]
    max_cdv: float
    pci: float
    rating: str

    def to_dict(self) -> dict:
        return {
            "densities": self.densities,
            "deducts": self.deducts,
            "iterations": [
                {"q": it.q, "tdv": it.tdv, "cdv": it.cdv, "deducts": it.deducts}
                for it in self.iterations
            ],
            "max_cdv": self.max_cdv,
            "pci": self.pci,
            "rating": self.rating,
        }


def rating_for(pci: float) -> str:
    for lo, label in RATING_BANDS:
        if pci >= lo:
            return label
    return "failed"


def density(record: DistressRecord, sample_area_m2: float) -> float:
    """Percent density: 100 * extent / sample area.

    Linear extents are metres against square metres, following the
    survey convention for linear distresses.
    """
    if not (sample_area_m2 > 0):
        raise PciError(f"sample area must be positive, got {sample_area_m2}")
    return 100.0 * record.extent / sample_area_m2


def deduct_value(
    curves: DeductCurveSet,
    distress_type: DistressType,
    severity: Severity,
    density_pct: float,
) -> float:
    """Deduct from the (type, severity) curve at log10(density).

    Densities below the curve span return the first point's value;
    above the span, the last point's value.
    """
    if density_pct < 0:
        raise PciError(f"density must be >= 0, got {density_pct}")
    key = (distress_type, severity)
    if key not in curves.deduct_curves:
        raise CurveError(f"no deduct curve for ({distress_type.value}, {severity.label})")
    pts = curves.deduct_curves[key]
    if density_pct <= 0 or density_pct <= pts[0][0]:
        return pts[0][1]
    log_pts = [(math.log10(x), y) for x, y in pts]
    dv = _interp_clamped(log_pts, math.log10(density_pct))
    return min(100.0, max(0.0, dv))


def _correction(curves: DeductCurveSet, q: int, tdv: float) -> float:
    q_eff = min(q, max(curves.correction_curves))
    cdv = _interp_clamped(curves.correction_curves[q_eff], tdv)
    return min(100.0, max(0.0, cdv))


def compute_pci(
    records: Sequence[DistressRecord],
    sample_area_m2: float,
    curves: DeductCurveSet,
) -> PciReport:
    """Full corrected-deduct-value procedure for one sample unit.

    Steps: per-record deducts; if every deduct is at or below the
    negligible floor the total stands in for the max CDV (no
    iterations); otherwise the deduct list is trimmed to the allowable
    count m = 1 + (9/98)(100 - HDV) capped at 10 (fractional m scales
    the next deduct), then iterated: q = deducts above the floor,
    TDV = sum of all, CDV from the q-curve, smallest deduct above the
    floor reduced to the floor, until q = 1.  Ties between equal
    deducts resolve by record index, so the result is deterministic.
    """
    densities = [density(r, sample_area_m2) for r in records]
    deducts = [
        deduct_value(curves, r.distress_type, r.severity, d)
        for r, d in zip(records, densities)
    ]

    iterations: list[PciIteration] = []
    if not deducts or max(deducts) <= DEDUCT_FLOOR:
        max_cdv = sum(deducts)
    else:
        # sort descending, stable in record order for equal deducts
        ordered = sorted(deducts, key=lambda v: -v)
        hdv = ordered[0]
        m = 1.0 + (9.0 / 98.0) * (100.0 - hdv)
        m = min(m, 10.0)
        kept = ordered[: int(math.floor(m))]
        frac = m - math.floor(m)
        if frac > 0 and len(ordered) > len(kept):
            kept.append(ordered[len(kept)] * frac)
        working = kept
        while True:
            q = sum(1 for v in working if v > DEDUCT_FLOOR)
            tdv = sum(working)
            cdv = _correction(curves, max(q, 1), tdv)
            iterations.append(PciIteration(q, tdv, cdv, list(working)))
            if q <= 1:
                break
            smallest_above = min(v for v in working if v > DEDUCT_FLOOR)
            working = list(working)
            working[working.index(smallest_above)] = DEDUCT_FLOOR
        max_cdv = max(it.cdv for it in iterations)

    pci = min(100.0, max(0.0, 100.0 - max_cdv))
    return PciReport(densities, deducts, iterations, max_cdv, pci, rating_for(pci))


def records_from_image(
    image: ImageAnnotation, thresholds: Optional[SeverityThresholds] = None
) -> tuple[list[DistressRecord], float]:
    """Convert polygon annotations to distress records plus the sample area.

    Pattern distresses use polygon area (px^2 -> m^2 via the footprint
    scale).  Linear cracks use the polygon's longest-axis length in
    metres: annotations outline the crack, and the outline's diameter is
    the faithful length proxy for a thin crack polygon.  Manholes are
    skipped.  ``thresholds`` is unused here (severity comes from the
    label) but accepted so callers can hold one bundle of config.
    """
    w_mm, h_mm = image.footprint_mm
    mm_per_px_x = w_mm / image.width_px
    mm_per_px_y = h_mm / image.height_px
    records = []
    for i, ann in enumerate(image.annotations):
        if ann.distress_type is DistressType.MANHOLE:
            continue
        if ann.severity is None:
            raise PciError(
                f"{image.image_id}[{i}]: {ann.distress_type.value} lacks a severity"
            )
        if is_pattern(ann.distress_type):
            area_px = polygon_area(ann.vertices)
            extent = area_px * mm_per_px_x * mm_per_px_y / 1e6  # mm^2 -> m^2
        elif is_linear(ann.distress_type):
            verts_mm = [(x * mm_per_px_x, y * mm_per_px_y) for x, y in ann.vertices]
            extent = polygon_diameter(verts_mm) / 1000.0  # mm -> m
        else:  # pragma: no cover - the enum is closed
            continue
        records.append(DistressRecord(ann.distress_type, ann.severity, extent))
    sample_area_m2 = (w_mm / 1000.0) * (h_mm / 1000.0)
    return records, sample_area_m2


def pci_for_image(
    image: ImageAnnotation,
    curves: DeductCurveSet,
    thresholds: Optional[SeverityThresholds] = None,
) -> PciReport:
    records, area = records_from_image(image, thresholds)
    return compute_pci(records, area, curves)


def label_dataset(
    dataset: Sequence[ImageAnnotation],
    thresholds: Optional[SeverityThresholds],
    curves: DeductCurveSet,
) -> list[ImageAnnotation]:
    """Fill pci_label on every image; returns the same objects mutated."""
    for image in dataset:
        image.pci_label = pci_for_image(image, curves, thresholds).pci
    return list(dataset)
