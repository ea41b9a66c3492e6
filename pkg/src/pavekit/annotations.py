"""Polygon distress annotations: data model, JSON ingestion, dataset stats.

Canonical on-disk form is one JSON document per image (schema below) plus
a manifest of newline-separated relative paths.  Severity is attached to
every distress polygon except manholes, which are tracked but never
contribute to condition scoring.

Annotation JSON schema (UTF-8)::

    {"image_id": str, "width_px": int, "height_px": int,
     "footprint_mm": [w, h],
     "annotations": [{"type": "longitudinal", "severity": "medium",
                      "vertices": [[x, y], ...]}, ...],
     "pci_label": number|null}
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence


class AnnotationError(ValueError):
    """Raised for any ingestion/validation failure, tagged with location."""

    def __init__(self, message: str, image_id: str = "", index: int | None = None):
        loc = image_id
        if index is not None:
            loc += f"[{index}]"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.image_id = image_id
        self.index = index


class DistressType(enum.Enum):
    ALLIGATOR = "alligator"
    BLOCK = "block"
    LONGITUDINAL = "longitudinal"
    PATCH = "patch"
    TRANSVERSE = "transverse"
    MANHOLE = "manhole"

    @classmethod
    def parse(cls, label: str) -> "DistressType":
        try:
            return cls(label)
        except ValueError:
            raise AnnotationError(f"unknown distress type {label!r}") from None


LINEAR_TYPES = frozenset({DistressType.LONGITUDINAL, DistressType.TRANSVERSE})
PATTERN_TYPES = frozenset({DistressType.ALLIGATOR, DistressType.BLOCK, DistressType.PATCH})


def is_linear(t: DistressType) -> bool:
    return t in LINEAR_TYPES


def is_pattern(t: DistressType) -> bool:
    return t in PATTERN_TYPES


class Severity(enum.IntEnum):
    """Severity bands, totally ordered LOW < MEDIUM < HIGH."""

    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, label: str) -> "Severity":
        try:
            return cls[label.upper()]
        except KeyError:
            raise AnnotationError(f"unknown severity {label!r}") from None


@dataclass
class PolygonAnnotation:
    vertices: list[tuple[float, float]]
    distress_type: DistressType
    severity: Optional[Severity]  # may be None only for manholes


@dataclass
class ImageAnnotation:
    image_id: str
    width_px: int
    height_px: int
    footprint_mm: tuple[float, float]
    annotations: list[PolygonAnnotation] = field(default_factory=list)
    pci_label: Optional[float] = None


@dataclass
class DatasetStats:
    counts_by_type: dict[DistressType, int]
    counts_by_severity: dict[Severity, int]
    pci_histogram: list[tuple[float, float, int]]

    @property
    def total_annotations(self) -> int:
        return sum(self.counts_by_type.values())


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper or improper intersection of segments p1p2 and p3p4."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    def on_segment(a, b, c):
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_segment(p1, p2, p3):
        return True
    if o2 == 0 and on_segment(p1, p2, p4):
        return True
    if o3 == 0 and on_segment(p3, p4, p1):
        return True
    if o4 == 0 and on_segment(p3, p4, p2):
        return True
    return False


def polygon_is_simple(vertices: Sequence[tuple[float, float]]) -> bool:
    """Pairwise segment-intersection check; O(n^2), n stays small here.

    Adjacent edges sharing one endpoint are permitted; everything else
    touching counts as self-intersection.
    """
    n = len(vertices)
    if n < 3:
        return False
    edges = [(vertices[i], vertices[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            if adjacent:
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def validate_annotation(
    ann: PolygonAnnotation,
    width_px: int,
    height_px: int,
    image_id: str = "",
    index: int | None = None,
    strict: bool = True,
) -> None:
    if len(ann.vertices) < 3:
        raise AnnotationError("polygon needs at least 3 vertices", image_id, index)
    for x, y in ann.vertices:
        if not (0 <= x <= width_px and 0 <= y <= height_px):
            raise AnnotationError(
                f"vertex ({x}, {y}) outside image {width_px}x{height_px}",
                image_id,
                index,
            )
    if not polygon_is_simple(ann.vertices):
        raise AnnotationError("polygon is self-intersecting", image_id, index)
    if strict and ann.severity is None and ann.distress_type is not DistressType.MANHOLE:
        raise AnnotationError(
            f"missing severity on {ann.distress_type.value}", image_id, index
        )


def validate_image(image: ImageAnnotation, strict: bool = True) -> None:
    w_mm, h_mm = image.footprint_mm
    if not (w_mm > 0 and h_mm > 0):
        raise AnnotationError(
            f"footprint must be positive, got {image.footprint_mm}", image.image_id
        )
    if image.width_px <= 0 or image.height_px <= 0:
        raise AnnotationError("image dimensions must be positive", image.image_id)
    if image.pci_label is not None and not (0 <= image.pci_label <= 100):
        raise AnnotationError(f"pci_label {image.pci_label} outside [0, 100]", image.image_id)
    for i, ann in enumerate(image.annotations):
        validate_annotation(ann, image.width_px, image.height_px, image.image_id, i, strict)


def image_from_dict(doc: dict, source: str = "", strict: bool = True) -> ImageAnnotation:
    try:
        anns = []
        for i, a in enumerate(doc.get("annotations", [])):
            sev = a.get("severity")
            anns.append(
                PolygonAnnotation(
                    vertices=[(float(x), float(y)) for x, y in a["vertices"]],
                    distress_type=DistressType.parse(a["type"]),
                    severity=None if sev is None else Severity.parse(sev),
                )
            )
        image = ImageAnnotation(
            image_id=str(doc["image_id"]),
            width_px=int(doc["width_px"]),
            height_px=int(doc["height_px"]),
            footprint_mm=(float(doc["footprint_mm"][0]), float(doc["footprint_mm"][1])),
            annotations=anns,
            pci_label=None if doc.get("pci_label") is None else float(doc["pci_label"]),
        )
    except AnnotationError as exc:
        raise AnnotationError(str(exc), image_id=source or str(doc.get("image_id", ""))) from None
    except (KeyError, TypeError, IndexError) as exc:
        raise AnnotationError(f"malformed document ({exc})", image_id=source) from None
    validate_image(image, strict=strict)
    return image


def image_to_dict(image: ImageAnnotation) -> dict:
    return {
        "image_id": image.image_id,
        "width_px": image.width_px,
        "height_px": image.height_px,
        "footprint_mm": [image.footprint_mm[0], image.footprint_mm[1]],
        "annotations": [
            {
                "type": a.distress_type.value,
                "severity": None if a.severity is None else a.severity.label,
                "vertices": [[x, y] for x, y in a.vertices],
            }
            for a in image.annotations
        ],
        "pci_label": image.pci_label,
    }


def serialize_image(image: ImageAnnotation) -> str:
    """Canonical serialization: fixed key order, 2-space indent, trailing \\n."""
    return json.dumps(image_to_dict(image), indent=2) + "\n"


def load_image_annotation(path: Path | str, strict: bool = True) -> ImageAnnotation:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise AnnotationError(f"annotation file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed JSON in {path}: {exc}") from None
    return image_from_dict(doc, source=path.name, strict=strict)


def save_image_annotation(image: ImageAnnotation, path: Path | str) -> None:
    Path(path).write_text(serialize_image(image), encoding="utf-8")


def parse_dataset(root: Path | str, strict: bool = True) -> list[ImageAnnotation]:
    """Load every annotation listed in <root>/manifest.txt, sorted by image_id.

    Each annotation's image file must exist at <root>/images/<image_id>.png.
    """
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise AnnotationError(f"manifest not found: {manifest}")
    images = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        rel = line.strip()
        if not rel:
            continue
        image = load_image_annotation(root / rel, strict=strict)
        png = root / "images" / f"{image.image_id}.png"
        if not png.exists():
            raise AnnotationError(f"missing image file {png}", image.image_id)
        images.append(image)
    images.sort(key=lambda im: im.image_id)
    return images


def compute_stats(dataset: Sequence[ImageAnnotation], bin_width: float = 10.0) -> DatasetStats:
    """Exact annotation counts plus a PCI histogram over [0, 100].

    ``bin_width`` must divide 100 evenly.  Bins are [lo, hi) except the
    last, which includes 100.  Only images with a pci_label are counted
    in the histogram.  Severity counts tally annotations that carry a
    severity; typed-but-unlabeled records (a known quirk of legacy data)
    appear in counts_by_type only.
    """
    n_bins = 100.0 / bin_width
    if abs(n_bins - round(n_bins)) > 1e-9:
        raise ValueError(f"bin_width {bin_width} does not divide 100 evenly")
    n_bins = int(round(n_bins))

    by_type = {t: 0 for t in DistressType}
    by_sev = {s: 0 for s in Severity}
    bins = [0] * n_bins
    for image in dataset:
        for ann in image.annotations:
            by_type[ann.distress_type] += 1
            if ann.severity is not None:
                by_sev[ann.severity] += 1
        if image.pci_label is not None:
            idx = min(int(image.pci_label / bin_width), n_bins - 1)
            bins[idx] += 1
    histogram = [(i * bin_width, (i + 1) * bin_width, bins[i]) for i in range(n_bins)]
    return DatasetStats(by_type, by_sev, histogram)
