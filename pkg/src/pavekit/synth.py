"""Seeded synthetic top-down pavement imagery with exact ground truth.

Each image is a speckled gray background with dark linear cracks
(oriented rectangles of known mm width) and dark pattern blobs (star
polygons), plus the occasional brighter manhole.  Crack severity comes
from banding the known width - the same rule the measurement workflow
applies - and the condition label is computed by the scoring engine, so
labels are consistent with the rest of the toolchain by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .annotations import (
    DistressType,
    ImageAnnotation,
    PolygonAnnotation,
    Severity,
    save_image_annotation,
    validate_image,
)
from .geometry import SeverityThresholds, rasterize
from .pci import DeductCurveSet, pci_for_image
from .resources import d6433_curves, default_thresholds
from .rng import Rng, fold_seed, uniform_array

SEVERITY_EXTRA_DARKNESS = {Severity.LOW: 0, Severity.MEDIUM: 25, Severity.HIGH: 50}


@dataclass
class SynthConfig:
    image_size_px: int = 96
    footprint_mm: tuple[float, float] = (960.0, 960.0)
    n_images: int = 20
    seed: int = 0
    crack_count_range: tuple[int, int] = (0, 2)
    blob_count_range: tuple[int, int] = (0, 1)
    crack_width_mm_range: tuple[float, float] = (12.0, 110.0)
    base_gray: int = 150
    speckle: int = 10
    distress_darkness: int = 45
    manhole_prob: float = 0.08

    def __post_init__(self):
        if self.image_size_px < 64:
            raise ValueError(f"image_size_px must be >= 64, got {self.image_size_px}")
        for name in ("crack_count_range", "blob_count_range", "crack_width_mm_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        if self.crack_width_mm_range[0] <= 0:
            raise ValueError("crack widths must be positive")
        if not (self.footprint_mm[0] > 0 and self.footprint_mm[1] > 0):
            raise ValueError(f"footprint must be positive, got {self.footprint_mm}")

    def to_dict(self) -> dict:
        return {
            "image_size_px": self.image_size_px,
            "footprint_mm": list(self.footprint_mm),
            "n_images": self.n_images,
            "seed": self.seed,
            "crack_count_range": list(self.crack_count_range),
            "blob_count_range": list(self.blob_count_range),
            "crack_width_mm_range": list(self.crack_width_mm_range),
            "base_gray": self.base_gray,
            "speckle": self.speckle,
            "distress_darkness": self.distress_darkness,
            "manhole_prob": self.manhole_prob,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        return cls(
            image_size_px=doc["image_size_px"],
            footprint_mm=tuple(doc["footprint_mm"]),
            n_images=doc["n_images"],
            seed=doc["seed"],
            crack_count_range=tuple(doc["crack_count_range"]),
            blob_count_range=tuple(doc["blob_count_range"]),
            crack_width_mm_range=tuple(doc["crack_width_mm_range"]),
            base_gray=doc["base_gray"],
            speckle=doc["speckle"],
            distress_darkness=doc["distress_darkness"],
            manhole_prob=doc["manhole_prob"],
        )


def image_id_for(index: int) -> str:
    return f"img_{index:05d}"


def _crack_polygon(rng: Rng, size: int, width_px: float, vertical: bool):
    """Oriented rectangle for a slightly slanted crack, fully in bounds."""
    margin = width_px / 2 + 2.0
    lo, hi = margin, size - margin
    start = rng.uniform(lo, 0.5 * size)
    end = min(hi, start + rng.uniform(0.18, 0.45) * size)
    along = (start, end)
    across = rng.uniform(lo + 0.05 * size, hi - 0.05 * size)
    slant = rng.uniform(-0.06, 0.06) * size
    if vertical:
        p1 = (across, along[0])
        p2 = (min(hi, max(lo, across + slant)), along[1])
    else:
        p1 = (along[0], across)
        p2 = (along[1], min(hi, max(lo, across + slant)))
    dx, dy = p2[0] - p1[0], p2[1] - p1[1]
    length = math.hypot(dx, dy)
    nx, ny = -dy / length * width_px / 2, dx / length * width_px / 2
    return [
        (p1[0] + nx, p1[1] + ny),
        (p2[0] + nx, p2[1] + ny),
        (p2[0] - nx, p2[1] - ny),
        (p1[0] - nx, p1[1] - ny),
    ]


def _star_polygon(rng: Rng, size: int, r_lo: float, r_hi: float):
    """Random star-shaped polygon around a center point.

    One angle per stratified sector keeps every angular gap below pi,
    which (with positive radii) guarantees the polygon is simple.
    """
    n = rng.randint(5, 9)
    r_max = r_hi
    cx = rng.uniform(r_max + 2, size - r_max - 2)
    cy = rng.uniform(r_max + 2, size - r_max - 2)
    angles = [2 * math.pi * (i + rng.uniform(0.05, 0.95)) / n for i in range(n)]
    pts = []
    for a in angles:
        r = rng.uniform(r_lo, r_hi)
        pts.append((cx + r * math.cos(a), cy + r * math.sin(a)))
    return pts


def render_image(
    config: SynthConfig,
    index: int,
    thresholds: Optional[SeverityThresholds] = None,
) -> tuple[np.ndarray, ImageAnnotation, np.ndarray]:
    """Build one image: (uint8 pixels, annotation without label, distress mask).

    The returned mask is exactly the union of the rasterized non-manhole
    polygons; rendering darkens precisely those pixels.
    """
    thresholds = thresholds or default_thresholds()
    size = config.image_size_px
    rng = Rng(config.seed).spawn(index)
    px_per_mm_x = size / config.footprint_mm[0]
    px_per_mm_y = size / config.footprint_mm[1]

    annotations: list[PolygonAnnotation] = []
    n_cracks = rng.randint(*config.crack_count_range)
    for _ in range(n_cracks):
        vertical = rng.random() < 0.5
        width_mm = rng.uniform(*config.crack_width_mm_range)
        width_px = width_mm * (px_per_mm_x if vertical else px_per_mm_y)
        width_px = min(width_px, 0.2 * size)
        dtype = DistressType.LONGITUDINAL if vertical else DistressType.TRANSVERSE
        severity = thresholds.band_for(dtype).band(width_mm)
        poly = _crack_polygon(rng, size, width_px, vertical)
        annotations.append(PolygonAnnotation(poly, dtype, severity))

    n_blobs = rng.randint(*config.blob_count_range)
    for _ in range(n_blobs):
        poly = _star_polygon(rng, size, 0.04 * size, 0.13 * size)
        dtype = rng.choice([DistressType.ALLIGATOR, DistressType.BLOCK, DistressType.PATCH])
        severity = rng.choice([Severity.LOW, Severity.MEDIUM, Severity.HIGH])
        annotations.append(PolygonAnnotation(poly, dtype, severity))

    manhole_mask = None
    if rng.random() < config.manhole_prob:
        poly = _star_polygon(rng, size, 0.05 * size, 0.08 * size)
        annotations.append(PolygonAnnotation(poly, DistressType.MANHOLE, None))
        manhole_mask = rasterize(poly, size, size)

    noise = uniform_array(
        fold_seed(rng.seed, "speckle"), size * size, -config.speckle, config.speckle
    ).reshape(size, size)
    pixels = np.full((size, size), float(config.base_gray)) + noise

    distress_mask = np.zeros((size, size), dtype=np.uint8)
    for ann in annotations:
        if ann.distress_type is DistressType.MANHOLE:
            continue
        mask = rasterize(ann.vertices, size, size)
        distress_mask |= mask
        dark = config.distress_darkness + SEVERITY_EXTRA_DARKNESS[ann.severity]
        pixels[mask.astype(bool)] = config.base_gray - dark + noise[mask.astype(bool)]
    if manhole_mask is not None:
        pixels[manhole_mask.astype(bool)] += 35.0

    image = ImageAnnotation(
        image_id=image_id_for(index),
        width_px=size,
        height_px=size,
        footprint_mm=config.footprint_mm,
        annotations=annotations,
    )
    return np.clip(pixels, 0, 255).astype(np.uint8), image, distress_mask


def generate(
    config: SynthConfig,
    out_dir: Path | str,
    thresholds: Optional[SeverityThresholds] = None,
    curves: Optional[DeductCurveSet] = None,
) -> list[ImageAnnotation]:
    """Write images/, annotations/, manifest.txt, config.json under out_dir."""
    thresholds = thresholds or default_thresholds()
    curves = curves or d6433_curves()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)

    labeled: list[ImageAnnotation] = []
    rel_paths: list[str] = []
    for index in range(config.n_images):
        pixels, image, _ = render_image(config, index, thresholds)
        image.pci_label = pci_for_image(image, curves, thresholds).pci
        validate_image(image)
        Image.fromarray(pixels, mode="L").save(out_dir / "images" / f"{image.image_id}.png")
        rel = f"annotations/{image.image_id}.json"
        save_image_annotation(image, out_dir / rel)
        rel_paths.append(rel)
        labeled.append(image)

    (out_dir / "manifest.txt").write_text("\n".join(rel_paths) + ("\n" if rel_paths else ""))
    (out_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    return labeled


def split_ids(ids: list[str], ratios: tuple[float, float, float], seed: int) -> tuple[list[str], list[str], list[str]]:
    """Disjoint, exhaustive, seed-deterministic shuffle split."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    shuffled = list(ids)
    Rng(seed).shuffle(shuffled)
    n = len(shuffled)
    b1 = round(n * ratios[0])
    b2 = round(n * (ratios[0] + ratios[1]))
    return shuffled[:b1], shuffled[b1:b2], shuffled[b2:]


def split_dataset(
    root: Path | str, ratios: tuple[float, float, float], seed: int
) -> dict[str, list[str]]:
    """Split manifest.txt into manifest_{train,val,test}.txt by image_id."""
    root = Path(root)
    rels = [ln.strip() for ln in (root / "manifest.txt").read_text().splitlines() if ln.strip()]
    by_id = {Path(r).stem: r for r in rels}
    train, val, test = split_ids(sorted(by_id), ratios, seed)
    out = {"train": train, "val": val, "test": test}
    for name, ids in out.items():
        lines = [by_id[i] for i in sorted(ids)]
        (root / f"manifest_{name}.txt").write_text(
            "\n".join(lines) + ("\n" if lines else "")
        )
    return out
