"""Pavement condition analysis toolkit.

Polygon distress annotations, crack-width severity measurement,
deduct-curve condition scoring, a synthetic data generator, and a
desk-scale multitask network (detection + segmentation + score
regression) built on an in-package autodiff engine.
"""

__version__ = "0.1.0"

from .annotations import (  # noqa: F401
    DistressType,
    ImageAnnotation,
    PolygonAnnotation,
    Severity,
    compute_stats,
    parse_dataset,
)
from .geometry import PixelScale, SeverityThresholds, measure_width  # noqa: F401
from .model import NetConfig, PciNet  # noqa: F401
from .pci import DeductCurveSet, DistressRecord, compute_pci, label_dataset  # noqa: F401
from .synth import SynthConfig, generate  # noqa: F401
