"""Accessors for the data files shipped inside the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .geometry import SeverityThresholds
from .pci import DeductCurveSet


def data_path(name: str) -> Path:
    return Path(str(resources.files("pavekit") / "data" / name))


def default_thresholds() -> SeverityThresholds:
    return SeverityThresholds.from_file(data_path("thresholds_default.json"))


def synthetic_curves() -> DeductCurveSet:
    return DeductCurveSet.from_file(data_path("curves_synthetic.json"))


def d6433_curves() -> DeductCurveSet:
    """Approximate digitization of the standard's curves; see its provenance note."""
    return DeductCurveSet.from_file(data_path("curves_d6433_approx.json"))
