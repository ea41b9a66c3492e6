"""Local HTTP/JSON service over a loaded dataset, curves, and checkpoint.

All numeric answers the review UI shows come from these endpoints; the
UI never recomputes widths, severities, or condition scores.  Loaded
artifacts are immutable; inference serializes through one model
instance behind a lock.  Request/response schemas are documented in
docs/api.md and frozen by the golden-request tests.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel, Field

from .annotations import (
    AnnotationError,
    DistressType,
    ImageAnnotation,
    Severity,
    image_to_dict,
    parse_dataset,
)
from .geometry import (
    GeometryError,
    PixelScale,
    SeverityThresholds,
    ThresholdError,
    width_between,
)
from .model import PciNet, decode_detections
from .pci import (
    CurveError,
    DeductCurveSet,
    DistressRecord,
    PciError,
    compute_pci,
    pci_for_image,
)
from .resources import d6433_curves, default_thresholds

LINEAR_LABELS = ["longitudinal", "transverse"]
PATTERN_LABELS = ["alligator", "block", "patch"]


class ServiceState:
    """Immutable artifacts plus the single-writer inference lock."""

    def __init__(
        self,
        data_root: Path | str,
        thresholds: Optional[SeverityThresholds] = None,
        curves: Optional[DeductCurveSet] = None,
        net: Optional[PciNet] = None,
    ):
        self.root = Path(data_root)
        self.dataset = parse_dataset(self.root)
        self.by_id = {im.image_id: im for im in self.dataset}
        self.thresholds = thresholds or default_thresholds()
        self.curves = curves or d6433_curves()
        self.net = net
        self.infer_lock = threading.Lock()

    def image_or_none(self, image_id: str) -> Optional[ImageAnnotation]:
        return self.by_id.get(image_id)

    def scale_for(self, image: ImageAnnotation) -> PixelScale:
        return PixelScale.from_image(image.width_px, image.height_px, image.footprint_mm)


def mask_to_rle(mask: np.ndarray) -> list[int]:
    """Row-major [start, length, ...] runs over a flattened binary mask."""
    flat = np.asarray(mask).reshape(-1).astype(bool)
    if flat.size == 0:
        return []
    edges = np.flatnonzero(np.diff(flat.astype(np.int8)))
    starts = np.concatenate(([0], edges + 1))
    lengths = np.diff(np.concatenate((starts, [flat.size])))
    out = []
    for s, l in zip(starts, lengths):
        if flat[s]:
            out.extend((int(s), int(l)))
    return out


def rle_to_mask(rle: list[int], height: int, width: int) -> np.ndarray:
    flat = np.zeros(height * width, dtype=np.uint8)
    for i in range(0, len(rle), 2):
        flat[rle[i] : rle[i] + rle[i + 1]] = 1
    return flat.reshape(height, width)


class MeasureRequest(BaseModel):
    image_id: str
    p1: tuple[float, float]
    p2: tuple[float, float]


class SeverityRequest(BaseModel):
    image_id: str
    samples_px: list[float] = Field(min_length=3, max_length=3)
    distress_type: str


class RecordBody(BaseModel):
    type: str
    severity: str
    extent: float


class PciRequest(BaseModel):
    image_id: Optional[str] = None
    records: Optional[list[RecordBody]] = None
    sample_area_m2: Optional[float] = None


class InferRequest(BaseModel):
    image_id: str
    conf_threshold: float = 0.25
    nms_iou: float = 0.45


def create_app(state: ServiceState, ui_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="pavement condition service", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],  # loopback-only deployment; see serve()
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc.errors()[:1])})

    def error(status: int, detail: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"detail": detail})

    @app.get("/api/images")
    def list_images():
        return [
            {
                "image_id": im.image_id,
                "width_px": im.width_px,
                "height_px": im.height_px,
                "pci_label": im.pci_label,
            }
            for im in state.dataset
        ]

    @app.get("/api/images/{image_id}/file")
    def image_file(image_id: str):
        if state.image_or_none(image_id) is None:
            return error(404, f"unknown image {image_id!r}")
        return FileResponse(state.root / "images" / f"{image_id}.png", media_type="image/png")

    @app.get("/api/images/{image_id}/annotations")
    def image_annotations(image_id: str):
        image = state.image_or_none(image_id)
        if image is None:
            return error(404, f"unknown image {image_id!r}")
        return image_to_dict(image)

    @app.post("/api/measure")
    def measure(req: MeasureRequest):
        image = state.image_or_none(req.image_id)
        if image is None:
            return error(404, f"unknown image {req.image_id!r}")
        try:
            px = width_between(tuple(req.p1), tuple(req.p2))
            scale = state.scale_for(image)
            mm = px / scale.along(tuple(req.p1), tuple(req.p2))
        except GeometryError as exc:
            return error(400, str(exc))
        return {"px_width": px, "mm_width": mm}

    @app.post("/api/severity")
    def severity(req: SeverityRequest):
        image = state.image_or_none(req.image_id)
        if image is None:
            return error(404, f"unknown image {req.image_id!r}")
        try:
            dtype = DistressType.parse(req.distress_type)
            band = state.thresholds.band_for(dtype)
        except (AnnotationError, ThresholdError) as exc:
            return error(400, str(exc))
        scale = state.scale_for(image)
        mean_px = sum(req.samples_px) / len(req.samples_px)
        mean_mm = mean_px / scale.x_px_per_mm  # scalar widths carry no direction
        return {"mean_mm": mean_mm, "severity": band.band(mean_mm).label}

    @app.post("/api/pci")
    def pci(req: PciRequest):
        if req.image_id is not None:
            image = state.image_or_none(req.image_id)
            if image is None:
                return error(404, f"unknown image {req.image_id!r}")
            report = pci_for_image(image, state.curves, state.thresholds)
            return report.to_dict()
        if req.records is None or req.sample_area_m2 is None:
            return error(400, "need either image_id or records + sample_area_m2")
        try:
            records = [
                DistressRecord(
                    DistressType.parse(r.type), Severity.parse(r.severity), r.extent
                )
                for r in req.records
            ]
            report = compute_pci(records, req.sample_area_m2, state.curves)
        except (AnnotationError, PciError, CurveError) as exc:
            return error(400, str(exc))
        return report.to_dict()

    @app.post("/api/infer")
    def infer(req: InferRequest):
        if state.net is None:
            return error(409, "no model loaded")
        image = state.image_or_none(req.image_id)
        if image is None:
            return error(404, f"unknown image {req.image_id!r}")
        if not (0 < req.conf_threshold < 1 and 0 < req.nms_iou < 1):
            return error(400, "thresholds must lie in (0, 1)")
        png = state.root / "images" / f"{image.image_id}.png"
        pixels = np.asarray(Image.open(png).convert("L"), np.float32) / 255.0
        with state.infer_lock:
            out = state.net.forward(pixels[None, None], train=False)
        boxes = {}
        for key, raw, labels in (
            ("boxes_linear", out.det_linear, LINEAR_LABELS),
            ("boxes_pattern", out.det_pattern, PATTERN_LABELS),
        ):
            dets = decode_detections(
                [r.data[0] for r in raw], state.net.config, req.conf_threshold, req.nms_iou
            )
            boxes[key] = [dict(d.to_dict(), label=labels[d.class_idx]) for d in dets]
        mask = out.seg_logits.data[0].argmax(axis=0)
        return {
            "boxes_linear": boxes["boxes_linear"],
            "boxes_pattern": boxes["boxes_pattern"],
            "mask_rle": mask_to_rle(mask),
            "pci": float(out.pci.data[0]),
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(
    state: ServiceState,
    port: int = 8080,
    host: str = "127.0.0.1",
    ui_dir: Optional[Path] = None,
) -> None:
    import uvicorn

    uvicorn.run(create_app(state, ui_dir), host=host, port=port, log_level="warning")
