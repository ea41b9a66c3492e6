"""Target assignment, the four-term multitask loss, training, evaluation.

Loss structure: each detection head contributes class-BCE (mean over
positive anchors), objectness-BCE (mean over all anchors), and an IoU
box loss (mean over positives), combined with per-term beta weights.
Segmentation is per-pixel two-class cross entropy; the condition score
uses plain MSE on the [0, 100] scale.  The four head losses combine
linearly under gamma weights, and the reported breakdown sums to the
total exactly (same float32 accumulation order).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import nn
from .annotations import (
    DistressType,
    ImageAnnotation,
    is_linear,
    is_pattern,
    load_image_annotation,
)
from .geometry import polygon_bbox, rasterize
from .model import (
    N_LINEAR_CLASSES,
    N_PATTERN_CLASSES,
    STRIDES,
    ForwardOutputs,
    NetConfig,
    PciNet,
    decode_detections,
)
from .nn import Tensor
from .optim import AdamState, SgdState, adam_step, sgd_step, zero_grads
from .rng import Rng, fold_seed


class LossError(ValueError):
    """A loss term came out non-finite."""


@dataclass
class LossWeights:
    det1: float = 1.0  # linear-crack head
    det2: float = 1.0  # pattern-distress head
    seg: float = 1.0
    pci: float = 1.0
    cls: float = 1.0  # within-head: class term
    obj: float = 1.0  # within-head: objectness term
    box: float = 1.0  # within-head: box term

    def __post_init__(self):
        for name in ("det1", "det2", "seg", "pci", "cls", "obj", "box"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 8
    lr: float = 0.01
    optimizer: str = "sgd"  # "sgd" or "adam"
    momentum: float = 0.9
    cosine_decay: bool = True
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    anchor_match_iou: float = 1.0  # ignore non-assigned anchors above this prior IoU
    hflip: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class ScaleTargets:
    obj: np.ndarray  # (A, Hs, Ws)
    obj_mask: np.ndarray  # (A, Hs, Ws); 0 marks ignored near-matches
    cls: np.ndarray  # (A, nc, Hs, Ws)
    box: np.ndarray  # (A, 4, Hs, Ws) gt corners at positives
    pos: np.ndarray  # (A, Hs, Ws)


@dataclass
class ImageTargets:
    linear: list[ScaleTargets]
    pattern: list[ScaleTargets]
    seg: np.ndarray  # (H, W) int64, 1 = distress
    pci: float


def _wh_iou(wh_a: tuple[float, float], wh_b: tuple[float, float]) -> float:
    inter = min(wh_a[0], wh_b[0]) * min(wh_a[1], wh_b[1])
    union = wh_a[0] * wh_a[1] + wh_b[0] * wh_b[1] - inter
    return inter / union if union > 0 else 0.0


def _empty_scale(config: NetConfig, scale_idx: int, nc: int) -> ScaleTargets:
    h, w = config.input_hw
    s = STRIDES[scale_idx]
    a = config.n_anchors
    hs, ws = h // s, w // s
    return ScaleTargets(
        obj=np.zeros((a, hs, ws), np.float32),
        obj_mask=np.ones((a, hs, ws), np.float32),
        cls=np.zeros((a, nc, hs, ws), np.float32),
        box=np.zeros((a, 4, hs, ws), np.float32),
        pos=np.zeros((a, hs, ws), np.float32),
    )


def assign_targets(
    image: ImageAnnotation, config: NetConfig, anchor_match_iou: float = 1.0
) -> ImageTargets:
    """Route each polygon's bbox to one head, one scale, one anchor, one cell.

    Best prior by width/height IoU across both scales; first annotation
    wins an occupied slot.  Manholes are skipped entirely.  The
    segmentation target is the union mask of all non-manhole polygons.
    """
    heads = {
        "linear": [_empty_scale(config, i, N_LINEAR_CLASSES) for i in range(len(STRIDES))],
        "pattern": [_empty_scale(config, i, N_PATTERN_CLASSES) for i in range(len(STRIDES))],
    }
    class_index = {
        DistressType.LONGITUDINAL: 0,
        DistressType.TRANSVERSE: 1,
        DistressType.ALLIGATOR: 0,
        DistressType.BLOCK: 1,
        DistressType.PATCH: 2,
    }
    seg = np.zeros((image.height_px, image.width_px), np.uint8)
    for ann in image.annotations:
        if ann.distress_type is DistressType.MANHOLE:
            continue
        seg |= rasterize(ann.vertices, image.width_px, image.height_px)
        head = "linear" if is_linear(ann.distress_type) else "pattern"
        x1, y1, x2, y2 = polygon_bbox(ann.vertices)
        gw, gh = x2 - x1, y2 - y1
        if gw <= 0 or gh <= 0:
            continue
        cx, cy = (x1 + x2) / 2.0, (y1 + y2) / 2.0
        ious = [
            [( _wh_iou((gw, gh), anchor), si, ai) for ai, anchor in enumerate(scale_anchors)]
            for si, scale_anchors in enumerate(config.anchors)
        ]
        flat = [item for sub in ious for item in sub]
        best_iou, si, ai = max(flat, key=lambda t: (t[0], -t[1], -t[2]))
        stride = STRIDES[si]
        gx = min(int(cx // stride), config.input_hw[1] // stride - 1)
        gy = min(int(cy // stride), config.input_hw[0] // stride - 1)
        tgt = heads[head][si]
        if tgt.pos[ai, gy, gx] == 1.0:
            continue  # slot already claimed by an earlier annotation
        tgt.pos[ai, gy, gx] = 1.0
        tgt.obj[ai, gy, gx] = 1.0
        tgt.obj_mask[ai, gy, gx] = 1.0
        tgt.cls[ai, class_index[ann.distress_type], gy, gx] = 1.0
        tgt.box[ai, :, gy, gx] = (x1, y1, x2, y2)
        if anchor_match_iou < 1.0:
            # mask out non-assigned anchors whose prior closely matches too
            for iou, osi, oai in flat:
                if (osi, oai) != (si, ai) and iou >= anchor_match_iou:
                    ot = heads[head][osi]
                    ogx = min(int(cx // STRIDES[osi]), config.input_hw[1] // STRIDES[osi] - 1)
                    ogy = min(int(cy // STRIDES[osi]), config.input_hw[0] // STRIDES[osi] - 1)
                    if ot.pos[oai, ogy, ogx] == 0.0:
                        ot.obj_mask[oai, ogy, ogx] = 0.0
    if image.pci_label is None:
        raise ValueError(f"{image.image_id}: pci_label required for training targets")
    return ImageTargets(heads["linear"], heads["pattern"], seg.astype(np.int64), image.pci_label)


def _stack_scale(targets: Sequence[ImageTargets], head: str, si: int) -> ScaleTargets:
    items = [getattr(t, head)[si] for t in targets]
    return ScaleTargets(
        obj=np.stack([i.obj for i in items]),
        obj_mask=np.stack([i.obj_mask for i in items]),
        cls=np.stack([i.cls for i in items]),
        box=np.stack([i.box for i in items]),
        pos=np.stack([i.pos for i in items]),
    )


def _decode_boxes_tape(raw: Tensor, config: NetConfig, si: int, nc: int) -> Tensor:
    """Raw grid -> (N*A*Hs*Ws, 4) decoded corner boxes, differentiable."""
    n = raw.data.shape[0]
    a = config.n_anchors
    hs, ws = raw.data.shape[2], raw.data.shape[3]
    stride = float(STRIDES[si])
    r5 = nn.reshape(raw, (n, a, 5 + nc, hs, ws))
    txy = nn.narrow(r5, 2, 0, 2)
    twh = nn.narrow(r5, 2, 2, 2)
    gy, gx = np.meshgrid(np.arange(hs, dtype=np.float32), np.arange(ws, dtype=np.float32), indexing="ij")
    grid = Tensor(np.stack([gx, gy])[None, None])  # (1, 1, 2, hs, ws)
    cxy = nn.mul(nn.add(nn.sigmoid(txy), grid), Tensor(np.float32(stride)))
    anchors = np.asarray(config.anchors[si], np.float32).reshape(1, a, 2, 1, 1)
    swh = nn.sigmoid(twh)
    wh = nn.mul(nn.mul(swh, swh), Tensor(4.0 * anchors))
    half = nn.mul(wh, Tensor(np.float32(0.5)))
    corners = nn.concat([nn.sub(cxy, half), nn.add(cxy, half)], axis=2)  # (n, a, 4, hs, ws)
    return nn.reshape(nn.permute(corners, (0, 1, 3, 4, 2)), (n * a * hs * ws, 4))


def _head_loss(
    raw_scales: list[Tensor],
    stacked: list[ScaleTargets],
    config: NetConfig,
    nc: int,
    w: LossWeights,
) -> Tensor:
    obj_sums = []
    obj_counts = 0.0
    cls_sums = []
    box_parts = []
    pos_total = 0.0
    n = raw_scales[0].data.shape[0]
    a = config.n_anchors
    for si, (raw, tgt) in enumerate(zip(raw_scales, stacked)):
        hs, ws = raw.data.shape[2], raw.data.shape[3]
        r5 = nn.reshape(raw, (n, a, 5 + nc, hs, ws))
        obj_logits = nn.reshape(nn.narrow(r5, 2, 4, 1), (n, a, hs, ws))
        cls_logits = nn.narrow(r5, 2, 5, nc)
        obj_bce = nn.bce_with_logits(obj_logits, tgt.obj)
        obj_sums.append(nn.sum_all(nn.mul(obj_bce, Tensor(tgt.obj_mask))))
        obj_counts += float(tgt.obj_mask.sum())
        cls_bce = nn.bce_with_logits(cls_logits, tgt.cls)
        cls_sums.append(nn.sum_all(nn.mul(cls_bce, Tensor(tgt.pos[:, :, None]))))
        pred_boxes = _decode_boxes_tape(raw, config, si, nc)
        tgt_boxes = np.transpose(tgt.box, (0, 1, 3, 4, 2)).reshape(-1, 4)
        box_parts.append((pred_boxes, tgt_boxes, tgt.pos.reshape(-1)))
        pos_total += float(tgt.pos.sum())

    l_obj = nn.mul(_sum_tensors(obj_sums), Tensor(np.float32(1.0 / max(1.0, obj_counts))))
    l_cls = nn.mul(_sum_tensors(cls_sums), Tensor(np.float32(1.0 / (max(1.0, pos_total) * nc))))
    pred_all = nn.concat([p for p, _, _ in box_parts], axis=0)
    tgt_all = np.concatenate([t for _, t, _ in box_parts], axis=0)
    mask_all = np.concatenate([m for _, _, m in box_parts], axis=0)
    l_box = nn.iou_loss(pred_all, tgt_all, mask_all)
    return _sum_tensors(
        [
            nn.mul(l_cls, Tensor(np.float32(w.cls))),
            nn.mul(l_obj, Tensor(np.float32(w.obj))),
            nn.mul(l_box, Tensor(np.float32(w.box))),
        ]
    )


def _sum_tensors(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = nn.add(acc, t)
    return acc


def total_loss(
    outputs: ForwardOutputs,
    targets: Sequence[ImageTargets],
    weights: Optional[LossWeights] = None,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted multitask loss; breakdown values sum to the total exactly.

    Breakdown keys l_det1/l_det2/l_seg/l_pci hold the gamma-weighted
    terms in the accumulation order ((det1 + det2) + seg) + pci.
    Raises LossError naming the first non-finite term.
    """
    w = weights or LossWeights()
    net_config = outputs.net_config
    if net_config is None:
        raise ValueError("outputs carry no net config; use PciNet.forward")

    det1 = _head_loss(outputs.det_linear, [_stack_scale(targets, "linear", i) for i in range(len(STRIDES))], net_config, N_LINEAR_CLASSES, w)
    det2 = _head_loss(outputs.det_pattern, [_stack_scale(targets, "pattern", i) for i in range(len(STRIDES))], net_config, N_PATTERN_CLASSES, w)
    seg_target = np.stack([t.seg for t in targets])
    seg = nn.softmax_cross_entropy(outputs.seg_logits, seg_target)
    pci_target = Tensor(np.array([t.pci for t in targets], np.float32))
    pci = nn.mse(outputs.pci, pci_target)

    weighted = {
        "l_det1": nn.mul(det1, Tensor(np.float32(w.det1))),
        "l_det2": nn.mul(det2, Tensor(np.float32(w.det2))),
        "l_seg": nn.mul(seg, Tensor(np.float32(w.seg))),
        "l_pci": nn.mul(pci, Tensor(np.float32(w.pci))),
    }
    for name, term in weighted.items():
        if not np.isfinite(term.data):
            raise LossError(f"{name} is non-finite")
    total = _sum_tensors(list(weighted.values()))
    breakdown = {name: float(term.data) for name, term in weighted.items()}
    return total, breakdown


# ---------------------------------------------------------------------------
# data plumbing


@dataclass
class Sample:
    image: np.ndarray  # (1, H, W) float32 in [0, 1]
    annotation: ImageAnnotation
    targets: ImageTargets


def load_samples(
    root: Path | str,
    manifest: str = "manifest.txt",
    config: Optional[NetConfig] = None,
    anchor_match_iou: float = 1.0,
) -> list[Sample]:
    root = Path(root)
    config = config or NetConfig()
    rels = [
        ln.strip()
        for ln in (root / manifest).read_text().splitlines()
        if ln.strip()
    ]
    samples = []
    for rel in sorted(rels):
        ann = load_image_annotation(root / rel)
        png = root / "images" / f"{ann.image_id}.png"
        pixels = np.asarray(Image.open(png).convert("L"), np.float32) / 255.0
        samples.append(
            Sample(pixels[None], ann, assign_targets(ann, config, anchor_match_iou))
        )
    return samples


def _hflip_sample(sample: Sample, config: NetConfig, anchor_match_iou: float) -> Sample:
    ann = sample.annotation
    w = ann.width_px
    flipped = ImageAnnotation(
        image_id=ann.image_id,
        width_px=ann.width_px,
        height_px=ann.height_px,
        footprint_mm=ann.footprint_mm,
        annotations=[
            replace(a, vertices=[(w - x, y) for x, y in a.vertices])
            for a in ann.annotations
        ],
        pci_label=ann.pci_label,
    )
    return Sample(
        sample.image[:, :, ::-1].copy(),
        flipped,
        assign_targets(flipped, config, anchor_match_iou),
    )


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    checkpoint: Path
    metrics_log: Path
    epochs_run: int
    steps_run: int
    best_val_mape: float
    diverged: bool = False


def _forward_batch(net: PciNet, samples: list[Sample], train: bool) -> ForwardOutputs:
    return net.forward(np.stack([s.image for s in samples]), train=train)


def predict_pci(net: PciNet, samples: Sequence[Sample], batch_size: int = 16) -> np.ndarray:
    preds = []
    for i in range(0, len(samples), batch_size):
        chunk = list(samples[i : i + batch_size])
        out = net.forward(np.stack([s.image for s in chunk]), train=False)
        preds.extend(float(v) for v in out.pci.data)
    return np.array(preds)


def mape(actual: np.ndarray, predicted: np.ndarray, eps: float = 1.0) -> float:
    """Mean absolute percentage error with max(y, eps) denominators."""
    actual = np.asarray(actual, np.float64)
    predicted = np.asarray(predicted, np.float64)
    return float(100.0 * np.mean(np.abs(actual - predicted) / np.maximum(actual, eps)))


def r_squared(actual: np.ndarray, predicted: np.ndarray) -> float:
    actual = np.asarray(actual, np.float64)
    predicted = np.asarray(predicted, np.float64)
    if len(actual) < 2:
        raise ValueError("R^2 needs at least 2 points")
    ss_res = float(np.sum((actual - predicted) ** 2))
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def train(
    train_samples: list[Sample],
    val_samples: list[Sample],
    net: PciNet,
    config: TrainConfig,
    out_dir: Path | str,
) -> TrainResult:
    """Deterministic training; saves the best-by-val-MAPE checkpoint.

    The epoch-0 checkpoint is the initialization, so zero epochs leaves
    it untouched.  A non-finite loss aborts immediately with the last
    good checkpoint retained.
    """
    if not train_samples:
        raise ValueError("train split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "best.bin"
    metrics_path = out_dir / "metrics.ndjson"

    net.save(ckpt_path)  # initialization is the fallback checkpoint
    labels_val = np.array([s.annotation.pci_label for s in val_samples])
    best_mape = math.inf
    if val_samples:
        best_mape = mape(labels_val, predict_pci(net, val_samples))

    opt_state = SgdState() if config.optimizer == "sgd" else AdamState()
    steps = 0
    diverged = False
    lines = []
    epochs_run = 0
    for epoch in range(config.epochs):
        order = list(range(len(train_samples)))
        rng = Rng(fold_seed(config.seed, f"epoch-{epoch}"))
        rng.shuffle(order)
        lr = config.lr
        if config.cosine_decay and config.epochs > 1:
            t = epoch / (config.epochs - 1)
            lr = config.lr * (0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * t)))
        term_sums: dict[str, float] = {}
        n_batches = 0
        ok = True
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            batch = [train_samples[i] for i in batch_idx]
            if config.hflip:
                batch = [
                    _hflip_sample(s, net.config, config.anchor_match_iou)
                    if rng.random() < 0.5
                    else s
                    for s in batch
                ]
            zero_grads(net.params)
            out = _forward_batch(net, batch, train=True)
            try:
                loss, breakdown = total_loss(out, [s.targets for s in batch], config.weights)
            except LossError:
                diverged = True
                ok = False
                break
            nn.backward(loss)
            if config.optimizer == "sgd":
                sgd_step(net.params, opt_state, lr, config.momentum)
            else:
                adam_step(net.params, opt_state, lr)
            steps += 1
            n_batches += 1
            for k, v in breakdown.items():
                term_sums[k] = term_sums.get(k, 0.0) + v
            term_sums["total"] = term_sums.get("total", 0.0) + float(loss.data)
        if not ok:
            break
        epochs_run += 1
        record = {"epoch": epoch}
        for k in ("l_det1", "l_det2", "l_seg", "l_pci", "total"):
            record[k] = term_sums.get(k, 0.0) / max(1, n_batches)
        if val_samples:
            preds = predict_pci(net, val_samples)
            record["val_mape"] = mape(labels_val, preds)
            record["val_r2"] = r_squared(labels_val, preds) if len(val_samples) >= 2 else None
            if record["val_mape"] < best_mape:
                best_mape = record["val_mape"]
                net.save(ckpt_path)
        else:
            record["val_mape"] = None
            record["val_r2"] = None
            net.save(ckpt_path)
        lines.append(json.dumps(record))
    metrics_path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return TrainResult(
        checkpoint=ckpt_path,
        metrics_log=metrics_path,
        epochs_run=epochs_run,
        steps_run=steps,
        best_val_mape=best_mape,
        diverged=diverged,
    )


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    r2: float
    mape_pct: float
    scatter: list[tuple[float, float]]  # (actual, predicted)
    histogram: list[tuple[float, float, int]]  # actual-label histogram
    seg_pixel_accuracy: Optional[float] = None
    detection_summary: Optional[dict] = None

    def to_dict(self) -> dict:
        doc = {
            "r2": self.r2,
            "mape_pct": self.mape_pct,
            "scatter": [[a, p] for a, p in self.scatter],
            "histogram": [[lo, hi, n] for lo, hi, n in self.histogram],
        }
        if self.seg_pixel_accuracy is not None:
            doc["seg_pixel_accuracy"] = self.seg_pixel_accuracy
        if self.detection_summary is not None:
            doc["detection"] = self.detection_summary
        return doc


def evaluate(
    net: PciNet,
    samples: Sequence[Sample],
    bin_width: float = 10.0,
    with_detections: bool = False,
) -> EvalReport:
    """Score a split: R^2, MAPE, scatter pairs, label histogram."""
    if not samples:
        raise ValueError("evaluation split is empty")
    if len(samples) < 2:
        raise ValueError("R^2 is undefined for fewer than 2 samples")
    actual = np.array([s.annotation.pci_label for s in samples])
    predicted = predict_pci(net, samples)

    n_bins = int(round(100.0 / bin_width))
    counts = [0] * n_bins
    for y in actual:
        counts[min(int(y / bin_width), n_bins - 1)] += 1
    histogram = [(i * bin_width, (i + 1) * bin_width, counts[i]) for i in range(n_bins)]

    seg_acc = 0.0
    for i in range(0, len(samples), 16):
        chunk = list(samples[i : i + 16])
        out = net.forward(np.stack([s.image for s in chunk]), train=False)
        pred_mask = out.seg_logits.data.argmax(axis=1)
        tgt = np.stack([s.targets.seg for s in chunk])
        seg_acc += float((pred_mask == tgt).mean()) * len(chunk)
    seg_acc /= len(samples)

    detection = None
    if with_detections:
        detection = _detection_summary(net, samples)

    return EvalReport(
        r2=r_squared(actual, predicted),
        mape_pct=mape(actual, predicted),
        scatter=[(float(a), float(p)) for a, p in zip(actual, predicted)],
        histogram=histogram,
        seg_pixel_accuracy=seg_acc,
        detection_summary=detection,
    )


def _detection_summary(net: PciNet, samples: Sequence[Sample], conf: float = 0.25, iou: float = 0.5) -> dict:
    """Informational precision/recall at one operating point."""
    tp = fp = fn = 0
    for s in samples:
        out = net.forward(s.image[None], train=False)
        for head, raw in (("linear", out.det_linear), ("pattern", out.det_pattern)):
            dets = decode_detections([r.data[0] for r in raw], net.config, conf, 0.45)
            gts = []
            for ann in s.annotation.annotations:
                routed = "linear" if is_linear(ann.distress_type) else (
                    "pattern" if is_pattern(ann.distress_type) else None
                )
                if routed == head:
                    gts.append(polygon_bbox(ann.vertices))
            matched = set()
            for det in dets:
                hit = None
                for gi, gt in enumerate(gts):
                    if gi in matched:
                        continue
                    if _box_iou(det.box_xyxy, gt) >= iou:
                        hit = gi
                        break
                if hit is None:
                    fp += 1
                else:
                    matched.add(hit)
                    tp += 1
            fn += len(gts) - len(matched)
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    return {"tp": tp, "fp": fp, "fn": fn, "precision": precision, "recall": recall}


def _box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0
