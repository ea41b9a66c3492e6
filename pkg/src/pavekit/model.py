"""Multitask pavement network.

One shared encoder (conv stem + three CSP downsampling stages to /4,
/8, /16) feeds a neck with spatial-pyramid pooling at /16, a top-down
merge back to /8, and a bottom-up merge to /16.  Four heads read the
neck: a linear-crack detector and a pattern-distress detector (each at
/8 and /16), a segmentation head upsampled back to full resolution, and
a condition-score regressor that channel-aligns the segmentation output
and both detectors' penultimate features, pools each to a common grid,
concatenates, and maps through two fully-connected layers to a scalar
squashed into [0, 100].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .checkpoint import load_arrays, save_arrays
from .nn import BatchNormState, Tensor
from .rng import fold_seed, uniform_array

N_LINEAR_CLASSES = 2  # longitudinal, transverse
N_PATTERN_CLASSES = 3  # alligator, block, patch
STRIDES = (8, 16)


@dataclass
class NetConfig:
    in_channels: int = 1
    base_width: int = 16
    input_hw: tuple[int, int] = (96, 96)
    anchors: tuple[tuple[tuple[float, float], ...], ...] = (
        ((10.0, 36.0), (36.0, 10.0), (20.0, 20.0)),  # stride 8
        ((16.0, 64.0), (64.0, 16.0), (44.0, 44.0)),  # stride 16
    )
    pci_pool_hw: tuple[int, int] = (6, 6)
    pci_hidden: int = 64

    def __post_init__(self):
        h, w = self.input_hw
        if h % 16 or w % 16:
            raise ValueError(f"input_hw must be divisible by 16, got {self.input_hw}")
        if any(len(a) < 1 for a in self.anchors) or len(self.anchors) != len(STRIDES):
            raise ValueError("need at least one anchor for each of the two scales")
        if self.base_width < 2:
            raise ValueError("base_width must be at least 2")

    @property
    def n_anchors(self) -> int:
        return len(self.anchors[0])

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "base_width": self.base_width,
            "input_hw": list(self.input_hw),
            "anchors": [[list(a) for a in scale] for scale in self.anchors],
            "pci_pool_hw": list(self.pci_pool_hw),
            "pci_hidden": self.pci_hidden,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetConfig":
        return cls(
            in_channels=doc["in_channels"],
            base_width=doc["base_width"],
            input_hw=tuple(doc["input_hw"]),
            anchors=tuple(tuple(tuple(a) for a in scale) for scale in doc["anchors"]),
            pci_pool_hw=tuple(doc["pci_pool_hw"]),
            pci_hidden=doc["pci_hidden"],
        )


@dataclass
class ForwardOutputs:
    det_linear: list[Tensor]  # per scale (N, A*(5+2), Hs, Ws)
    det_pattern: list[Tensor]  # per scale (N, A*(5+3), Hs, Ws)
    seg_logits: Tensor  # (N, 2, H, W)
    pci: Tensor  # (N,), in [0, 100]
    det_linear_feat: Tensor = None  # /16 penultimate, feeds the score head
    det_pattern_feat: Tensor = None
    net_config: "NetConfig" = None


@dataclass
class Detection:
    box_xyxy: tuple[float, float, float, float]
    class_idx: int
    score: float

    def to_dict(self) -> dict:
        return {"box": list(self.box_xyxy), "class_idx": self.class_idx, "score": self.score}


class PciNet:
    """Named parameter store plus the functional forward pass."""

    def __init__(self, config: NetConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}
        self._seed: Optional[int] = None

    # -- construction -------------------------------------------------

    @classmethod
    def build(cls, config: NetConfig, seed: int) -> "PciNet":
        net = cls(config)
        net._seed = seed
        b = config.base_width
        a = config.n_anchors

        net._add_conv_bn("stem", config.in_channels, b, k=3)
        net._add_conv_bn("enc1.down", b, 2 * b, k=3)
        net._add_csp("enc1.csp", 2 * b, 2 * b)
        net._add_conv_bn("enc2.down", 2 * b, 4 * b, k=3)
        net._add_csp("enc2.csp", 4 * b, 4 * b)
        net._add_conv_bn("enc3.down", 4 * b, 8 * b, k=3)
        net._add_csp("enc3.csp", 8 * b, 8 * b)

        net._add_conv_bn("neck.spp.merge", 32 * b, 8 * b, k=1)
        net._add_conv_bn("neck.lateral", 8 * b, 4 * b, k=1)
        net._add_csp("neck.p3", 8 * b, 4 * b)
        net._add_conv_bn("neck.down", 4 * b, 4 * b, k=3)
        net._add_csp("neck.p4", 8 * b, 8 * b)

        for head, nc in (("det_linear", N_LINEAR_CLASSES), ("det_pattern", N_PATTERN_CLASSES)):
            net._add_conv_bn(f"{head}.s8.feat", 4 * b, 2 * b, k=3)
            net._add_conv(f"{head}.s8.out", 2 * b, a * (5 + nc), k=1, bias=True)
            net._add_conv_bn(f"{head}.s16.feat", 8 * b, 4 * b, k=3)
            net._add_conv(f"{head}.s16.out", 4 * b, a * (5 + nc), k=1, bias=True)

        half = max(1, b // 2)
        net._add_csp("seg.csp", 4 * b, 2 * b)
        net._add_conv_bn("seg.c1", 2 * b, b, k=3)
        net._add_conv_bn("seg.c2", b, half, k=3)
        net._add_conv_bn("seg.c3", half, half, k=3)
        net._add_conv("seg.out", half, 2, k=1, bias=True)

        net._add_conv("pci.align_linear", 4 * b, 2, k=1, bias=True)
        net._add_conv("pci.align_pattern", 4 * b, 2, k=1, bias=True)
        ph, pw = config.pci_pool_hw
        net._add_linear("pci.fc1", 3 * 2 * ph * pw, config.pci_hidden)
        net._add_linear("pci.fc2", config.pci_hidden, 1)
        return net

    def _init_weight(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        bound = math.sqrt(6.0 / fan_in)  # Kaiming-uniform
        n = int(np.prod(shape))
        data = uniform_array(fold_seed(self._seed, name), n, -bound, bound).reshape(shape)
        return Tensor(data, requires_grad=True)

    def _add_conv(self, name: str, c_in: int, c_out: int, k: int, bias: bool = False) -> None:
        self.params[f"{name}.w"] = self._init_weight(name + ".w", (c_out, c_in, k, k), c_in * k * k)
        if bias:
            self.params[f"{name}.b"] = Tensor(np.zeros(c_out, np.float32), requires_grad=True)

    def _add_conv_bn(self, name: str, c_in: int, c_out: int, k: int) -> None:
        self._add_conv(name, c_in, c_out, k, bias=False)
        self.params[f"{name}.bn.g"] = Tensor(np.ones(c_out, np.float32), requires_grad=True)
        self.params[f"{name}.bn.b"] = Tensor(np.zeros(c_out, np.float32), requires_grad=True)
        self.bn[name] = BatchNormState(c_out)

    def _add_csp(self, name: str, c_in: int, c_out: int) -> None:
        mid = max(1, c_out // 2)
        self._add_conv_bn(f"{name}.a", c_in, mid, k=1)
        self._add_conv_bn(f"{name}.b", c_in, mid, k=1)
        self._add_conv_bn(f"{name}.inner", mid, mid, k=3)
        self._add_conv_bn(f"{name}.merge", 2 * mid, c_out, k=1)

    def _add_linear(self, name: str, n_in: int, n_out: int) -> None:
        self.params[f"{name}.w"] = self._init_weight(name + ".w", (n_in, n_out), n_in)
        self.params[f"{name}.b"] = Tensor(np.zeros(n_out, np.float32), requires_grad=True)

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward ------------------------------------------------------

    def _conv_bn(self, name: str, x: Tensor, stride: int = 1, train: bool = False,
                 update_stats: bool = True) -> Tensor:
        w = self.params[f"{name}.w"]
        k = w.data.shape[2]
        out = nn.conv2d(x, w, None, stride=stride, pad=k // 2)
        out = nn.batchnorm2d(
            out,
            self.params[f"{name}.bn.g"],
            self.params[f"{name}.bn.b"],
            self.bn[name],
            train=train,
            update_stats=update_stats,
        )
        return nn.silu(out)

    def _conv(self, name: str, x: Tensor) -> Tensor:
        w = self.params[f"{name}.w"]
        k = w.data.shape[2]
        return nn.conv2d(x, w, self.params.get(f"{name}.b"), stride=1, pad=k // 2)

    def _csp(self, name: str, x: Tensor, train: bool, update_stats: bool) -> Tensor:
        a = self._conv_bn(f"{name}.a", x, train=train, update_stats=update_stats)
        bpath = self._conv_bn(f"{name}.b", x, train=train, update_stats=update_stats)
        bpath = self._conv_bn(f"{name}.inner", bpath, train=train, update_stats=update_stats)
        merged = nn.concat([a, bpath], axis=1)
        return self._conv_bn(f"{name}.merge", merged, train=train, update_stats=update_stats)

    def forward(self, images, train: bool = False, update_stats: Optional[bool] = None) -> ForwardOutputs:
        """images: (N, C, H, W) matching the config; returns all heads."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        n, c, h, w = x.data.shape
        if c != self.config.in_channels or (h, w) != tuple(self.config.input_hw):
            raise nn.ShapeError(
                f"input {x.data.shape} does not match config "
                f"({self.config.in_channels}, {self.config.input_hw})"
            )
        us = train if update_stats is None else update_stats

        def cb(name, t, stride=1):
            return self._conv_bn(name, t, stride=stride, train=train, update_stats=us)

        stem = cb("stem", x, stride=2)  # /2
        e1 = self._csp("enc1.csp", cb("enc1.down", stem, stride=2), train, us)  # /4
        e2 = self._csp("enc2.csp", cb("enc2.down", e1, stride=2), train, us)  # /8
        e3 = self._csp("enc3.csp", cb("enc3.down", e2, stride=2), train, us)  # /16

        spp = nn.concat(
            [
                e3,
                nn.max_pool2d(e3, 5, stride=1, pad=2),
                nn.max_pool2d(e3, 9, stride=1, pad=4),
                nn.max_pool2d(e3, 13, stride=1, pad=6),
            ],
            axis=1,
        )
        spp = cb("neck.spp.merge", spp)
        lateral = cb("neck.lateral", spp)  # /16, 4b
        p3 = self._csp("neck.p3", nn.concat([nn.upsample_nearest2x(lateral), e2], axis=1), train, us)
        p4 = self._csp("neck.p4", nn.concat([cb("neck.down", p3, stride=2), lateral], axis=1), train, us)

        det_outs = {}
        det_feats = {}
        for head in ("det_linear", "det_pattern"):
            f8 = cb(f"{head}.s8.feat", p3)
            f16 = cb(f"{head}.s16.feat", p4)
            det_outs[head] = [self._conv(f"{head}.s8.out", f8), self._conv(f"{head}.s16.out", f16)]
            det_feats[head] = f16  # penultimate feature, consumed by the score head

        s = self._csp("seg.csp", p3, train, us)  # /8
        s = nn.upsample_nearest2x(cb("seg.c1", s))  # /4
        s = nn.upsample_nearest2x(cb("seg.c2", s))  # /2
        s = nn.upsample_nearest2x(cb("seg.c3", s))  # /1
        seg_logits = self._conv("seg.out", s)

        pooled = [
            nn.adaptive_avg_pool2d(seg_logits, self.config.pci_pool_hw),
            nn.adaptive_avg_pool2d(self._conv("pci.align_linear", det_feats["det_linear"]), self.config.pci_pool_hw),
            nn.adaptive_avg_pool2d(self._conv("pci.align_pattern", det_feats["det_pattern"]), self.config.pci_pool_hw),
        ]
        z = nn.flatten(nn.concat(pooled, axis=1))
        z = nn.silu(nn.linear(z, self.params["pci.fc1.w"], self.params["pci.fc1.b"]))
        z = nn.linear(z, self.params["pci.fc2.w"], self.params["pci.fc2.b"])
        pci = nn.reshape(nn.mul(nn.sigmoid(z), nn.Tensor(np.float32(100.0))), (n,))

        return ForwardOutputs(
            det_linear=det_outs["det_linear"],
            det_pattern=det_outs["det_pattern"],
            seg_logits=seg_logits,
            pci=pci,
            det_linear_feat=det_feats["det_linear"],
            det_pattern_feat=det_feats["det_pattern"],
            net_config=self.config,
        )

    # -- persistence ---------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: p.data for name, p in self.params.items()}
        for name, st in self.bn.items():
            arrays[f"{name}.bn.running_mean"] = st.mean
            arrays[f"{name}.bn.running_var"] = st.var
        return arrays

    def save(self, path: Path | str) -> None:
        path = Path(path)
        save_arrays(self.state_arrays(), path)
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(self.to_dict_config(), indent=2) + "\n", encoding="utf-8"
        )

    def to_dict_config(self) -> dict:
        return self.config.to_dict()

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise nn.ShapeError(
                    f"{name}: checkpoint {arrays[name].shape} vs model {p.data.shape}"
                )
            p.data = arrays[name].astype(np.float32)
        for name, st in self.bn.items():
            st.mean = arrays[f"{name}.bn.running_mean"].astype(np.float32)
            st.var = arrays[f"{name}.bn.running_var"].astype(np.float32)

    @classmethod
    def load(cls, path: Path | str) -> "PciNet":
        path = Path(path)
        config = NetConfig.from_dict(
            json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
        )
        net = cls.build(config, seed=0)
        net.load_state(load_arrays(path))
        return net


def grid_shapes(config: NetConfig) -> list[tuple[int, int]]:
    h, w = config.input_hw
    return [(h // s, w // s) for s in STRIDES]


def decode_boxes_np(raw: np.ndarray, anchors, stride: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw head grid -> (boxes_xyxy, obj, cls) numpy arrays.

    raw: (A*(5+nc), H, W) for one image at one scale.  Centers are
    sigmoid offsets within the responsible cell; sizes scale the anchor
    by (2*sigmoid)^2, keeping them positive and bounded.
    """
    a = len(anchors)
    nc = raw.shape[0] // a - 5
    hs, ws = raw.shape[1:]
    r = raw.reshape(a, 5 + nc, hs, ws)
    sig = 1.0 / (1.0 + np.exp(-r.astype(np.float64)))
    gy, gx = np.meshgrid(np.arange(hs), np.arange(ws), indexing="ij")
    anchors = np.asarray(anchors, dtype=np.float64)
    cx = (sig[:, 0] + gx) * stride
    cy = (sig[:, 1] + gy) * stride
    bw = (2.0 * sig[:, 2]) ** 2 * anchors[:, 0, None, None]
    bh = (2.0 * sig[:, 3]) ** 2 * anchors[:, 1, None, None]
    boxes = np.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], axis=-1)
    return boxes, sig[:, 4], sig[:, 5:]


def _iou_xyxy(a: np.ndarray, b: np.ndarray) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def decode_detections(
    per_scale_raw: list[np.ndarray],
    config: NetConfig,
    conf_threshold: float = 0.25,
    nms_iou: float = 0.45,
) -> list[Detection]:
    """Threshold, per-class score, and greedy NMS for one image.

    Candidate order (score desc, then flat grid index) fixes ties, so
    output is deterministic.
    """
    if not (0 < conf_threshold < 1 and 0 < nms_iou < 1):
        raise ValueError("thresholds must lie in (0, 1)")
    candidates = []
    flat_base = 0
    for raw, anchors, stride in zip(per_scale_raw, config.anchors, STRIDES):
        boxes, obj, cls = decode_boxes_np(raw, anchors, stride)
        a, hs, ws = obj.shape
        scores = obj[None] * cls.transpose(1, 0, 2, 3)  # (nc, a, h, w)
        nc = scores.shape[0]
        for ci in range(nc):
            sel = np.argwhere(scores[ci] >= conf_threshold)
            for ai, yi, xi in sel:
                flat = flat_base + (int(ai) * hs + int(yi)) * ws + int(xi)
                candidates.append(
                    (float(scores[ci, ai, yi, xi]), flat, ci, boxes[ai, yi, xi])
                )
        flat_base += a * hs * ws
    candidates.sort(key=lambda c: (-c[0], c[1]))
    kept: list[Detection] = []
    for score, _, ci, box in candidates:
        if any(
            d.class_idx == ci and _iou_xyxy(np.array(d.box_xyxy), box) >= nms_iou
            for d in kept
        ):
            continue
        kept.append(Detection(tuple(float(v) for v in box), ci, score))
    return kept
