"""Command-line entry point.

Subcommands wrap one module operation each and keep strict exit-code
discipline: 0 success, 1 usage error, 2 data or configuration error.
All randomness sits behind --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .annotations import AnnotationError, compute_stats, parse_dataset, save_image_annotation
from .checkpoint import CheckpointError
from .geometry import GeometryError, SeverityThresholds, ThresholdError
from .model import NetConfig, PciNet
from .pci import CurveError, DeductCurveSet, PciError, label_dataset
from .resources import d6433_curves, default_thresholds
from .synth import SynthConfig, generate, split_dataset
from .training import LossWeights, TrainConfig, evaluate, load_samples, train

USAGE_EXIT = 1
DATA_EXIT = 2

DATA_ERRORS = (
    AnnotationError,
    GeometryError,
    ThresholdError,
    PciError,
    CurveError,
    CheckpointError,
    FileNotFoundError,
    NotADirectoryError,
    ValueError,
    KeyError,
    OSError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _load_curves(path: str | None) -> DeductCurveSet:
    return DeductCurveSet.from_file(path) if path else d6433_curves()


def _load_thresholds(path: str | None) -> SeverityThresholds:
    return SeverityThresholds.from_file(path) if path else default_thresholds()


def cmd_synth(args) -> int:
    config = SynthConfig(
        image_size_px=args.size,
        footprint_mm=(args.footprint_mm[0], args.footprint_mm[1]),
        n_images=args.count,
        seed=args.seed,
        crack_count_range=tuple(args.crack_range),
        blob_count_range=tuple(args.blob_range),
        crack_width_mm_range=tuple(args.width_range),
    )
    generate(config, args.out, _load_thresholds(args.thresholds), _load_curves(args.curves))
    if args.split:
        split_dataset(args.out, tuple(args.split), args.seed)
    print(f"wrote {args.count} images under {args.out}")
    return 0


def cmd_label(args) -> int:
    dataset = parse_dataset(args.data)
    label_dataset(dataset, _load_thresholds(args.thresholds), _load_curves(args.curves))
    for image in dataset:
        save_image_annotation(image, Path(args.data) / "annotations" / f"{image.image_id}.json")
    print(f"labeled {len(dataset)} images")
    return 0


def cmd_stats(args) -> int:
    dataset = parse_dataset(args.data)
    stats = compute_stats(dataset, bin_width=args.bin_width)
    doc = {
        "counts_by_type": {t.value: n for t, n in stats.counts_by_type.items()},
        "counts_by_severity": {s.label: n for s, n in stats.counts_by_severity.items()},
        "pci_histogram": [[lo, hi, n] for lo, hi, n in stats.pci_histogram],
        "total_annotations": stats.total_annotations,
    }
    print(json.dumps(doc, indent=2))
    return 0


def cmd_train(args) -> int:
    net_config = NetConfig(base_width=args.base_width, input_hw=(args.size, args.size))
    if args.overfit:
        samples = load_samples(args.data, "manifest.txt", net_config)[: args.overfit]
        train_s = val_s = samples
    else:
        train_s = load_samples(args.data, args.train_manifest, net_config)
        val_s = load_samples(args.data, args.val_manifest, net_config)
    net = PciNet.build(net_config, seed=args.seed)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        optimizer=args.optimizer,
        momentum=args.momentum,
        seed=args.seed,
        weights=LossWeights(),
        hflip=args.hflip,
    )
    result = train(train_s, val_s, net, config, args.out)
    status = "diverged (last good checkpoint kept)" if result.diverged else "done"
    print(
        f"{status}: {result.epochs_run} epochs, {result.steps_run} steps, "
        f"best val MAPE {result.best_val_mape:.2f}% -> {result.checkpoint}"
    )
    return 0


def cmd_eval(args) -> int:
    net = PciNet.load(args.ckpt)
    samples = load_samples(args.data, args.manifest, net.config)
    report = evaluate(net, samples, with_detections=args.detections)
    doc = report.to_dict()
    Path(args.report).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"r2 {report.r2:.4f}  mape {report.mape_pct:.2f}%  -> {args.report}")
    return 0


def cmd_infer(args) -> int:
    from PIL import Image
    import numpy as np
    from .model import decode_detections
    from .server import LINEAR_LABELS, PATTERN_LABELS, mask_to_rle

    net = PciNet.load(args.ckpt)
    png = Path(args.data) / "images" / f"{args.image_id}.png"
    pixels = np.asarray(Image.open(png).convert("L"), np.float32) / 255.0
    out = net.forward(pixels[None, None], train=False)
    result = {"pci": float(out.pci.data[0])}
    for key, raw, labels in (
        ("boxes_linear", out.det_linear, LINEAR_LABELS),
        ("boxes_pattern", out.det_pattern, PATTERN_LABELS),
    ):
        dets = decode_detections([r.data[0] for r in raw], net.config, args.conf, args.nms)
        result[key] = [dict(d.to_dict(), label=labels[d.class_idx]) for d in dets]
    result["mask_rle"] = mask_to_rle(out.seg_logits.data[0].argmax(axis=0))
    print(json.dumps(result, indent=2))
    return 0


def cmd_serve(args) -> int:
    from .server import ServiceState, serve

    net = PciNet.load(args.ckpt) if args.ckpt else None
    state = ServiceState(
        args.data,
        thresholds=_load_thresholds(args.thresholds),
        curves=_load_curves(args.curves),
        net=net,
    )
    print(f"serving {len(state.dataset)} images on http://{args.host}:{args.port}")
    serve(state, port=args.port, host=args.host, ui_dir=Path(args.ui) if args.ui else None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pavekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--footprint-mm", type=float, nargs=2, default=[960.0, 960.0])
    p.add_argument("--crack-range", type=int, nargs=2, default=[0, 2])
    p.add_argument("--blob-range", type=int, nargs=2, default=[0, 1])
    p.add_argument("--width-range", type=float, nargs=2, default=[12.0, 110.0])
    p.add_argument("--split", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--curves")
    p.add_argument("--thresholds")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("label", help="fill pci_label on every annotation file")
    p.add_argument("--data", required=True)
    p.add_argument("--curves")
    p.add_argument("--thresholds")
    p.set_defaults(fn=cmd_label)

    p = sub.add_parser("stats", help="dataset distribution summary as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--bin-width", type=float, default=10.0)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("train", help="train the multitask network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--base-width", type=int, default=16)
    p.add_argument("--train-manifest", default="manifest_train.txt")
    p.add_argument("--val-manifest", default="manifest_val.txt")
    p.add_argument("--overfit", type=int, default=0, metavar="K",
                   help="train and validate on the first K images")
    p.add_argument("--hflip", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--manifest", default="manifest_test.txt")
    p.add_argument("--detections", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="run the model on one image")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--nms", type=float, default=0.45)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("serve", help="start the local HTTP service")
    p.add_argument("--data", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--curves")
    p.add_argument("--thresholds")
    p.add_argument("--ckpt")
    p.add_argument("--ui")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DATA_ERRORS as exc:
        print(f"pavekit {args.command}: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
