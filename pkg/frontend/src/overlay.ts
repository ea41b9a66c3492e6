// Canvas overlay painting: polygons colored by type/severity, the
// segmentation mask, detection boxes (linear red, pattern orange), and
// the picked measurement points. jsdom has no 2d context; every entry
// point degrades to a no-op there so the logic stays testable.

import type { AnnotationDoc, DetBox, InferResponse } from "./api.js";
import type { CompletedPair } from "./state.js";
import type { Point } from "./api.js";
import { rleToMask } from "./rle.js";

const TYPE_COLORS: Record<string, string> = {
  longitudinal: "#e63946",
  transverse: "#d62828",
  alligator: "#f77f00",
  block: "#fcbf49",
  patch: "#b5838d",
  manhole: "#457b9d",
};

const SEVERITY_ALPHA: Record<string, number> = { low: 0.35, medium: 0.55, high: 0.8 };

function context(canvas: HTMLCanvasElement): CanvasRenderingContext2D | null {
  try {
    return canvas.getContext("2d");
  } catch {
    return null;
  }
}

export function drawImage(canvas: HTMLCanvasElement, image: HTMLImageElement, zoom: number): void {
  const ctx = context(canvas);
  if (!ctx) return;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(image, 0, 0, canvas.width, canvas.height);
  void zoom;
}

export function drawPolygons(canvas: HTMLCanvasElement, doc: AnnotationDoc, zoom: number): void {
  const ctx = context(canvas);
  if (!ctx) return;
  for (const ann of doc.annotations) {
    const color = TYPE_COLORS[ann.type] ?? "#ffffff";
    ctx.strokeStyle = color;
    ctx.globalAlpha = SEVERITY_ALPHA[ann.severity ?? "low"] ?? 0.5;
    ctx.lineWidth = 2;
    ctx.beginPath();
    ann.vertices.forEach(([x, y], i) => {
      if (i === 0) ctx.moveTo(x * zoom, y * zoom);
      else ctx.lineTo(x * zoom, y * zoom);
    });
    ctx.closePath();
    ctx.stroke();
  }
  ctx.globalAlpha = 1;
}

export function drawMask(
  canvas: HTMLCanvasElement,
  inference: InferResponse,
  width: number,
  height: number,
  zoom: number,
): void {
  const ctx = context(canvas);
  if (!ctx) return;
  const mask = rleToMask(inference.mask_rle, height, width);
  ctx.fillStyle = "rgba(42, 157, 143, 0.45)";
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (mask[y * width + x]) ctx.fillRect(x * zoom, y * zoom, zoom, zoom);
    }
  }
}

export function drawBoxes(canvas: HTMLCanvasElement, inference: InferResponse, zoom: number): void {
  const ctx = context(canvas);
  if (!ctx) return;
  const groups: [DetBox[], string][] = [
    [inference.boxes_linear, "#e63946"],
    [inference.boxes_pattern, "#f77f00"],
  ];
  for (const [boxes, color] of groups) {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    for (const det of boxes) {
      const [x1, y1, x2, y2] = det.box;
      ctx.strokeRect(x1 * zoom, y1 * zoom, (x2 - x1) * zoom, (y2 - y1) * zoom);
    }
  }
}

export function drawClicks(
  canvas: HTMLCanvasElement,
  pairs: CompletedPair[],
  pending: Point | null,
  zoom: number,
): void {
  const ctx = context(canvas);
  if (!ctx) return;
  const dot = (p: Point, color: string) => {
    ctx.fillStyle = color;
    ctx.beginPath();
    ctx.arc(p[0] * zoom, p[1] * zoom, 4, 0, 2 * Math.PI);
    ctx.fill();
  };
  for (const pair of pairs) {
    dot(pair.p1, "#1d3557");
    dot(pair.p2, "#e63946");
    ctx.strokeStyle = "#ffffff";
    ctx.beginPath();
    ctx.moveTo(pair.p1[0] * zoom, pair.p1[1] * zoom);
    ctx.lineTo(pair.p2[0] * zoom, pair.p2[1] * zoom);
    ctx.stroke();
  }
  if (pending) dot(pending, "#1d3557");
}
