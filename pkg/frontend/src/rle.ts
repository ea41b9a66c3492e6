// Row-major run-length decoding for segmentation masks:
// [start, len, start, len, ...] over the flattened binary mask.

export function rleToMask(rle: number[], height: number, width: number): Uint8Array {
  const flat = new Uint8Array(height * width);
  for (let i = 0; i + 1 < rle.length; i += 2) {
    const start = rle[i]!;
    const len = rle[i + 1]!;
    flat.fill(1, start, start + len);
  }
  return flat;
}

export function maskPixelCount(rle: number[]): number {
  let total = 0;
  for (let i = 1; i < rle.length; i += 2) total += rle[i]!;
  return total;
}
