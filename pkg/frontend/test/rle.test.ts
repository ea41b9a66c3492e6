import { describe, expect, it } from "vitest";
import { maskPixelCount, rleToMask } from "../src/rle.js";

describe("rleToMask", () => {
  it("decodes runs row-major", () => {
    const mask = rleToMask([1, 2, 4, 2], 2, 4);
    expect(Array.from(mask)).toEqual([0, 1, 1, 0, 1, 1, 0, 0]);
  });

  it("empty rle is an empty mask", () => {
    expect(Array.from(rleToMask([], 2, 2))).toEqual([0, 0, 0, 0]);
  });

  it("pixel count matches run lengths", () => {
    expect(maskPixelCount([0, 6])).toBe(6);
    expect(maskPixelCount([1, 2, 4, 2])).toBe(4);
  });
});
