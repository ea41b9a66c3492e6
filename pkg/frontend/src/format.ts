// Single display formatter so the numbers audit can compare what the
// DOM shows against captured service responses byte-for-byte.

export function fmt(value: number): string {
  return value.toFixed(1);
}

export function fmtScore(value: number): string {
  return value.toFixed(2);
}
