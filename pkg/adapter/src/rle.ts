/**
 * Canonical mask RLE: "width,height," then alternating zero/one run lengths
 * over the row-major bit string, always starting with the zero run (a
 * leading "0" marks a bit string that starts with a one). ASCII digits and
 * commas only.
 */

export interface Mask {
  width: number;
  height: number;
  bits: Uint8Array; // row-major, 0 or 1, length width * height
}

export function parseMask(text: string): Mask {
  const parts = text.split(",");
  if (parts.length < 3) {
    throw new Error(`RLE too short: ${JSON.stringify(text)}`);
  }
  const values = parts.map((p) => {
    if (!/^\d+$/.test(p)) {
      throw new Error(`non-integer RLE field in ${JSON.stringify(text)}`);
    }
    return parseInt(p, 10);
  });
  const [width, height] = values;
  const counts = values.slice(2);
  if (width < 1 || height < 1) {
    throw new Error(`bad dimensions ${width}x${height}`);
  }
  for (let i = 1; i < counts.length; i++) {
    if (counts[i] === 0) {
      throw new Error("zero-length run after the first");
    }
  }
  const total = counts.reduce((a, b) => a + b, 0);
  if (total !== width * height) {
    throw new Error(`run lengths sum to ${total}, expected ${width * height}`);
  }
  const bits = new Uint8Array(total);
  let pos = 0;
  let value = 0;
  for (const count of counts) {
    if (value === 1) {
      bits.fill(1, pos, pos + count);
    }
    pos += count;
    value ^= 1;
  }
  return { width, height, bits };
}

export function serializeMask(mask: Mask): string {
  const { width, height, bits } = mask;
  const runs: number[] = [];
  if (bits.length > 0 && bits[0] === 1) {
    runs.push(0);
  }
  let runLength = 1;
  for (let i = 1; i <= bits.length; i++) {
    if (i < bits.length && bits[i] === bits[i - 1]) {
      runLength++;
    } else {
      runs.push(runLength);
      runLength = 1;
    }
  }
  return `${width},${height},${runs.join(",")}`;
}

export function pixelCount(mask: Mask): number {
  let n = 0;
  for (const b of mask.bits) n += b;
  return n;
}
