/** 4-neighbor morphology; outside the canvas counts as background. */

import { Mask } from "./rle";

function at(mask: Mask, y: number, x: number): number {
  if (y < 0 || y >= mask.height || x < 0 || x >= mask.width) {
    return 0;
  }
  return mask.bits[y * mask.width + x];
}

export function erode4(mask: Mask): Mask {
  const bits = new Uint8Array(mask.width * mask.height);
  for (let y = 0; y < mask.height; y++) {
    for (let x = 0; x < mask.width; x++) {
      if (
        at(mask, y, x) &&
        at(mask, y - 1, x) &&
        at(mask, y + 1, x) &&
        at(mask, y, x - 1) &&
        at(mask, y, x + 1)
      ) {
        bits[y * mask.width + x] = 1;
      }
    }
  }
  return { width: mask.width, height: mask.height, bits };
}

export function dilate4(mask: Mask): Mask {
  const bits = new Uint8Array(mask.width * mask.height);
  for (let y = 0; y < mask.height; y++) {
    for (let x = 0; x < mask.width; x++) {
      if (
        at(mask, y, x) ||
        at(mask, y - 1, x) ||
        at(mask, y + 1, x) ||
        at(mask, y, x - 1) ||
        at(mask, y, x + 1)
      ) {
        bits[y * mask.width + x] = 1;
      }
    }
  }
  return { width: mask.width, height: mask.height, bits };
}
