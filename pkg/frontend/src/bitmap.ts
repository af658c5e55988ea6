// Binary ink bitmaps (the editable sketch) and mask bitmaps, plus the
// brush/eraser geometry. Ink convention matches the server: P5 value 0 is
// ink, 255 is paper; masks are the inverse (255 inside).

import { Gray, decodeP5, encodeP5 } from './pgm.js';

export interface Bitmap {
  width: number;
  height: number;
  ink: Uint8Array; // 0 or 1 per pixel, row-major
}

export function blank(width: number, height: number): Bitmap {
  return { width, height, ink: new Uint8Array(width * height) };
}

export function clone(bm: Bitmap): Bitmap {
  return { width: bm.width, height: bm.height, ink: new Uint8Array(bm.ink) };
}

export function equal(a: Bitmap, b: Bitmap): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  for (let i = 0; i < a.ink.length; i++) {
    if (a.ink[i] !== b.ink[i]) return false;
  }
  return true;
}

export function inkCount(bm: Bitmap): number {
  let n = 0;
  for (let i = 0; i < bm.ink.length; i++) n += bm.ink[i];
  return n;
}

export function sketchFromPgm(data: Uint8Array): Bitmap {
  const gray = decodeP5(data);
  const ink = new Uint8Array(gray.pixels.length);
  for (let i = 0; i < ink.length; i++) ink[i] = gray.pixels[i] === 0 ? 1 : 0;
  return { width: gray.width, height: gray.height, ink };
}

export function sketchToPgm(bm: Bitmap): Uint8Array {
  const pixels = new Uint8Array(bm.ink.length);
  for (let i = 0; i < pixels.length; i++) pixels[i] = bm.ink[i] ? 0 : 255;
  return encodeP5({ width: bm.width, height: bm.height, pixels });
}

export function maskFromPgm(data: Uint8Array): Bitmap {
  const gray: Gray = decodeP5(data);
  const ink = new Uint8Array(gray.pixels.length);
  for (let i = 0; i < ink.length; i++) ink[i] = gray.pixels[i] === 255 ? 1 : 0;
  return { width: gray.width, height: gray.height, ink };
}

export function stampDisk(
  bm: Bitmap,
  cx: number,
  cy: number,
  radius: number,
  value: 0 | 1,
) {
  const r = Math.max(radius, 0);
  const x0 = Math.max(0, Math.floor(cx - r));
  const x1 = Math.min(bm.width - 1, Math.ceil(cx + r));
  const y0 = Math.max(0, Math.floor(cy - r));
  const y1 = Math.min(bm.height - 1, Math.ceil(cy + r));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r * r) bm.ink[y * bm.width + x] = value;
    }
  }
}

// Stamp the brush along the segment so fast drags leave no gaps.
export function drawStroke(
  bm: Bitmap,
  fromX: number,
  fromY: number,
  toX: number,
  toY: number,
  radius: number,
  value: 0 | 1,
) {
  const dist = Math.hypot(toX - fromX, toY - fromY);
  const steps = Math.max(1, Math.ceil(dist / Math.max(radius * 0.5, 0.5)));
  for (let i = 0; i <= steps; i++) {
    const t = i / steps;
    stampDisk(bm, fromX + (toX - fromX) * t, fromY + (toY - fromY) * t, radius, value);
  }
}

export function eraseRect(
  bm: Bitmap,
  x0: number,
  y0: number,
  x1: number,
  y1: number,
) {
  for (let y = Math.max(0, y0); y < Math.min(bm.height, y1); y++) {
    for (let x = Math.max(0, x0); x < Math.min(bm.width, x1); x++) {
      bm.ink[y * bm.width + x] = 0;
    }
  }
}
