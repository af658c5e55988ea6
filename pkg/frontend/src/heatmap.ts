// Distance-field payload parsing and the heatmap rendering used to make
// the field representation visible next to the binary sketch view.

export interface Field {
  width: number;
  height: number;
  timeConstant: number;
  values: Float32Array;
}

const MAGIC = [0x55, 0x44, 0x46, 0x47]; // "UDFG"

export function decodeUdfg(data: Uint8Array): Field {
  for (let i = 0; i < 4; i++) {
    if (data[i] !== MAGIC[i]) throw new Error('not a UDFG payload');
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const version = view.getUint8(4);
  if (version !== 1) throw new Error(`unsupported UDFG version ${version}`);
  const width = view.getUint32(5, true);
  const height = view.getUint32(9, true);
  const timeConstant = view.getFloat32(13, true);
  const values = new Float32Array(width * height);
  for (let i = 0; i < values.length; i++) {
    values[i] = view.getFloat32(17 + 4 * i, true);
  }
  return { width, height, timeConstant, values };
}

// Iso level for a pixel distance: 1 - exp(-d/T). The 0.5 px default is the
// level whose sublevel set is exactly the ink pixels.
export function decodeLevel(timeConstant: number, distance = 0.5): number {
  return -Math.expm1(-distance / timeConstant);
}

// Ink-dark to paper-warm ramp with the decode iso band tinted blue, so the
// contour the decoder would extract is visible on top of the raw field.
export function fieldToRgba(field: Field, level?: number): Uint8ClampedArray {
  const iso = level ?? decodeLevel(field.timeConstant);
  const out = new Uint8ClampedArray(field.width * field.height * 4);
  for (let i = 0; i < field.values.length; i++) {
    const v = Math.min(Math.max(field.values[i], 0), 1);
    let r = Math.round(20 + 235 * v);
    let g = Math.round(16 + 210 * v);
    let b = Math.round(30 + 170 * v);
    if (Math.abs(v - iso) < iso * 0.25) {
      r = 40;
      g = 110;
      b = 255;
    }
    out[4 * i] = r;
    out[4 * i + 1] = g;
    out[4 * i + 2] = b;
    out[4 * i + 3] = 255;
  }
  return out;
}

// Pixels the threshold decoder would mark as ink (the near-zero set).
export function inkPixels(field: Field, level?: number): Uint8Array {
  const iso = level ?? decodeLevel(field.timeConstant);
  const out = new Uint8Array(field.values.length);
  for (let i = 0; i < out.length; i++) {
    out[i] = field.values[i] <= iso ? 1 : 0;
  }
  return out;
}
