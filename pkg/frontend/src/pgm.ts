// Binary P5 graymap codec, byte-compatible with the server's canonical
// form: "P5\n{w} {h}\n255\n" followed by row-major uint8 samples.

export interface Gray {
  width: number;
  height: number;
  pixels: Uint8Array;
}

export function encodeP5(img: Gray): Uint8Array {
  if (img.pixels.length !== img.width * img.height) {
    throw new Error('pixel buffer does not match dimensions');
  }
  const header = new TextEncoder().encode(`P5\n${img.width} ${img.height}\n255\n`);
  const out = new Uint8Array(header.length + img.pixels.length);
  out.set(header, 0);
  out.set(img.pixels, header.length);
  return out;
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}

export function decodeP5(data: Uint8Array): Gray {
  if (data.length < 2 || data[0] !== 0x50 || data[1] !== 0x35) {
    throw new Error('not a P5 graymap');
  }
  let pos = 2;
  const tokens: number[] = [];
  while (tokens.length < 3) {
    while (pos < data.length && isSpace(data[pos])) pos++;
    const start = pos;
    while (pos < data.length && !isSpace(data[pos])) pos++;
    if (start === pos) throw new Error('truncated P5 header');
    tokens.push(parseInt(new TextDecoder().decode(data.subarray(start, pos)), 10));
  }
  pos++; // the single whitespace byte after maxval
  const [width, height, maxval] = tokens;
  if (!Number.isFinite(width) || !Number.isFinite(height)) {
    throw new Error('malformed P5 header');
  }
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  const body = data.subarray(pos, pos + width * height);
  if (body.length !== width * height) {
    throw new Error('P5 body shorter than declared size');
  }
  return { width, height, pixels: new Uint8Array(body) };
}
