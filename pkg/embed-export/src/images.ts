/**
 * Image loading. Supported sources: BLT0 tensor containers holding [H,W,3]
 * images, binary PPM (P6, RGB), and binary PGM (P5, gray replicated to RGB).
 * Values are normalized to [0,1] float64.
 */

import { readFileSync, statSync } from 'node:fs';
import { readTensor } from './blt0.js';

export interface RgbImage {
  height: number;
  width: number;
  /** row-major [h*w*3] in [0,1] */
  pixels: Float64Array;
}

export class UnreadableImageError extends Error {
  constructor(public readonly path: string, reason: string) {
    super(`unreadable image ${path}: ${reason}`);
  }
}

function parseNetpbmHeader(raw: Buffer, path: string): { fields: number[]; offset: number } {
  const fields: number[] = [];
  let pos = 2;
  while (fields.length < 3) {
    while (pos < raw.length && /\s/.test(String.fromCharCode(raw[pos]))) pos++;
    if (raw[pos] === 0x23) {
      // comment
      while (pos < raw.length && raw[pos] !== 0x0a) pos++;
      continue;
    }
    const start = pos;
    while (pos < raw.length && !/\s/.test(String.fromCharCode(raw[pos]))) pos++;
    const value = Number(raw.subarray(start, pos).toString());
    if (!Number.isFinite(value)) throw new UnreadableImageError(path, 'bad netpbm header');
    fields.push(value);
  }
  return { fields, offset: pos + 1 };
}

export function readImage(path: string): RgbImage {
  let raw: Buffer;
  try {
    raw = readFileSync(path);
  } catch (err) {
    throw new UnreadableImageError(path, String(err));
  }
  if (path.endsWith('.blt0')) {
    const tensor = readTensor(path);
    if (tensor.dims.length !== 3 || tensor.dims[2] !== 3) {
      throw new UnreadableImageError(path, `expected [H,W,3] tensor, got [${tensor.dims}]`);
    }
    const [height, width] = tensor.dims;
    return { height, width, pixels: Float64Array.from(tensor.values) };
  }
  if (raw.subarray(0, 2).toString() === 'P6' || raw.subarray(0, 2).toString() === 'P5') {
    const gray = raw.subarray(0, 2).toString() === 'P5';
    const { fields, offset } = parseNetpbmHeader(raw, path);
    const [width, height, maxval] = fields;
    if (maxval > 255) throw new UnreadableImageError(path, '16-bit netpbm not supported');
    const channels = gray ? 1 : 3;
    if (raw.length < offset + height * width * channels) {
      throw new UnreadableImageError(path, 'truncated pixel payload');
    }
    const pixels = new Float64Array(height * width * 3);
    for (let i = 0; i < height * width; i++) {
      for (let c = 0; c < 3; c++) {
        pixels[3 * i + c] = raw[offset + channels * i + (gray ? 0 : c)] / maxval;
      }
    }
    return { height, width, pixels };
  }
  throw new UnreadableImageError(path, 'unsupported format (want .blt0, P5 PGM, or P6 PPM)');
}

export function isSupportedImage(path: string): boolean {
  if (!statSync(path, { throwIfNoEntry: false })?.isFile()) return false;
  return path.endsWith('.blt0') || path.endsWith('.ppm') || path.endsWith('.pgm');
}
