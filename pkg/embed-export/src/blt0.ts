/**
 * Binary tensor containers: magic "BLT0", uint32-LE rank, rank uint32-LE
 * dims, then prod(dims) float32-LE values. One tensor per file.
 */

import { readFileSync, renameSync, writeFileSync } from 'node:fs';

export interface TensorData {
  dims: number[];
  values: Float32Array;
}

const MAGIC = Buffer.from('BLT0');

export function encodeTensor(dims: number[], values: ArrayLike<number>): Buffer {
  const count = dims.reduce((a, b) => a * b, 1);
  if (count !== values.length) {
    throw new Error(`tensor payload mismatch: dims ${dims} want ${count}, got ${values.length}`);
  }
  const buf = Buffer.alloc(4 + 4 + 4 * dims.length + 4 * count);
  MAGIC.copy(buf, 0);
  buf.writeUInt32LE(dims.length, 4);
  dims.forEach((d, i) => buf.writeUInt32LE(d, 8 + 4 * i));
  const base = 8 + 4 * dims.length;
  for (let i = 0; i < count; i++) {
    buf.writeFloatLE(Number(values[i]), base + 4 * i);
  }
  return buf;
}

/** Write atomically: temp file in place, then rename. */
export function writeTensor(path: string, dims: number[], values: ArrayLike<number>): void {
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, encodeTensor(dims, values));
  renameSync(tmp, path);
}

export function readTensor(path: string): TensorData {
  const raw = readFileSync(path);
  if (raw.length < 8 || !raw.subarray(0, 4).equals(MAGIC)) {
    throw new Error(`bad magic in tensor container: ${path}`);
  }
  const rank = raw.readUInt32LE(4);
  const dims: number[] = [];
  for (let i = 0; i < rank; i++) {
    dims.push(raw.readUInt32LE(8 + 4 * i));
  }
  const count = dims.reduce((a, b) => a * b, 1);
  const base = 8 + 4 * rank;
  if (raw.length !== base + 4 * count) {
    throw new Error(`payload size mismatch in ${path}`);
  }
  const values = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    values[i] = raw.readFloatLE(base + 4 * i);
  }
  return { dims, values };
}
