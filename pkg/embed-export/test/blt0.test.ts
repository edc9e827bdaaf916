import { mkdtempSync, readFileSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';

import { encodeTensor, readTensor, writeTensor } from '../src/blt0.js';

describe('tensor container format', () => {
  it('matches a hand-built golden buffer', () => {
    const buf = encodeTensor([2, 2], [1.5, -2.0, 0.25, 3.0]);
    const expected = Buffer.alloc(4 + 4 + 8 + 16);
    expected.write('BLT0', 0);
    expected.writeUInt32LE(2, 4);
    expected.writeUInt32LE(2, 8);
    expected.writeUInt32LE(2, 12);
    [1.5, -2.0, 0.25, 3.0].forEach((v, i) => expected.writeFloatLE(v, 16 + 4 * i));
    expect(buf.equals(expected)).toBe(true);
  });

  it('round-trips values exactly at float32', () => {
    const dir = mkdtempSync(join(tmpdir(), 'blt0-'));
    const path = join(dir, 't.blt0');
    const values = [0.1, -123.456, 7e-3, 42];
    writeTensor(path, [4], values);
    const back = readTensor(path);
    expect(back.dims).toEqual([4]);
    values.forEach((v, i) => expect(back.values[i]).toBe(Math.fround(v)));
  });

  it('writes atomically (no temp file left behind)', () => {
    const dir = mkdtempSync(join(tmpdir(), 'blt0-'));
    const path = join(dir, 't.blt0');
    writeTensor(path, [1], [1]);
    expect(() => readFileSync(`${path}.tmp`)).toThrow();
  });

  it('rejects payload mismatches', () => {
    expect(() => encodeTensor([3], [1, 2])).toThrow(/mismatch/);
  });

  it('rejects bad magic', () => {
    const dir = mkdtempSync(join(tmpdir(), 'blt0-'));
    const path = join(dir, 'bad.blt0');
    writeFileSync(path, Buffer.from('NOPE00000000'));
    expect(() => readTensor(path)).toThrow(/magic/);
  });
});
