/**
 * Feature-extraction backends.
 *
 * `ref-d<width>-p<patch>` names a self-contained reference model: a frozen,
 * seeded random projection over image patches (with one tanh mixing layer)
 * and hashed token embeddings for text. It is deterministic for a fixed
 * model id and needs no downloads, which makes round-trip testing of the
 * export format possible anywhere.
 *
 * Any other id is treated as a pre-trained checkpoint to be served by an
 * optional transformers.js installation; without one, resolving it raises
 * ModelUnavailableError.
 */

import { expandTemplates } from './templates.js';
import type { RgbImage } from './images.js';

export class ModelUnavailableError extends Error {}

export type FeatureStage = 'hidden' | 'projected';

export interface VisionLanguageModel {
  readonly id: string;
  readonly width: number;
  readonly patch: number;
  /** [gridH, gridW, width] patch-token features, row-major. */
  encodeImage(image: RgbImage, stage: FeatureStage): { dims: number[]; values: Float64Array };
  /** Single prompt embedding of length `width`. */
  embedPrompt(prompt: string): Float64Array;
  /** Mean over the substituted prompt templates, accumulated in float64. */
  encodeCategory(category: string): Float64Array;
}

// -- deterministic primitives -------------------------------------------------

function xmur3(str: string): () => number {
  let h = 1779033703 ^ str.length;
  for (let i = 0; i < str.length; i++) {
    h = Math.imul(h ^ str.charCodeAt(i), 3432918353);
    h = (h << 13) | (h >>> 19);
  }
  return () => {
    h = Math.imul(h ^ (h >>> 16), 2246822507);
    h = Math.imul(h ^ (h >>> 13), 3266489909);
    h ^= h >>> 16;
    return h >>> 0;
  };
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussians(tag: string, count: number, scale: number): Float64Array {
  const rand = mulberry32(xmur3(tag)());
  const out = new Float64Array(count);
  for (let i = 0; i < count; i += 2) {
    const u = Math.max(rand(), 1e-12);
    const v = rand();
    const r = Math.sqrt(-2 * Math.log(u));
    out[i] = r * Math.cos(2 * Math.PI * v) * scale;
    if (i + 1 < count) out[i + 1] = r * Math.sin(2 * Math.PI * v) * scale;
  }
  return out;
}

function tokenize(text: string): string[] {
  return text.toLowerCase().split(/[^a-z0-9]+/).filter((t) => t.length > 0);
}

// -- reference model ----------------------------------------------------------

class ReferenceModel implements VisionLanguageModel {
  readonly width: number;
  readonly patch: number;
  private readonly proj: Float64Array; // [3p^2, d]
  private readonly mix: Float64Array; // [d, d]
  private readonly out: Float64Array; // [d, d] final projection
  private readonly textMix: Float64Array; // [d, d]

  constructor(readonly id: string, width: number, patch: number) {
    this.width = width;
    this.patch = patch;
    const inDim = 3 * patch * patch;
    this.proj = gaussians(`${id}/proj`, inDim * width, 1 / Math.sqrt(inDim));
    this.mix = gaussians(`${id}/mix`, width * width, 1 / Math.sqrt(width));
    this.out = gaussians(`${id}/out`, width * width, 1 / Math.sqrt(width));
    this.textMix = gaussians(`${id}/text`, width * width, 1 / Math.sqrt(width));
  }

  private applySquare(vec: Float64Array, mat: Float64Array): Float64Array<ArrayBuffer> {
    const d = this.width;
    const res = new Float64Array(d);
    for (let j = 0; j < d; j++) {
      let acc = 0;
      for (let i = 0; i < d; i++) acc += vec[i] * mat[i * d + j];
      res[j] = Math.tanh(acc);
    }
    return res;
  }

  encodeImage(image: RgbImage, stage: FeatureStage): { dims: number[]; values: Float64Array } {
    const p = this.patch;
    if (image.height % p !== 0 || image.width % p !== 0) {
      throw new Error(`image ${image.height}x${image.width} not divisible by patch ${p}`);
    }
    const gh = image.height / p;
    const gw = image.width / p;
    const d = this.width;
    const values = new Float64Array(gh * gw * d);
    const patchVec = new Float64Array(3 * p * p);
    for (let gy = 0; gy < gh; gy++) {
      for (let gx = 0; gx < gw; gx++) {
        let k = 0;
        for (let dy = 0; dy < p; dy++) {
          for (let dx = 0; dx < p; dx++) {
            const idx = 3 * ((gy * p + dy) * image.width + (gx * p + dx));
            patchVec[k++] = image.pixels[idx];
            patchVec[k++] = image.pixels[idx + 1];
            patchVec[k++] = image.pixels[idx + 2];
          }
        }
        let token = new Float64Array(d);
        for (let j = 0; j < d; j++) {
          let acc = 0;
          for (let i = 0; i < patchVec.length; i++) acc += patchVec[i] * this.proj[i * d + j];
          token[j] = acc;
        }
        token = this.applySquare(token, this.mix);
        if (stage === 'projected') {
          token = this.applySquare(token, this.out);
        }
        values.set(token, (gy * gw + gx) * d);
      }
    }
    return { dims: [gh, gw, d], values };
  }

  embedPrompt(prompt: string): Float64Array {
    const d = this.width;
    const tokens = tokenize(prompt);
    if (tokens.length === 0) throw new Error(`prompt has no tokens: ${prompt}`);
    const pooled = new Float64Array(d);
    for (const token of tokens) {
      const emb = gaussians(`${this.id}/tok/${token}`, d, 1 / Math.sqrt(d));
      for (let j = 0; j < d; j++) pooled[j] += emb[j] / tokens.length;
    }
    return this.applySquare(pooled, this.textMix);
  }

  encodeCategory(category: string): Float64Array {
    const prompts = expandTemplates(category);
    const mean = new Float64Array(this.width);
    for (const prompt of prompts) {
      const emb = this.embedPrompt(prompt);
      for (let j = 0; j < this.width; j++) mean[j] += emb[j] / prompts.length;
    }
    return mean;
  }
}

const REF_PATTERN = /^ref-d(\d+)-p(\d+)$/;

export function resolveModel(id: string): VisionLanguageModel {
  const ref = REF_PATTERN.exec(id);
  if (ref) {
    const width = Number(ref[1]);
    const patch = Number(ref[2]);
    if (width < 1 || patch < 1) {
      throw new ModelUnavailableError(`bad reference model geometry in id ${id}`);
    }
    return new ReferenceModel(id, width, patch);
  }
  // pre-trained checkpoints need an optional transformers.js runtime
  throw new ModelUnavailableError(
    `model ${id} requires a transformers.js runtime with cached weights; ` +
      `install @huggingface/transformers and pre-fetch the checkpoint, or use a ref-d<width>-p<patch> model`,
  );
}
