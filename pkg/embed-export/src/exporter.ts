/**
 * The export job: run the model over every image in a directory and every
 * category in a list file, writing one BLT0 container per tensor plus a
 * tab-separated manifest (`kind<TAB>key<TAB>filename`, kind image|text).
 *
 * Image features are stored as [gridH, gridW, width]; text rows as [width],
 * each the float64 mean over the substituted prompt templates, narrowed to
 * float32 on disk. With `dumpTemplates`, per-template embeddings also land
 * in a `templates.txt` sidecar manifest so the averaging can be re-checked
 * independently.
 */

import { readFileSync, readdirSync, renameSync, mkdirSync, writeFileSync, existsSync, statSync } from 'node:fs';
import { join, basename } from 'node:path';

import { writeTensor } from './blt0.js';
import { isSupportedImage, readImage } from './images.js';
import { resolveModel, type FeatureStage } from './model.js';
import { expandTemplates } from './templates.js';

export class EmptyCategoryListError extends Error {}

export interface ExportJob {
  imagesDir: string;
  categoriesFile: string;
  modelId: string;
  outDir: string;
  featureStage?: FeatureStage;
  dumpTemplates?: boolean;
}

export interface ExportSummary {
  images: number;
  categories: number;
  width: number;
  manifestPath: string;
}

function discoverImages(dir: string): Array<{ key: string; path: string }> {
  const found: Array<{ key: string; path: string }> = [];
  for (const entry of readdirSync(dir).sort()) {
    const full = join(dir, entry);
    const stat = statSync(full);
    if (stat.isDirectory()) {
      const nested = join(full, 'image.blt0');
      if (existsSync(nested)) {
        found.push({ key: entry, path: nested });
      }
    } else if (isSupportedImage(full)) {
      found.push({ key: basename(entry).replace(/\.(blt0|ppm|pgm)$/, ''), path: full });
    }
  }
  return found;
}

function readCategories(path: string): string[] {
  const lines = readFileSync(path, 'utf8')
    .split('\n')
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new EmptyCategoryListError(`no categories in ${path}`);
  }
  const seen = new Set<string>();
  for (const name of lines) {
    if (seen.has(name)) throw new EmptyCategoryListError(`duplicate category ${name} in ${path}`);
    seen.add(name);
  }
  return lines;
}

function safeName(key: string): string {
  return key.replace(/[^A-Za-z0-9_-]/g, '_');
}

export function exportEmbeddings(job: ExportJob): ExportSummary {
  const model = resolveModel(job.modelId);
  const stage: FeatureStage = job.featureStage ?? 'hidden';
  const categories = readCategories(job.categoriesFile);
  const images = discoverImages(job.imagesDir);
  mkdirSync(job.outDir, { recursive: true });

  const manifestLines: string[] = [];
  for (const { key, path } of images) {
    const image = readImage(path);
    const feats = model.encodeImage(image, stage);
    const fname = `image_${safeName(key)}.blt0`;
    writeTensor(join(job.outDir, fname), feats.dims, feats.values);
    manifestLines.push(`image\t${key}\t${fname}`);
  }

  const templateLines: string[] = [];
  for (const category of categories) {
    const row = model.encodeCategory(category);
    const fname = `text_${safeName(category)}.blt0`;
    writeTensor(join(job.outDir, fname), [model.width], row);
    manifestLines.push(`text\t${category}\t${fname}`);
    if (job.dumpTemplates) {
      expandTemplates(category).forEach((prompt, idx) => {
        const tname = `template_${safeName(category)}_${String(idx).padStart(2, '0')}.blt0`;
        writeTensor(join(job.outDir, tname), [model.width], model.embedPrompt(prompt));
        templateLines.push(`template\t${category}#${idx}\t${tname}`);
      });
    }
  }

  const manifestPath = join(job.outDir, 'features.txt');
  const tmp = `${manifestPath}.tmp`;
  writeFileSync(tmp, manifestLines.map((l) => `${l}\n`).join(''));
  renameSync(tmp, manifestPath);
  if (templateLines.length > 0) {
    writeFileSync(join(job.outDir, 'templates.txt'), templateLines.map((l) => `${l}\n`).join(''));
  }
  return {
    images: images.length,
    categories: categories.length,
    width: model.width,
    manifestPath,
  };
}
