#!/usr/bin/env node
/**
 * embed-export export --images <dir> --categories <file> --model <id> --out <dir>
 *                     [--feature-stage hidden|projected] [--dump-templates]
 *
 * Exit codes: 0 ok, 2 usage/config error, 3 data or model error.
 */

import { exportEmbeddings, EmptyCategoryListError } from './exporter.js';
import { ModelUnavailableError } from './model.js';
import { UnreadableImageError } from './images.js';

function parseArgs(argv: string[]): { [k: string]: string | boolean } {
  const out: { [k: string]: string | boolean } = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith('--')) throw new Error(`unexpected argument: ${arg}`);
    const key = arg.slice(2);
    if (key === 'dump-templates') {
      out[key] = true;
    } else {
      const value = argv[++i];
      if (value === undefined) throw new Error(`missing value for --${key}`);
      out[key] = value;
    }
  }
  return out;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (command !== 'export') {
    console.error('usage: embed-export export --images <dir> --categories <file> --model <id> --out <dir>');
    return 2;
  }
  let args: { [k: string]: string | boolean };
  try {
    args = parseArgs(rest);
  } catch (err) {
    console.error(String(err));
    return 2;
  }
  for (const required of ['images', 'categories', 'model', 'out']) {
    if (typeof args[required] !== 'string') {
      console.error(`missing required flag --${required}`);
      return 2;
    }
  }
  const stage = (args['feature-stage'] as string | undefined) ?? 'hidden';
  if (stage !== 'hidden' && stage !== 'projected') {
    console.error(`--feature-stage must be hidden or projected, got ${stage}`);
    return 2;
  }
  try {
    const summary = exportEmbeddings({
      imagesDir: args.images as string,
      categoriesFile: args.categories as string,
      modelId: args.model as string,
      outDir: args.out as string,
      featureStage: stage,
      dumpTemplates: Boolean(args['dump-templates']),
    });
    console.log(
      `exported ${summary.images} image tensors and ${summary.categories} text rows ` +
        `(width ${summary.width}) -> ${summary.manifestPath}`,
    );
    return 0;
  } catch (err) {
    if (err instanceof ModelUnavailableError || err instanceof UnreadableImageError || err instanceof EmptyCategoryListError) {
      console.error(String(err));
      return 3;
    }
    console.error(String(err));
    return 3;
  }
}

const invokedDirectly = process.argv[1] && import.meta.url.endsWith(process.argv[1].split('/').pop()!);
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
