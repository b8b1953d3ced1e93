#!/usr/bin/env node
/** ttac-extract: classifier logits under augmentation policies -> TTAC v1. */

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { extract, manifestPath } from './extract.js';
import { PolicyName } from './augment.js';

async function main(): Promise<void> {
  const argv = await yargs(hideBin(process.argv))
    .command('extract', 'run a model over a labeled dataset and write logits')
    .option('model', { type: 'string', demandOption: true, describe: 'model directory (model.json + weights.bin)' })
    .option('data', { type: 'string', demandOption: true, describe: 'dataset directory with labels.csv and PNGs' })
    .option('policy', { choices: ['simple', 'expanded'] as const, default: 'simple' as PolicyName })
    .option('seed', { type: 'number', default: 0 })
    .option('out', { type: 'string', demandOption: true, describe: 'output .ttac path' })
    .strict()
    .help()
    .parse();

  const manifest = await extract({
    modelDir: argv.model,
    dataDir: argv.data,
    policy: argv.policy as PolicyName,
    seed: argv.seed,
    outPath: argv.out,
  });
  console.log(
    `wrote ${argv.out}: ${manifest.n_examples} examples x ` +
      `${manifest.aug_names.length} augmentations x ${manifest.input.classes} classes`,
  );
  if (manifest.skipped.length > 0) {
    console.warn(`skipped ${manifest.skipped.length} unreadable images (see manifest)`);
  }
  console.log(`manifest: ${manifestPath(argv.out)}`);
}

main().catch((err) => {
  console.error(`error: ${err instanceof Error ? err.message : err}`);
  process.exit(1);
});
