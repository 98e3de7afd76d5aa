#!/usr/bin/env node
/** figures <scenario> --in DIR --out DIR */

import { render, Scenario, SCENARIOS } from './figures.js';

function usage(): never {
  console.error('usage: figures <fig1|fig2|fig3|fig4> --in DIR --out DIR');
  process.exit(2);
}

export function main(argv: string[]): number {
  const args = argv.slice(2);
  if (args.length === 0) usage();
  const scenario = args[0] as Scenario;
  if (!SCENARIOS.includes(scenario)) usage();
  let inDir: string | undefined;
  let outDir: string | undefined;
  for (let i = 1; i < args.length; i += 2) {
    const [flag, value] = [args[i], args[i + 1]];
    if (value === undefined) usage();
    if (flag === '--in') inDir = value;
    else if (flag === '--out') outDir = value;
    else usage();
  }
  if (!inDir || !outDir) usage();
  try {
    const out = render(scenario, inDir, outDir);
    console.log(`wrote ${out}`);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

import { pathToFileURL } from 'node:url';

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv));
}
