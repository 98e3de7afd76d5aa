/**
 * Loading and validation of the simulator's time-series CSVs.
 *
 * Schema (one file per model per scenario):
 *   t,mean_wealth,se_wealth,mean_strategy,se_strategy,
 *   mean_Y,se_Y,mean_u,mean_zx,mean_gx,alive_frac
 */

import * as fs from 'node:fs';
import Papa from 'papaparse';

export const SCHEMA_COLUMNS = [
  't',
  'mean_wealth',
  'se_wealth',
  'mean_strategy',
  'se_strategy',
  'mean_Y',
  'se_Y',
  'mean_u',
  'mean_zx',
  'mean_gx',
  'alive_frac',
] as const;

export type SchemaColumn = (typeof SCHEMA_COLUMNS)[number];

export type Series = Record<SchemaColumn, number[]>;

export class SchemaError extends Error {}

export function parseSeries(text: string, source: string): Series {
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    throw new SchemaError(`${source}: ${parsed.errors[0].message}`);
  }
  const fields = parsed.meta.fields ?? [];
  for (const col of SCHEMA_COLUMNS) {
    if (!fields.includes(col)) {
      throw new SchemaError(`${source}: missing column '${col}'`);
    }
  }
  const out = Object.fromEntries(
    SCHEMA_COLUMNS.map((c) => [c, [] as number[]]),
  ) as Series;
  for (const row of parsed.data) {
    for (const col of SCHEMA_COLUMNS) {
      out[col].push(Number(row[col]));
    }
  }
  if (out.t.length === 0) {
    throw new SchemaError(`${source}: no data rows`);
  }
  return out;
}

export function loadSeries(path: string): Series {
  return parseSeries(fs.readFileSync(path, 'utf8'), path);
}
