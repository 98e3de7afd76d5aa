/**
 * Figure families built from the simulator's per-model CSV series.
 *
 * fig1: wealth and strategy for the three bounded laws and the no-default
 * benchmark; fig2: compensation and the incentive fields for the same
 * models; fig3: general vs linear contract under the uniform law; fig4:
 * no-default vs uniform vs exponential default.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

import { loadSeries, SchemaError, Series, SchemaColumn } from './csv.js';
import { FigureSpec, PanelSpec, renderFigure } from './svg.js';

export const SCENARIOS = ['fig1', 'fig2', 'fig3', 'fig4'] as const;
export type Scenario = (typeof SCENARIOS)[number];

interface PanelDef {
  title: string;
  column: SchemaColumn;
  seColumn?: SchemaColumn;
}

const PANEL_DEFS: Record<Scenario, { columns: number; title: string; panels: PanelDef[] }> = {
  fig1: {
    columns: 2,
    title: 'Wealth and strategies across default models',
    panels: [
      { title: 'Wealth model', column: 'mean_wealth', seColumn: 'se_wealth' },
      { title: 'Strategy model', column: 'mean_strategy', seColumn: 'se_strategy' },
    ],
  },
  fig2: {
    columns: 2,
    title: 'Compensation and optimal incentives',
    panels: [
      { title: 'Compensation model', column: 'mean_Y', seColumn: 'se_Y' },
      { title: 'Model u', column: 'mean_u' },
      { title: 'Model z_x', column: 'mean_zx' },
      { title: 'Model g_x', column: 'mean_gx' },
    ],
  },
  fig3: {
    columns: 2,
    title: 'General versus linear contract (uniform default)',
    panels: [
      { title: 'Linear wealth model', column: 'mean_wealth', seColumn: 'se_wealth' },
      { title: 'Linear strategy model', column: 'mean_strategy', seColumn: 'se_strategy' },
      { title: 'Average incentive', column: 'mean_u' },
    ],
  },
  fig4: {
    columns: 2,
    title: 'No default vs uniform vs exponential default',
    panels: [
      { title: 'Wealth', column: 'mean_wealth', seColumn: 'se_wealth' },
      { title: 'Strategy', column: 'mean_strategy', seColumn: 'se_strategy' },
      { title: 'Average incentive', column: 'mean_u' },
      { title: 'Compensation', column: 'mean_Y', seColumn: 'se_Y' },
    ],
  },
};

/** fig2 reuses the fig1 model runs when it has no CSVs of its own. */
const CSV_PREFIXES: Record<Scenario, string[]> = {
  fig1: ['fig1'],
  fig2: ['fig2', 'fig1'],
  fig3: ['fig3'],
  fig4: ['fig4'],
};

export interface ModelSeries {
  name: string;
  series: Series;
}

export function discoverInputs(scenario: Scenario, inDir: string): ModelSeries[] {
  if (!fs.existsSync(inDir)) {
    throw new SchemaError(`input directory not found: ${inDir}`);
  }
  const files = fs.readdirSync(inDir).sort();
  for (const prefix of CSV_PREFIXES[scenario]) {
    const matched = files.filter(
      (f) => f.startsWith(`${prefix}_`) && f.endsWith('.csv') && !f.includes('alive_only'),
    );
    if (matched.length > 0) {
      return matched.map((f) => ({
        name: f.slice(prefix.length + 1, -'.csv'.length),
        series: loadSeries(path.join(inDir, f)),
      }));
    }
  }
  throw new SchemaError(
    `no ${CSV_PREFIXES[scenario].map((p) => `${p}_*.csv`).join(' or ')} series in ${inDir}`,
  );
}

export function buildFigure(scenario: Scenario, models: ModelSeries[]): FigureSpec {
  const def = PANEL_DEFS[scenario];
  const panels: PanelSpec[] = def.panels.map((p) => ({
    title: p.title,
    series: models.map((m) => ({
      label: m.name,
      x: m.series.t,
      y: m.series[p.column],
      band: p.seColumn ? m.series[p.seColumn] : undefined,
    })),
  }));
  return { title: def.title, panels, columns: def.columns };
}

export function render(scenario: Scenario, inDir: string, outDir: string): string {
  const models = discoverInputs(scenario, inDir);
  const svg = renderFigure(buildFigure(scenario, models));
  fs.mkdirSync(outDir, { recursive: true });
  const outPath = path.join(outDir, `${scenario}.svg`);
  fs.writeFileSync(outPath, svg, 'utf8');
  return outPath;
}
