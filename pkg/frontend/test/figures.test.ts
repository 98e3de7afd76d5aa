import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';

import { afterEach, beforeEach, describe, expect, it } from 'vitest';

import { parseSeries, SchemaError, SCHEMA_COLUMNS } from '../src/csv.js';
import { buildFigure, discoverInputs, render } from '../src/figures.js';
import { renderFigure } from '../src/svg.js';

const HEADER = SCHEMA_COLUMNS.join(',');

function syntheticCsv(rows: number, offset = 0): string {
  const lines = [HEADER];
  for (let i = 0; i < rows; i++) {
    const t = i / (rows - 1);
    const vals = [
      t,
      1 + 0.01 * t + offset,
      0.0005,
      0.1 - 0.01 * t * offset,
      0.0002,
      0.05 * t + offset / 10,
      0.0003,
      0.01 * t,
      0.2 * t,
      0.5,
      Math.max(0, 1 - t),
    ];
    lines.push(vals.map((v) => v.toPrecision(9)).join(','));
  }
  return lines.join('\n') + '\n';
}

let dir: string;

beforeEach(() => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), 'figtest-'));
});

afterEach(() => {
  fs.rmSync(dir, { recursive: true, force: true });
});

function writeScenario(prefix: string, models: string[]): void {
  models.forEach((m, i) => {
    fs.writeFileSync(path.join(dir, `${prefix}_${m}.csv`), syntheticCsv(21, i * 0.1));
  });
}

describe('csv parsing', () => {
  it('round-trips the schema', () => {
    const s = parseSeries(syntheticCsv(11), 'mem');
    expect(s.t).toHaveLength(11);
    expect(s.mean_wealth[0]).toBeCloseTo(1.0, 9);
    expect(s.alive_frac[10]).toBe(0);
  });

  it('names the missing column', () => {
    const broken = syntheticCsv(5).replace('mean_zx', 'mean_zz');
    expect(() => parseSeries(broken, 'mem')).toThrow(/mean_zx/);
  });

  it('accepts nan cells', () => {
    const text = syntheticCsv(5).replace(/^(.*)\n(.*)$/m, '$1\n$2');
    const withNan = text.split('\n');
    withNan[2] = withNan[2].replace(/^([^,]*),[^,]*/, '$1,nan');
    const s = parseSeries(withNan.join('\n'), 'mem');
    expect(Number.isNaN(s.mean_wealth[1])).toBe(true);
  });
});

describe('scenario discovery and panel layout', () => {
  it('fig1 renders 2 panels with 4 series each', () => {
    writeScenario('fig1', ['beta_2_4', 'uniform', 'beta_4_2', 'none']);
    const out = render('fig1', dir, dir);
    const svg = fs.readFileSync(out, 'utf8');
    expect((svg.match(/class="panel"/g) ?? []).length).toBe(2);
    expect((svg.match(/class="series"/g) ?? []).length).toBe(8);
    expect(svg).toContain('data-label="uniform"');
  });

  it('fig2 renders 4 panels, falling back to fig1 series', () => {
    writeScenario('fig1', ['beta_2_4', 'uniform', 'beta_4_2', 'none']);
    const svg = fs.readFileSync(render('fig2', dir, dir), 'utf8');
    expect((svg.match(/class="panel"/g) ?? []).length).toBe(4);
    expect((svg.match(/class="series"/g) ?? []).length).toBe(16);
  });

  it('fig3 renders 3 panels with 2 series each', () => {
    writeScenario('fig3', ['uniform_general', 'uniform_linear']);
    const svg = fs.readFileSync(render('fig3', dir, dir), 'utf8');
    expect((svg.match(/class="panel"/g) ?? []).length).toBe(3);
    expect((svg.match(/class="series"/g) ?? []).length).toBe(6);
  });

  it('fig4 renders 4 panels with 3 series each', () => {
    writeScenario('fig4', ['none', 'uniform', 'exponential_2']);
    const svg = fs.readFileSync(render('fig4', dir, dir), 'utf8');
    expect((svg.match(/class="panel"/g) ?? []).length).toBe(4);
    expect((svg.match(/class="series"/g) ?? []).length).toBe(12);
  });

  it('skips alive-only companion files', () => {
    writeScenario('fig4', ['none', 'uniform', 'exponential_2']);
    fs.writeFileSync(path.join(dir, 'fig4_none_alive_only.csv'), syntheticCsv(21));
    const models = discoverInputs('fig4', dir);
    expect(models.map((m) => m.name)).toEqual(['exponential_2', 'none', 'uniform']);
  });

  it('errors on an empty input dir', () => {
    expect(() => render('fig1', dir, dir)).toThrow(SchemaError);
  });
});

describe('svg rendering', () => {
  it('draws standard-error bands where the schema has them', () => {
    writeScenario('fig1', ['uniform']);
    const svg = fs.readFileSync(render('fig1', dir, dir), 'utf8');
    expect((svg.match(/class="band"/g) ?? []).length).toBe(2);
  });

  it('is deterministic', () => {
    writeScenario('fig4', ['none', 'uniform', 'exponential_2']);
    const models = discoverInputs('fig4', dir);
    const a = renderFigure(buildFigure('fig4', models));
    const b = renderFigure(buildFigure('fig4', models));
    expect(a).toBe(b);
  });

  it('skips non-finite points instead of corrupting the polyline', () => {
    writeScenario('fig1', ['uniform']);
    const file = path.join(dir, 'fig1_uniform.csv');
    const lines = fs.readFileSync(file, 'utf8').split('\n');
    const cells = lines[3].split(',');
    cells[1] = 'nan';
    lines[3] = cells.join(',');
    fs.writeFileSync(file, lines.join('\n'));
    const svg = fs.readFileSync(render('fig1', dir, dir), 'utf8');
    expect(svg).not.toContain('NaN');
  });
});
