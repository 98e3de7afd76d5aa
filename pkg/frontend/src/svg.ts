/** Minimal multi-panel SVG line charts (no DOM, deterministic output). */

export interface SeriesSpec {
  label: string;
  x: number[];
  y: number[];
  /** optional +-1 standard-error band half-width per point */
  band?: number[];
}

export interface PanelSpec {
  title: string;
  series: SeriesSpec[];
}

export interface FigureSpec {
  title: string;
  panels: PanelSpec[];
  columns: number;
}

const PALETTE = ['#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e', '#8c564b'];
const PANEL_W = 420;
const PANEL_H = 300;
const MARGIN = { top: 34, right: 16, bottom: 42, left: 64 };

function finitePairs(x: number[], y: number[]): Array<[number, number]> {
  const out: Array<[number, number]> = [];
  for (let i = 0; i < x.length; i++) {
    if (Number.isFinite(x[i]) && Number.isFinite(y[i])) out.push([x[i], y[i]]);
  }
  return out;
}

function niceTicks(lo: number, hi: number, n = 5): number[] {
  if (!(hi > lo)) {
    const pad = Math.abs(lo) > 0 ? Math.abs(lo) * 0.1 : 1;
    lo -= pad;
    hi += pad;
  }
  const span = hi - lo;
  const step0 = span / Math.max(n - 1, 1);
  const mag = Math.pow(10, Math.floor(Math.log10(step0)));
  const candidates = [1, 2, 2.5, 5, 10].map((c) => c * mag);
  const step = candidates.find((c) => span / c <= n) ?? candidates[candidates.length - 1];
  const start = Math.ceil(lo / step) * step;
  const ticks: number[] = [];
  for (let v = start; v <= hi + 1e-12 * span; v += step) ticks.push(v);
  return ticks;
}

function fmt(v: number): string {
  if (v === 0) return '0';
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(1);
  return parseFloat(v.toPrecision(6)).toString();
}

function esc(s: string): string {
  return s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;');
}

function renderPanel(panel: PanelSpec, x0: number, y0: number): string {
  const innerW = PANEL_W - MARGIN.left - MARGIN.right;
  const innerH = PANEL_H - MARGIN.top - MARGIN.bottom;
  let xmin = Infinity;
  let xmax = -Infinity;
  let ymin = Infinity;
  let ymax = -Infinity;
  for (const s of panel.series) {
    for (const [px, py] of finitePairs(s.x, s.y)) {
      xmin = Math.min(xmin, px);
      xmax = Math.max(xmax, px);
      const b = 0;
      ymin = Math.min(ymin, py - b);
      ymax = Math.max(ymax, py + b);
    }
    if (s.band) {
      for (let i = 0; i < s.y.length; i++) {
        if (Number.isFinite(s.y[i]) && Number.isFinite(s.band[i])) {
          ymin = Math.min(ymin, s.y[i] - s.band[i]);
          ymax = Math.max(ymax, s.y[i] + s.band[i]);
        }
      }
    }
  }
  if (!Number.isFinite(xmin) || !Number.isFinite(ymin)) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (ymax === ymin) {
    const pad = Math.abs(ymin) > 0 ? Math.abs(ymin) * 0.05 : 0.5;
    ymin -= pad;
    ymax += pad;
  }
  const yspan = ymax - ymin;
  ymin -= 0.05 * yspan;
  ymax += 0.05 * yspan;
  const sx = (v: number) => MARGIN.left + ((v - xmin) / (xmax - xmin || 1)) * innerW;
  const sy = (v: number) => MARGIN.top + innerH - ((v - ymin) / (ymax - ymin)) * innerH;

  const parts: string[] = [];
  parts.push(`<g class="panel" transform="translate(${x0},${y0})">`);
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${innerW}" height="${innerH}" ` +
      'fill="white" stroke="#333" stroke-width="1"/>',
  );
  parts.push(
    `<text class="panel-title" x="${PANEL_W / 2}" y="${MARGIN.top - 12}" ` +
      `text-anchor="middle" font-size="15" font-family="sans-serif">${esc(panel.title)}</text>`,
  );
  for (const t of niceTicks(xmin, xmax)) {
    const px = sx(t);
    parts.push(`<line x1="${px.toFixed(2)}" y1="${MARGIN.top + innerH}" x2="${px.toFixed(2)}" ` +
      `y2="${MARGIN.top + innerH + 5}" stroke="#333"/>`);
    parts.push(`<text x="${px.toFixed(2)}" y="${MARGIN.top + innerH + 18}" text-anchor="middle" ` +
      `font-size="11" font-family="sans-serif">${fmt(t)}</text>`);
  }
  for (const t of niceTicks(ymin, ymax)) {
    const py = sy(t);
    parts.push(`<line x1="${MARGIN.left - 5}" y1="${py.toFixed(2)}" x2="${MARGIN.left}" ` +
      `y2="${py.toFixed(2)}" stroke="#333"/>`);
    parts.push(`<text x="${MARGIN.left - 8}" y="${(py + 4).toFixed(2)}" text-anchor="end" ` +
      `font-size="11" font-family="sans-serif">${fmt(t)}</text>`);
  }
  panel.series.forEach((s, si) => {
    const color = PALETTE[si % PALETTE.length];
    if (s.band) {
      const upper: string[] = [];
      const lower: string[] = [];
      for (let i = 0; i < s.x.length; i++) {
        if (
          Number.isFinite(s.x[i]) && Number.isFinite(s.y[i]) &&
          Number.isFinite(s.band[i])
        ) {
          upper.push(`${sx(s.x[i]).toFixed(2)},${sy(s.y[i] + s.band[i]).toFixed(2)}`);
          lower.unshift(`${sx(s.x[i]).toFixed(2)},${sy(s.y[i] - s.band[i]).toFixed(2)}`);
        }
      }
      if (upper.length > 1) {
        parts.push(`<polygon class="band" points="${upper.join(' ')} ${lower.join(' ')}" ` +
          `fill="${color}" opacity="0.15" stroke="none"/>`);
      }
    }
    const pts = finitePairs(s.x, s.y)
      .map(([px, py]) => `${sx(px).toFixed(2)},${sy(py).toFixed(2)}`)
      .join(' ');
    parts.push(`<polyline class="series" data-label="${esc(s.label)}" points="${pts}" ` +
      `fill="none" stroke="${color}" stroke-width="1.8"/>`);
  });
  // legend
  panel.series.forEach((s, si) => {
    const color = PALETTE[si % PALETTE.length];
    const ly = MARGIN.top + 14 + si * 15;
    parts.push(`<line x1="${MARGIN.left + 8}" y1="${ly}" x2="${MARGIN.left + 28}" y2="${ly}" ` +
      `stroke="${color}" stroke-width="2"/>`);
    parts.push(`<text class="legend-label" x="${MARGIN.left + 33}" y="${ly + 4}" ` +
      `font-size="11" font-family="sans-serif">${esc(s.label)}</text>`);
  });
  parts.push('</g>');
  return parts.join('\n');
}

export function renderFigure(spec: FigureSpec): string {
  const cols = Math.max(1, spec.columns);
  const rows = Math.ceil(spec.panels.length / cols);
  const width = cols * PANEL_W;
  const height = rows * PANEL_H + 30;
  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}">`,
  );
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  parts.push(
    `<text class="figure-title" x="${width / 2}" y="20" text-anchor="middle" ` +
      `font-size="17" font-family="sans-serif">${esc(spec.title)}</text>`,
  );
  spec.panels.forEach((panel, i) => {
    const r = Math.floor(i / cols);
    const c = i % cols;
    parts.push(renderPanel(panel, c * PANEL_W, 30 + r * PANEL_H));
  });
  parts.push('</svg>');
  return parts.join('\n');
}
