/**
 * Log-log convergence figures from hdgadapt history CSV files.
 *
 * Rendering is a pure function of the CSV text and the figure spec: the SVG
 * contains one path per (input, column) curve, reference-slope guide lines
 * anchored at the final point of the first curve, a legend and axis labels.
 */

export interface FigureInput {
  path: string;
  label?: string;
}

export interface FigureSpec {
  inputs: FigureInput[];
  columns: string[];
  x_column?: string;
  reference_slopes?: number[];
  output: string;
  title?: string;
}

export interface Table {
  header: string[];
  columns: Map<string, number[]>;
  rows: number;
}

export class FigureError extends Error {}

const WIDTH = 640;
const HEIGHT = 480;
const MARGIN = { left: 64, right: 16, top: 28, bottom: 48 };
const PALETTE = [
  "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
  "#8c564b", "#17becf", "#e377c2", "#7f7f7f", "#bcbd22",
];

/** Parse a comma-separated table; empty cells become NaN. */
export function parseCsv(text: string): Table {
  const lines = text.split(/\r?\n/).filter((l) => l.trim().length > 0);
  if (lines.length === 0) {
    throw new FigureError("empty CSV file");
  }
  const header = lines[0].split(",").map((s) => s.trim());
  const columns = new Map<string, number[]>(header.map((h) => [h, []]));
  for (const line of lines.slice(1)) {
    const cells = line.split(",");
    if (cells.length !== header.length) {
      throw new FigureError(`malformed CSV row: ${line}`);
    }
    header.forEach((name, i) => {
      const cell = cells[i].trim();
      columns.get(name)!.push(cell === "" ? NaN : Number(cell));
    });
  }
  return { header, columns, rows: lines.length - 1 };
}

interface Curve {
  label: string;
  color: string;
  points: Array<[number, number]>;
}

function collectCurves(spec: FigureSpec, tables: Map<string, Table>): Curve[] {
  const xName = spec.x_column ?? "N";
  const curves: Curve[] = [];
  let colorIndex = 0;
  for (const input of spec.inputs) {
    const table = tables.get(input.path)!;
    if (table.rows < 2) {
      throw new FigureError(`need at least 2 data rows in ${input.path}`);
    }
    if (!table.columns.has(xName)) {
      throw new FigureError(`missing column '${xName}' in ${input.path}`);
    }
    const xs = table.columns.get(xName)!;
    for (const column of spec.columns) {
      if (!table.columns.has(column)) {
        throw new FigureError(`missing column '${column}' in ${input.path}`);
      }
      const ys = table.columns.get(column)!;
      const points: Array<[number, number]> = [];
      for (let i = 0; i < xs.length; i++) {
        if (isFinite(xs[i]) && isFinite(ys[i]) && xs[i] > 0 && ys[i] > 0) {
          points.push([xs[i], ys[i]]);
        }
      }
      // columns recorded as empty fields (e.g. no exact solution) are
      // dropped rather than treated as an error
      if (points.length >= 2) {
        const label = input.label ? `${input.label}:${column}` : column;
        curves.push({ label, color: PALETTE[colorIndex % PALETTE.length], points });
      }
      colorIndex++;
    }
  }
  if (curves.length === 0) {
    throw new FigureError("no plottable data in any requested column");
  }
  return curves;
}

function niceLogTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  for (let e = Math.ceil(Math.log10(lo) - 1e-12); Math.pow(10, e) <= hi * (1 + 1e-12); e++) {
    ticks.push(Math.pow(10, e));
  }
  return ticks;
}

const fmt = (v: number) => v.toFixed(2);

function tickLabel(v: number): string {
  const e = Math.round(Math.log10(v));
  return `1e${e}`;
}

/** Render the figure as an SVG string (deterministic for fixed inputs). */
export function renderFigure(spec: FigureSpec, tables: Map<string, Table>): string {
  const curves = collectCurves(spec, tables);
  let xMin = Infinity, xMax = -Infinity, yMin = Infinity, yMax = -Infinity;
  for (const curve of curves) {
    for (const [x, y] of curve.points) {
      xMin = Math.min(xMin, x); xMax = Math.max(xMax, x);
      yMin = Math.min(yMin, y); yMax = Math.max(yMax, y);
    }
  }
  const slopes = spec.reference_slopes ?? [];
  // guides are anchored at the final point of the first curve and drawn
  // back one decade (or to the data range, whichever is narrower)
  const anchor = curves[0].points[curves[0].points.length - 1];
  const guideX0 = Math.max(xMin, anchor[0] / 10);
  for (const s of slopes) {
    const y0 = anchor[1] * Math.pow(guideX0 / anchor[0], s);
    yMin = Math.min(yMin, y0, anchor[1]);
    yMax = Math.max(yMax, y0, anchor[1]);
  }

  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const lx0 = Math.log10(xMin), lx1 = Math.log10(xMax);
  const ly0 = Math.log10(yMin), ly1 = Math.log10(yMax);
  const padX = (lx1 - lx0 || 1) * 0.02;
  const padY = (ly1 - ly0 || 1) * 0.05;
  const sx = (x: number) =>
    MARGIN.left + ((Math.log10(x) - lx0 + padX) / (lx1 - lx0 + 2 * padX)) * plotW;
  const sy = (y: number) =>
    MARGIN.top + plotH - ((Math.log10(y) - ly0 + padY) / (ly1 - ly0 + 2 * padY)) * plotH;

  const parts: string[] = [];
  parts.push(`<?xml version="1.0" encoding="UTF-8"?>`);
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
    `viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif" font-size="12">`);
  parts.push(`<rect x="0" y="0" width="${WIDTH}" height="${HEIGHT}" fill="white"/>`);
  if (spec.title) {
    parts.push(`<text x="${WIDTH / 2}" y="18" text-anchor="middle" ` +
      `font-size="14">${escapeXml(spec.title)}</text>`);
  }

  // axes box and log ticks
  const axX0 = MARGIN.left, axY0 = MARGIN.top;
  parts.push(`<rect x="${axX0}" y="${axY0}" width="${plotW}" height="${plotH}" ` +
    `fill="none" stroke="#333" stroke-width="1"/>`);
  for (const t of niceLogTicks(xMin, xMax)) {
    const px = sx(t);
    parts.push(`<line x1="${fmt(px)}" y1="${axY0 + plotH}" x2="${fmt(px)}" ` +
      `y2="${axY0 + plotH + 5}" stroke="#333"/>`);
    parts.push(`<text x="${fmt(px)}" y="${axY0 + plotH + 18}" ` +
      `text-anchor="middle">${tickLabel(t)}</text>`);
  }
  for (const t of niceLogTicks(yMin, yMax)) {
    const py = sy(t);
    parts.push(`<line x1="${axX0 - 5}" y1="${fmt(py)}" x2="${axX0}" ` +
      `y2="${fmt(py)}" stroke="#333"/>`);
    parts.push(`<text x="${axX0 - 8}" y="${fmt(py)}" text-anchor="end" ` +
      `dominant-baseline="middle">${tickLabel(t)}</text>`);
  }
  parts.push(`<text x="${MARGIN.left + plotW / 2}" y="${HEIGHT - 10}" ` +
    `text-anchor="middle">${escapeXml(spec.x_column ?? "N")}</text>`);
  parts.push(`<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" ` +
    `transform="rotate(-90 16 ${MARGIN.top + plotH / 2})">value</text>`);

  // reference slope guides
  for (const s of slopes) {
    const y0 = anchor[1] * Math.pow(guideX0 / anchor[0], s);
    parts.push(`<path class="guide" stroke="#888" stroke-dasharray="6 4" ` +
      `fill="none" d="M ${fmt(sx(guideX0))} ${fmt(sy(y0))} L ` +
      `${fmt(sx(anchor[0]))} ${fmt(sy(anchor[1]))}"/>`);
    parts.push(`<text x="${fmt(sx(guideX0) + 4)}" y="${fmt(sy(y0) - 4)}" ` +
      `fill="#888">N^${s}</text>`);
  }

  // data curves
  for (const curve of curves) {
    const d = curve.points
      .map(([x, y], i) => `${i === 0 ? "M" : "L"} ${fmt(sx(x))} ${fmt(sy(y))}`)
      .join(" ");
    parts.push(`<path class="curve" data-column="${escapeXml(curve.label)}" ` +
      `stroke="${curve.color}" stroke-width="1.5" fill="none" d="${d}"/>`);
  }

  // legend
  curves.forEach((curve, i) => {
    const ly = MARGIN.top + 14 + 16 * i;
    const lxa = MARGIN.left + 10;
    parts.push(`<line x1="${lxa}" y1="${ly - 4}" x2="${lxa + 22}" ` +
      `y2="${ly - 4}" stroke="${curve.color}" stroke-width="1.5"/>`);
    parts.push(`<text x="${lxa + 28}" y="${ly}">${escapeXml(curve.label)}</text>`);
  });

  parts.push("</svg>");
  return parts.join("\n") + "\n";
}

function escapeXml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function validateSpec(raw: unknown): FigureSpec {
  if (typeof raw !== "object" || raw === null) {
    throw new FigureError("spec must be a JSON object");
  }
  const spec = raw as Partial<FigureSpec>;
  if (!Array.isArray(spec.inputs) || spec.inputs.length === 0) {
    throw new FigureError("spec.inputs must list at least one CSV file");
  }
  for (const input of spec.inputs) {
    if (typeof input?.path !== "string") {
      throw new FigureError("every spec.inputs entry needs a string 'path'");
    }
  }
  if (!Array.isArray(spec.columns) || spec.columns.length === 0 ||
      spec.columns.some((c) => typeof c !== "string")) {
    throw new FigureError("spec.columns must be a non-empty string array");
  }
  if (typeof spec.output !== "string" || spec.output.length === 0) {
    throw new FigureError("spec.output must name the SVG file to write");
  }
  if (spec.reference_slopes !== undefined &&
      (!Array.isArray(spec.reference_slopes) ||
       spec.reference_slopes.some((s) => typeof s !== "number" || !isFinite(s)))) {
    throw new FigureError("spec.reference_slopes must be finite numbers");
  }
  return spec as FigureSpec;
}
