#!/usr/bin/env node
/** plots <spec.json>: render a log-log convergence figure to SVG. */

import * as fs from "node:fs";
import * as path from "node:path";

import { FigureError, parseCsv, renderFigure, validateSpec, Table } from "./figure.js";

export function runPlots(specPath: string): number {
  let spec;
  try {
    spec = validateSpec(JSON.parse(fs.readFileSync(specPath, "utf8")));
  } catch (err) {
    process.stderr.write(`plots: bad spec ${specPath}: ${message(err)}\n`);
    return 2;
  }
  const baseDir = path.dirname(path.resolve(specPath));
  const tables = new Map<string, Table>();
  try {
    for (const input of spec.inputs) {
      const csvPath = path.isAbsolute(input.path)
        ? input.path
        : path.join(baseDir, input.path);
      tables.set(input.path, parseCsv(fs.readFileSync(csvPath, "utf8")));
    }
    const svg = renderFigure(spec, tables);
    const outPath = path.isAbsolute(spec.output)
      ? spec.output
      : path.join(baseDir, spec.output);
    fs.writeFileSync(outPath, svg);
    process.stdout.write(`wrote ${outPath}\n`);
    return 0;
  } catch (err) {
    process.stderr.write(`plots: ${message(err)}\n`);
    return err instanceof FigureError ? 1 : 2;
  }
}

function message(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

const invokedDirectly = process.argv[1] !== undefined &&
  path.resolve(process.argv[1]) === new URL(import.meta.url).pathname;

if (invokedDirectly) {
  if (process.argv.length !== 3) {
    process.stderr.write("usage: plots <spec.json>\n");
    process.exit(2);
  }
  process.exit(runPlots(process.argv[2]));
}
