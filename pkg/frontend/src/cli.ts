#!/usr/bin/env node
/** kontext-render: regenerate figures from sweep/benchmark outputs.
 *
 * Usage:
 *   kontext-render --kind gap-vs-k --in sweep.csv --out fig.svg
 *   kontext-render --kind convergence --in trace.json --out fig.png
 *
 * Exit codes: 0 success, 1 schema/data errors, 2 usage errors. Output files
 * are written atomically and only after the figure rendered successfully.
 */

import { mkdtempSync, readFileSync, renameSync, rmSync, writeFileSync } from "node:fs";
import { createRequire } from "node:module";
import { dirname, join } from "node:path";
import { parseArgs } from "node:util";

import { SchemaError } from "./csv.js";
import { FIGURE_KINDS, FigureKind, render } from "./figures.js";

function usage(): string {
  return (
    "usage: kontext-render --kind <" +
    FIGURE_KINDS.join("|") +
    "> --in <csv|json> --out <file.svg|file.png> " +
    "[--format svg|png] [--title text] [--k-column k_true|k_est]"
  );
}

export function main(argv: string[]): number {
  let values;
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        kind: { type: "string" },
        in: { type: "string" },
        out: { type: "string" },
        format: { type: "string" },
        title: { type: "string" },
        "k-column": { type: "string" },
        help: { type: "boolean" },
      },
    }));
  } catch (err) {
    console.error(`kontext-render: ${(err as Error).message}`);
    console.error(usage());
    return 2;
  }
  if (values.help) {
    console.log(usage());
    return 0;
  }
  const kind = values.kind as FigureKind | undefined;
  if (!kind || !values.in || !values.out) {
    console.error(usage());
    return 2;
  }
  if (!FIGURE_KINDS.includes(kind)) {
    console.error(`kontext-render: unknown kind "${kind}"`);
    console.error(usage());
    return 2;
  }
  const format = (values.format ?? (values.out.endsWith(".png") ? "png" : "svg")) as string;
  if (format !== "svg" && format !== "png") {
    console.error(`kontext-render: unknown format "${format}"`);
    return 2;
  }
  const kColumn = values["k-column"] as "k_true" | "k_est" | undefined;
  if (kColumn && kColumn !== "k_true" && kColumn !== "k_est") {
    console.error('kontext-render: --k-column must be "k_true" or "k_est"');
    return 2;
  }
  try {
    const input = readFileSync(values.in, "utf-8");
    const svg = render({ kind, input, title: values.title, kColumn });
    const payload = format === "svg" ? Buffer.from(svg, "utf-8") : rasterize(svg);
    writeAtomic(values.out, payload);
    console.log(JSON.stringify({ kind, out: values.out, format, bytes: payload.length }));
    return 0;
  } catch (err) {
    if (err instanceof SchemaError || (err as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`kontext-render: ${(err as Error).message}`);
      return 1;
    }
    throw err;
  }
}

function rasterize(svg: string): Buffer {
  // resolved lazily so SVG-only use never loads the native module
  const req = createRequire(import.meta.url);
  const { Resvg } = req("@resvg/resvg-js");
  const renderer = new Resvg(svg, { fitTo: { mode: "zoom", value: 2 } });
  return Buffer.from(renderer.render().asPng());
}

function writeAtomic(path: string, payload: Buffer): void {
  const dir = dirname(path) || ".";
  const tmpDir = mkdtempSync(join(dir, ".render-"));
  const tmp = join(tmpDir, "out");
  try {
    writeFileSync(tmp, payload);
    renameSync(tmp, path);
  } finally {
    rmSync(tmpDir, { recursive: true, force: true });
  }
}

import { fileURLToPath } from "node:url";

if (process.argv[1] && fileURLToPath(import.meta.url) === process.argv[1]) {
  process.exit(main(process.argv.slice(2)));
}
