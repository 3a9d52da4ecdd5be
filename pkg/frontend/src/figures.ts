import { aggregate, num, parseCsv, requireColumns, Row, SchemaError } from "./csv.js";
import {
  drawFrame,
  drawLegend,
  fmt,
  HEIGHT,
  linearScale,
  logScale,
  MARGIN,
  PALETTE,
  Svg,
  WIDTH,
} from "./svg.js";

export const FIGURE_KINDS = [
  "accuracy",
  "runtime",
  "convergence",
  "gap-vs-m",
  "gap-vs-k",
  "lr",
] as const;
export type FigureKind = (typeof FIGURE_KINDS)[number];

export interface FigureSpec {
  kind: FigureKind;
  input: string; // file contents (CSV, or JSON for convergence)
  title?: string;
  kColumn?: "k_true" | "k_est";
}

const PLOT_X: [number, number] = [MARGIN.left, WIDTH - MARGIN.right];
const PLOT_Y: [number, number] = [HEIGHT - MARGIN.bottom, MARGIN.top];

export function render(spec: FigureSpec): string {
  switch (spec.kind) {
    case "accuracy":
      return accuracyFigure(spec);
    case "runtime":
      return runtimeFigure(spec);
    case "convergence":
      return convergenceFigure(spec);
    case "gap-vs-m":
      return gapFigure(spec, "m");
    case "gap-vs-k":
      return gapFigure(spec, "k");
    case "lr":
      return lrFigure(spec);
    default:
      throw new SchemaError(`unknown figure kind "${(spec as FigureSpec).kind}"`);
  }
}

function seriesColors(keys: string[]): Array<[string, string]> {
  return keys.map((k, i) => [k, PALETTE[i % PALETTE.length]]);
}

function lineWithBand(
  svg: Svg,
  pts: Array<{ x: number; mean: number; stderr: number | null }>,
  xScale: (v: number) => number,
  yScale: (v: number) => number,
  color: string,
): void {
  const banded = pts.filter((p) => p.stderr !== null);
  if (banded.length >= 2) {
    const upper = banded.map(
      (p) => [xScale(p.x), yScale(p.mean + (p.stderr as number))] as [number, number],
    );
    const lower = banded
      .slice()
      .reverse()
      .map((p) => [xScale(p.x), yScale(p.mean - (p.stderr as number))] as [number, number]);
    svg.polygon([...upper, ...lower], color, 0.15);
  }
  svg.polyline(
    pts.map((p) => [xScale(p.x), yScale(p.mean)]),
    color,
  );
  for (const p of pts) svg.circle(xScale(p.x), yScale(p.mean), 3, color);
}

function extent(values: number[]): [number, number] {
  const finite = values.filter(Number.isFinite);
  if (finite.length === 0) throw new SchemaError("no finite values to plot");
  return [Math.min(...finite), Math.max(...finite)];
}

function pad([lo, hi]: [number, number], frac = 0.08): [number, number] {
  const span = hi - lo || 1;
  return [lo - frac * span, hi + frac * span];
}

// -- estimator accuracy: histogram of overestimates per method ------------------

function accuracyFigure(spec: FigureSpec): string {
  const rows = parseCsv(spec.input);
  requireColumns(rows, ["k_true", "k_est", "k_method"], "benchmark CSV");
  const methods = [...new Set(rows.map((r) => r.k_method))].sort();
  const counts = new Map<string, Map<number, number>>();
  let maxOver = 0;
  for (const r of rows) {
    const over = num(r, "k_est") - num(r, "k_true");
    if (!Number.isFinite(over)) continue;
    maxOver = Math.max(maxOver, over);
    if (!counts.has(r.k_method)) counts.set(r.k_method, new Map());
    const c = counts.get(r.k_method)!;
    c.set(over, (c.get(over) ?? 0) + 1);
  }
  const overValues = Array.from({ length: maxOver + 1 }, (_, i) => i);
  const maxCount = Math.max(
    1,
    ...[...counts.values()].flatMap((c) => [...c.values()]),
  );
  const svg = new Svg();
  const xScale = linearScale([-0.5, maxOver + 0.5], PLOT_X, overValues.length);
  xScale.ticks = overValues;
  const yScale = linearScale([0, maxCount], PLOT_Y);
  drawFrame(svg, xScale, yScale, {
    title: spec.title ?? "Estimator accuracy (overestimate of the true k)",
    xLabel: "estimate - true contextuality number",
    yLabel: "models",
  });
  const colors = seriesColors(methods);
  const slot = (xScale(1) - xScale(0)) * 0.8;
  const barWidth = slot / Math.max(1, methods.length);
  methods.forEach((method, mi) => {
    const color = colors[mi][1];
    for (const over of overValues) {
      const c = counts.get(method)?.get(over) ?? 0;
      if (c === 0) continue;
      const x = xScale(over) - slot / 2 + mi * barWidth;
      svg.rect(x, yScale(c), barWidth * 0.92, yScale(0) - yScale(c), color);
    }
  });
  drawLegend(svg, colors);
  return svg.finish();
}

// -- runtime vs sparsity per method ---------------------------------------------

function runtimeFigure(spec: FigureSpec): string {
  const rows = parseCsv(spec.input);
  requireColumns(rows, ["sparsity", "k_method", "runtime_ms"], "benchmark CSV");
  const agg = aggregate(
    rows,
    (r) => r.k_method,
    (r) => num(r, "sparsity"),
    (r) => num(r, "runtime_ms"),
    5,
  );
  const xs = [...agg.values()].flatMap((pts) => pts.map((p) => p.x));
  const ys = [...agg.values()].flatMap((pts) => pts.map((p) => p.mean));
  const svg = new Svg();
  const xScale = linearScale(extent(xs), PLOT_X);
  const yScale = linearScale(pad([0, extent(ys)[1]]), PLOT_Y);
  drawFrame(svg, xScale, yScale, {
    title: spec.title ?? "Estimator runtime",
    xLabel: "sparsity",
    yLabel: "mean runtime (ms)",
  });
  const colors = seriesColors([...agg.keys()]);
  colors.forEach(([key, color]) => {
    lineWithBand(svg, agg.get(key)!, xScale, yScale, color);
  });
  drawLegend(svg, colors);
  return svg.finish();
}

// -- greedy convergence: best-so-far step plot ------------------------------------

function convergenceFigure(spec: FigureSpec): string {
  let payload: { trace?: Array<[number, number]> };
  try {
    payload = JSON.parse(spec.input);
  } catch (err) {
    throw new SchemaError(`convergence input is not JSON: ${(err as Error).message}`);
  }
  const trace = payload.trace;
  if (!Array.isArray(trace) || trace.length === 0) {
    throw new SchemaError('convergence input is missing a non-empty "trace" field');
  }
  const iters = trace.map((t) => t[0]);
  const bests = trace.map((t) => t[1]);
  const svg = new Svg();
  const xScale = linearScale([0, Math.max(...iters)], PLOT_X);
  const yScale = linearScale([0, Math.max(1, ...bests) + 0.5], PLOT_Y);
  drawFrame(svg, xScale, yScale, {
    title: spec.title ?? "Greedy ordering search: best estimate so far",
    xLabel: "ordering index",
    yLabel: "best k estimate",
  });
  const steps: Array<[number, number]> = [];
  trace.forEach(([it, k], i) => {
    if (i > 0) steps.push([xScale(it), yScale(trace[i - 1][1])]);
    steps.push([xScale(it), yScale(k)]);
  });
  svg.polyline(steps, PALETTE[0]);
  svg.circle(xScale(iters[iters.length - 1]), yScale(bests[bests.length - 1]), 3.5, PALETTE[0]);
  return svg.finish();
}

// -- KL gap panels ------------------------------------------------------------------

function gapFigure(spec: FigureSpec, axis: "m" | "k"): string {
  const rows = parseCsv(spec.input);
  const kColumn = spec.kColumn ?? "k_true";
  requireColumns(rows, ["m", kColumn, "kl_classical", "kl_quantum"], "sweep CSV");
  const gapOf = (r: Row) => num(r, "kl_classical") - num(r, "kl_quantum");
  const seriesKey = axis === "m" ? (r: Row) => `k=${r[kColumn]}` : (r: Row) => `m=${r.m}`;
  const xOf = axis === "m" ? (r: Row) => num(r, "m") : (r: Row) => num(r, kColumn);
  const agg = aggregate(rows, seriesKey, xOf, gapOf, 5);
  if (agg.size === 0) throw new SchemaError("sweep CSV has no finite gap cells");
  const xs = [...agg.values()].flatMap((pts) => pts.map((p) => p.x));
  const ys = [...agg.values()].flatMap((pts) => pts.map((p) => p.mean));
  const svg = new Svg();
  const xScale = linearScale(extent(xs), PLOT_X);
  const yScale = linearScale(pad(extent([0, ...ys])), PLOT_Y);
  drawFrame(svg, xScale, yScale, {
    title:
      spec.title ??
      (axis === "m"
        ? "Classical-quantum divergence gap vs latent dimension"
        : "Classical-quantum divergence gap vs contextuality number"),
    xLabel: axis === "m" ? "bond / latent dimension m" : `contextuality number (${kColumn})`,
    yLabel: "mean KL gap (classical - quantum)",
  });
  if (yScale.ticks.some((t) => Math.abs(t) < 1e-12)) {
    svg.line(PLOT_X[0], yScale(0), PLOT_X[1], yScale(0), "#999999", 1, "4 3");
  }
  const colors = seriesColors([...agg.keys()]);
  colors.forEach(([key, color]) => lineWithBand(svg, agg.get(key)!, xScale, yScale, color));
  drawLegend(svg, colors);
  return svg.finish();
}

// -- likelihood-ratio significance ----------------------------------------------------

function lrFigure(spec: FigureSpec): string {
  const rows = parseCsv(spec.input);
  const kColumn = spec.kColumn ?? "k_true";
  requireColumns(rows, ["m", kColumn, "p_value"], "sweep CSV");
  const floor = 1e-16;
  const agg = aggregate(
    rows,
    (r) => `m=${r.m}`,
    (r) => num(r, kColumn),
    (r) => Math.max(num(r, "p_value"), floor),
    5,
  );
  if (agg.size === 0) throw new SchemaError("sweep CSV has no finite p-values");
  const xs = [...agg.values()].flatMap((pts) => pts.map((p) => p.x));
  const svg = new Svg();
  const xScale = linearScale(extent(xs), PLOT_X);
  const yScale = logScale([floor, 1], PLOT_Y);
  drawFrame(svg, xScale, yScale, {
    title: spec.title ?? "Minimum significance level rejecting the classical fit",
    xLabel: `contextuality number (${kColumn})`,
    yLabel: "p-value",
  }, (v) => `1e${Math.round(Math.log10(v))}`);
  svg.line(PLOT_X[0], yScale(2.7e-3), PLOT_X[1], yScale(2.7e-3), "#444444", 1, "5 4");
  svg.text(PLOT_X[1] - 4, yScale(2.7e-3) - 5, "3 sigma", { anchor: "end", size: 11, fill: "#444444" });
  const colors = seriesColors([...agg.keys()]);
  colors.forEach(([key, color]) => {
    const pts = agg.get(key)!;
    svg.polyline(pts.map((p) => [xScale(p.x), yScale(p.mean)]), color);
    for (const p of pts) svg.circle(xScale(p.x), yScale(p.mean), 3, color);
  });
  drawLegend(svg, colors);
  return svg.finish();
}
