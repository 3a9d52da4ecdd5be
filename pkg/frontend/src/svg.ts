/** Minimal deterministic SVG scene builder.
 *
 * Every coordinate goes through one fixed-precision formatter and all
 * iteration orders are sorted upstream, so identical data renders to
 * byte-identical files; no timestamps or generated ids are embedded.
 */

export const WIDTH = 640;
export const HEIGHT = 420;
export const MARGIN = { top: 42, right: 24, bottom: 52, left: 64 };

export const PALETTE = [
  "#1f77b4",
  "#d62728",
  "#2ca02c",
  "#9467bd",
  "#ff7f0e",
  "#8c564b",
  "#17becf",
  "#7f7f7f",
];

export function fmt(v: number): string {
  if (!Number.isFinite(v)) return "0";
  const r = Math.round(v * 100) / 100;
  return Object.is(r, -0) ? "0" : String(r);
}

export function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export interface Scale {
  (v: number): number;
  ticks: number[];
}

export function linearScale(
  domain: [number, number],
  range: [number, number],
  tickCount = 5,
): Scale {
  let [d0, d1] = domain;
  if (d0 === d1) {
    d0 -= 0.5;
    d1 += 0.5;
  }
  const f = ((v: number) =>
    range[0] + ((v - d0) / (d1 - d0)) * (range[1] - range[0])) as Scale;
  f.ticks = niceTicks(d0, d1, tickCount);
  return f;
}

export function logScale(
  domain: [number, number],
  range: [number, number],
): Scale {
  const lo = Math.log10(Math.max(domain[0], 1e-300));
  const hi = Math.log10(Math.max(domain[1], domain[0] * 10));
  const f = ((v: number) =>
    range[0] +
    ((Math.log10(Math.max(v, 1e-300)) - lo) / (hi - lo)) *
      (range[1] - range[0])) as Scale;
  const ticks: number[] = [];
  for (let e = Math.ceil(lo); e <= Math.floor(hi); e++) ticks.push(10 ** e);
  f.ticks = ticks.length >= 2 ? ticks : [10 ** lo, 10 ** hi];
  return f;
}

export function niceTicks(lo: number, hi: number, count: number): number[] {
  const span = hi - lo;
  const step0 = span / Math.max(1, count);
  const mag = 10 ** Math.floor(Math.log10(step0));
  let step = mag;
  for (const m of [1, 2, 5, 10]) {
    if (m * mag >= step0) {
      step = m * mag;
      break;
    }
  }
  const start = Math.ceil(lo / step) * step;
  const out: number[] = [];
  for (let v = start; v <= hi + step * 1e-9; v += step) {
    out.push(Math.round(v / step) * step);
  }
  return out;
}

export class Svg {
  private parts: string[] = [];

  constructor(
    readonly width = WIDTH,
    readonly height = HEIGHT,
  ) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" ` +
        `height="${height}" viewBox="0 0 ${width} ${height}" ` +
        `font-family="Helvetica, Arial, sans-serif">`,
      `<rect width="${width}" height="${height}" fill="#ffffff"/>`,
    );
  }

  raw(tag: string): void {
    this.parts.push(tag);
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1, dash = ""): void {
    const d = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" ` +
        `stroke="${stroke}" stroke-width="${width}"${d}/>`,
    );
  }

  polyline(points: Array<[number, number]>, stroke: string, width = 2): void {
    const pts = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
    this.parts.push(
      `<polyline points="${pts}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`,
    );
  }

  polygon(points: Array<[number, number]>, fill: string, opacity: number): void {
    const pts = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
    this.parts.push(`<polygon points="${pts}" fill="${fill}" opacity="${fmt(opacity)}"/>`);
  }

  circle(cx: number, cy: number, r: number, fill: string): void {
    this.parts.push(`<circle cx="${fmt(cx)}" cy="${fmt(cy)}" r="${fmt(r)}" fill="${fill}"/>`);
  }

  rect(x: number, y: number, w: number, h: number, fill: string): void {
    this.parts.push(
      `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" height="${fmt(h)}" fill="${fill}"/>`,
    );
  }

  text(
    x: number,
    y: number,
    content: string,
    opts: { size?: number; anchor?: string; rotate?: boolean; fill?: string } = {},
  ): void {
    const size = opts.size ?? 12;
    const anchor = opts.anchor ?? "start";
    const fill = opts.fill ?? "#222222";
    const transform = opts.rotate
      ? ` transform="rotate(-90 ${fmt(x)} ${fmt(y)})"`
      : "";
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}" font-size="${size}" ` +
        `text-anchor="${anchor}" fill="${fill}"${transform}>${esc(content)}</text>`,
    );
  }

  finish(): string {
    return this.parts.join("\n") + "\n</svg>\n";
  }
}

export interface AxisLabels {
  title: string;
  xLabel: string;
  yLabel: string;
}

export function drawFrame(
  svg: Svg,
  xScale: Scale,
  yScale: Scale,
  labels: AxisLabels,
  yTickFormat: (v: number) => string = fmt,
): void {
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  svg.text(WIDTH / 2, 24, labels.title, { size: 15, anchor: "middle" });
  svg.line(x0, y0, x1, y0, "#222222");
  svg.line(x0, y0, x0, y1, "#222222");
  for (const t of xScale.ticks) {
    const x = xScale(t);
    if (x < x0 - 1e-6 || x > x1 + 1e-6) continue;
    svg.line(x, y0, x, y0 + 5, "#222222");
    svg.line(x, y0, x, y1, "#eeeeee");
    svg.text(x, y0 + 20, fmt(t), { anchor: "middle" });
  }
  for (const t of yScale.ticks) {
    const y = yScale(t);
    if (y > y0 + 1e-6 || y < y1 - 1e-6) continue;
    svg.line(x0 - 5, y, x0, y, "#222222");
    svg.line(x0, y, x1, y, "#eeeeee");
    svg.text(x0 - 8, y + 4, yTickFormat(t), { anchor: "end" });
  }
  svg.text((x0 + x1) / 2, HEIGHT - 14, labels.xLabel, { anchor: "middle", size: 13 });
  svg.text(18, (y0 + y1) / 2, labels.yLabel, { anchor: "middle", size: 13, rotate: true });
}

export function drawLegend(svg: Svg, entries: Array<[string, string]>): void {
  let y = MARGIN.top + 6;
  const x = WIDTH - MARGIN.right - 130;
  for (const [label, color] of entries) {
    svg.line(x, y - 4, x + 22, y - 4, color, 2.5);
    svg.text(x + 28, y, label, { size: 12 });
    y += 17;
  }
}
