import Papa from "papaparse";

/** Raised when an input file is missing a required column or has no rows. */
export class SchemaError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SchemaError";
  }
}

export type Row = Record<string, string>;

export function parseCsv(text: string): Row[] {
  const parsed = Papa.parse<Row>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new SchemaError(`CSV parse error: ${first.message} (row ${first.row})`);
  }
  return parsed.data;
}

export function requireColumns(rows: Row[], columns: string[], what: string): void {
  if (rows.length === 0) {
    throw new SchemaError(`${what} contains no data rows`);
  }
  const present = new Set(Object.keys(rows[0]));
  for (const col of columns) {
    if (!present.has(col)) {
      throw new SchemaError(`${what} is missing required column "${col}"`);
    }
  }
}

/** Numeric cell reader honoring the "inf"/"-inf"/"nan" literals of the
 * sweep schema; empty cells map to NaN. */
export function num(row: Row, column: string): number {
  const raw = (row[column] ?? "").trim();
  if (raw === "") return NaN;
  if (raw === "inf") return Infinity;
  if (raw === "-inf") return -Infinity;
  if (raw === "nan") return NaN;
  const v = Number(raw);
  if (Number.isNaN(v) && raw !== "NaN") {
    throw new SchemaError(`column "${column}" holds non-numeric value "${raw}"`);
  }
  return v;
}

export interface Aggregate {
  x: number;
  mean: number;
  stderr: number | null; // null below the band threshold
  count: number;
}

/** Group finite values of `value` by (series, x) and average within cells.
 * Standard-error bands appear only when a cell has at least `bandMin`
 * samples. Output ordering is lexicographic in (series, x) so rendering is
 * reproducible byte for byte. */
export function aggregate(
  rows: Row[],
  series: (r: Row) => string,
  x: (r: Row) => number,
  value: (r: Row) => number,
  bandMin = 5,
): Map<string, Aggregate[]> {
  const cells = new Map<string, Map<number, number[]>>();
  for (const row of rows) {
    const v = value(row);
    const xv = x(row);
    if (!Number.isFinite(v) || !Number.isFinite(xv)) continue;
    const key = series(row);
    if (!cells.has(key)) cells.set(key, new Map());
    const byX = cells.get(key)!;
    if (!byX.has(xv)) byX.set(xv, []);
    byX.get(xv)!.push(v);
  }
  const out = new Map<string, Aggregate[]>();
  for (const key of [...cells.keys()].sort()) {
    const byX = cells.get(key)!;
    const xs = [...byX.keys()].sort((a, b) => a - b);
    out.set(
      key,
      xs.map((xv) => {
        const vals = byX.get(xv)!;
        const mean = vals.reduce((a, b) => a + b, 0) / vals.length;
        let stderr: number | null = null;
        if (vals.length >= bandMin) {
          const varSum = vals.reduce((a, b) => a + (b - mean) ** 2, 0);
          stderr = Math.sqrt(varSum / (vals.length - 1)) / Math.sqrt(vals.length);
        }
        return { x: xv, mean, stderr, count: vals.length };
      }),
    );
  }
  return out;
}
