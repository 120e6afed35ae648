/**
 * Parsers for the two artifact formats this tool consumes:
 *
 *  - sweep CSV: fixed 13-column table, one row per operating point;
 *  - bounds JSON: capacity and confirmation drift rates for one channel.
 *
 * Both come out of the `unifeed` CLI.  Non-finite values travel as the
 * strings "inf" / "-inf" / "nan" (in JSON and in CSV cells alike) and are
 * decoded to IEEE infinities/NaN here.  The `seed` column holds unsigned
 * 64-bit integers that do not fit in a double, so it stays a string.
 */

import Papa from "papaparse";

export const SWEEP_COLUMNS = [
  "channel",
  "K",
  "pe_target",
  "p0",
  "variant",
  "n_trials",
  "mean_T",
  "ci_halfwidth_T",
  "rbar",
  "exponent",
  "empirical_error_rate",
  "truncation_count",
  "seed",
] as const;

export interface SweepRow {
  channel: string;
  K: number;
  pe_target: number;
  p0: number;
  variant: string;
  n_trials: number;
  mean_T: number;
  ci_halfwidth_T: number;
  rbar: number;
  exponent: number;
  empirical_error_rate: number;
  truncation_count: number;
  seed: string;
}

export interface Bounds {
  capacity: number;
  ctilde1: number;
  ctilde1_star: number;
  dominance_flag?: boolean;
  channelName?: string;
}

/** Decode a real number that may be serialized as "inf"/"-inf"/"nan". */
function decodeReal(value: unknown, where: string): number {
  if (typeof value === "number") return value;
  if (typeof value === "string") {
    const t = value.trim();
    if (t === "inf") return Infinity;
    if (t === "-inf") return -Infinity;
    if (t === "nan") return NaN;
    if (t !== "" && !Number.isNaN(Number(t))) return Number(t);
  }
  throw new Error(`${where}: expected a number, got ${JSON.stringify(value)}`);
}

function decodeInt(value: unknown, where: string): number {
  const v = decodeReal(value, where);
  if (!Number.isInteger(v)) {
    throw new Error(`${where}: expected an integer, got ${JSON.stringify(value)}`);
  }
  return v;
}

export function parseSweepCsv(text: string): SweepRow[] {
  const parsed = Papa.parse<Record<string, string>>(text, {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0]!;
    throw new Error(`sweep CSV parse error (row ${first.row}): ${first.message}`);
  }
  const fields = parsed.meta.fields ?? [];
  const missing = SWEEP_COLUMNS.filter((c) => !fields.includes(c));
  if (missing.length > 0) {
    throw new Error(`sweep CSV is missing columns: ${missing.join(", ")}`);
  }
  const unknown = fields.filter((c) => !(SWEEP_COLUMNS as readonly string[]).includes(c));
  if (unknown.length > 0) {
    throw new Error(`sweep CSV has unknown columns: ${unknown.join(", ")}`);
  }

  return parsed.data.map((rec, i) => {
    const at = (col: string) => `sweep CSV row ${i + 1}, column ${col}`;
    const cell = (col: (typeof SWEEP_COLUMNS)[number]): string => {
      const v = rec[col];
      if (v === undefined || v === "") {
        throw new Error(`${at(col)}: empty cell`);
      }
      return v;
    };
    return {
      channel: cell("channel"),
      K: decodeInt(cell("K"), at("K")),
      pe_target: decodeReal(cell("pe_target"), at("pe_target")),
      p0: decodeReal(cell("p0"), at("p0")),
      variant: cell("variant"),
      n_trials: decodeInt(cell("n_trials"), at("n_trials")),
      mean_T: decodeReal(cell("mean_T"), at("mean_T")),
      ci_halfwidth_T: decodeReal(cell("ci_halfwidth_T"), at("ci_halfwidth_T")),
      rbar: decodeReal(cell("rbar"), at("rbar")),
      exponent: decodeReal(cell("exponent"), at("exponent")),
      empirical_error_rate: decodeReal(
        cell("empirical_error_rate"),
        at("empirical_error_rate"),
      ),
      truncation_count: decodeInt(cell("truncation_count"), at("truncation_count")),
      seed: cell("seed"),
    };
  });
}

export function parseBoundsJson(text: string): Bounds {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (err) {
    throw new Error(`bounds JSON is not valid JSON: ${(err as Error).message}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new Error("bounds JSON must be an object");
  }
  const obj = doc as Record<string, unknown>;

  if (obj.units !== undefined && obj.units !== "bits") {
    throw new Error(
      `bounds JSON has units ${JSON.stringify(obj.units)}; this tool needs bits ` +
        "(re-run `unifeed bounds` without --nats; use this tool's --nats to display nats)",
    );
  }
  if (obj.capacity === undefined || obj.capacity === null) {
    throw new Error(
      "bounds JSON has no capacity; re-run `unifeed bounds` with --solve-capacity " +
        "or --capacity so the bound line has an endpoint",
    );
  }
  const capacity = decodeReal(obj.capacity, "bounds JSON capacity");
  if (!Number.isFinite(capacity) || capacity <= 0) {
    throw new Error(`bounds JSON capacity must be finite and positive, got ${capacity}`);
  }
  const ctilde1 = decodeReal(obj.ctilde1, "bounds JSON ctilde1");
  const ctilde1_star = decodeReal(obj.ctilde1_star, "bounds JSON ctilde1_star");
  if (Number.isNaN(ctilde1) || Number.isNaN(ctilde1_star)) {
    throw new Error("bounds JSON drift rates must not be NaN");
  }

  let channelName: string | undefined;
  const channel = obj.channel;
  if (typeof channel === "object" && channel !== null && !Array.isArray(channel)) {
    const name = (channel as Record<string, unknown>).name;
    if (typeof name === "string") channelName = name;
  }

  return {
    capacity,
    ctilde1,
    ctilde1_star,
    dominance_flag: typeof obj.dominance_flag === "boolean" ? obj.dominance_flag : undefined,
    channelName,
  };
}
