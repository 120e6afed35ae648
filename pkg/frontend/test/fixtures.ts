/** Shared test fixtures: synthetic sweeps plus solved channel constants. */

import { SWEEP_COLUMNS, type Bounds, type SweepRow } from "../src/schema.js";

/** Solved constants for the two-state symmetric(0.5,0.1) channel. */
export const SYMMETRIC_BOUNDS: Bounds = {
  capacity: 0.368443,
  ctilde1: 1.636452797660028,
  ctilde1_star: 1.5334722037822843,
  dominance_flag: true,
  channelName: "symmetric(0.5,0.1)",
};

export const SYMMETRIC_BOUNDS_JSON = JSON.stringify({
  capacity: SYMMETRIC_BOUNDS.capacity,
  ctilde1: SYMMETRIC_BOUNDS.ctilde1,
  ctilde1_star: SYMMETRIC_BOUNDS.ctilde1_star,
  dominance_flag: true,
  units: "bits",
  channel: { name: "symmetric(0.5,0.1)" },
});

export const TRAPDOOR_BOUNDS: Bounds = {
  capacity: 0.6942,
  ctilde1: Infinity,
  ctilde1_star: Infinity,
  channelName: "trapdoor",
};

export function makeRow(overrides: Partial<SweepRow>): SweepRow {
  return {
    channel: "symmetric(0.5,0.1)",
    K: 10,
    pe_target: 1e-3,
    p0: 0.9,
    variant: "two_stage_alternative",
    n_trials: 400,
    mean_T: 38.5,
    ci_halfwidth_T: 0.6,
    rbar: 0.26,
    exponent: 0.259,
    empirical_error_rate: 0,
    truncation_count: 0,
    seed: "16294208416658607535",
    ...overrides,
  };
}

/** The 12-point operating grid: K in {10,20,30} x pe in {1e-3..1e-12}. */
export function sweep12(channel = "symmetric(0.5,0.1)"): SweepRow[] {
  const rows: SweepRow[] = [];
  let i = 0;
  for (const K of [10, 20, 30]) {
    for (const pe of [1e-3, 1e-6, 1e-9, 1e-12]) {
      const L = -Math.log2(pe);
      const mean_T = K / 0.31 + L / 1.6;
      rows.push(
        makeRow({
          channel,
          K,
          pe_target: pe,
          mean_T,
          rbar: K / mean_T,
          exponent: L / mean_T,
          seed: String(1000 + i),
        }),
      );
      i += 1;
    }
  }
  return rows;
}

function csvCell(v: string): string {
  return /[",\n]/.test(v) ? `"${v.replace(/"/g, '""')}"` : v;
}

/** Serialize rows the way the sweep CSV artifact looks (13 fixed columns). */
export function toCsv(rows: SweepRow[]): string {
  const lines = [SWEEP_COLUMNS.join(",")];
  for (const r of rows) {
    lines.push(
      SWEEP_COLUMNS.map((col) => {
        const v = r[col];
        if (typeof v === "string") return csvCell(v);
        if (Number.isNaN(v)) return "nan";
        if (v === Infinity) return "inf";
        if (v === -Infinity) return "-inf";
        return String(v);
      }).join(","),
    );
  }
  return lines.join("\n") + "\n";
}
