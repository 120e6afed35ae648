/**
 * Pure SVG renderer for exponent-versus-rate figures.
 *
 * One figure per channel: every sweep row becomes a point at
 * (rbar, exponent), rows sharing a message size K form one curve, and the
 * straight guarantee line ctilde1 * (1 - rate/C) is overlaid dashed from
 * rate 0 to rate C whenever ctilde1 is finite.  When ctilde1 is infinite
 * the line is replaced by an "exponent unbounded" annotation.
 *
 * Rendering is a pure function of its arguments: no clock, no randomness,
 * no environment.  Identical inputs yield byte-identical SVG, and the
 * toolkit version is recorded in the <metadata> element.
 */

import type { Bounds, SweepRow } from "./schema.js";
import { formatTick, linearScale, niceTicks } from "./scale.js";

export const TOOLKIT_VERSION = "unifeed-figures 0.1.0";

export interface RenderOptions {
  /** Display units for both axes and the annotation box. Inputs are bits. */
  units?: "bits" | "nats";
  /** Figure title; defaults to the channel name. */
  title?: string;
  xLabel?: string;
  yLabel?: string;
  width?: number;
  height?: number;
  /** One stroke color per K, cycled when there are more K values. */
  palette?: string[];
}

const DEFAULT_PALETTE = [
  "#1f77b4",
  "#d62728",
  "#2ca02c",
  "#9467bd",
  "#ff7f0e",
  "#8c564b",
];

const MARGIN = { left: 66, right: 18, top: 46, bottom: 54 };
const LN2 = Math.LN2;

function px(v: number): string {
  return v.toFixed(2);
}

function fmtValue(v: number): string {
  return Number.isFinite(v) ? String(Number(v.toPrecision(5))) : "inf";
}

function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Render one figure. Throws on empty/mixed-channel data. */
export function renderFigure(
  rows: SweepRow[],
  bounds: Bounds,
  opts: RenderOptions = {},
): string {
  if (rows.length === 0) {
    throw new Error("no sweep rows to plot");
  }
  const channels = [...new Set(rows.map((r) => r.channel))];
  if (channels.length > 1) {
    throw new Error(
      `sweep rows span several channels (${channels.join(", ")}); ` +
        "render one figure per channel",
    );
  }
  const channel = channels[0]!;
  if (bounds.channelName !== undefined && bounds.channelName !== channel) {
    throw new Error(
      `bounds are for channel ${bounds.channelName} but the sweep is for ${channel}`,
    );
  }

  // rows whose statistics never materialized (every episode truncated)
  // carry NaN means and cannot be plotted
  const plottable = rows.filter(
    (r) => Number.isFinite(r.rbar) && Number.isFinite(r.exponent),
  );
  if (plottable.length === 0) {
    throw new Error("no plottable sweep rows (all rates/exponents non-finite)");
  }

  const units = opts.units ?? "bits";
  const f = units === "nats" ? LN2 : 1;
  const width = opts.width ?? 720;
  const height = opts.height ?? 480;
  const palette = opts.palette ?? DEFAULT_PALETTE;
  const title = opts.title ?? channel;
  const xLabel = opts.xLabel ?? `average rate [${units}/use]`;
  const yLabel = opts.yLabel ?? `error exponent [${units}/use]`;

  const capacity = bounds.capacity * f;
  const ctilde1 = bounds.ctilde1 * f;
  const ctilde1Star = bounds.ctilde1_star * f;
  const haveBoundLine = Number.isFinite(ctilde1);

  const xMax =
    1.08 * Math.max(capacity, ...plottable.map((r) => r.rbar * f));
  const yMax =
    1.08 *
    Math.max(
      haveBoundLine ? ctilde1 : 0,
      ...plottable.map((r) => r.exponent * f),
    );

  const xScale = linearScale(xMax, MARGIN.left, width - MARGIN.right);
  const yScale = linearScale(yMax, height - MARGIN.bottom, MARGIN.top);

  const byK = new Map<number, SweepRow[]>();
  for (const row of plottable) {
    const group = byK.get(row.K);
    if (group === undefined) {
      byK.set(row.K, [row]);
    } else {
      group.push(row);
    }
  }
  const ks = [...byK.keys()].sort((a, b) => a - b);

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">`,
  );
  parts.push(`<metadata>generator: ${TOOLKIT_VERSION}</metadata>`);
  parts.push(`<desc>${esc(channel)}: error exponent versus average rate</desc>`);
  parts.push(`<rect width="${width}" height="${height}" fill="#ffffff"/>`);

  // grid and axes
  const x0 = MARGIN.left;
  const x1 = width - MARGIN.right;
  const y0 = height - MARGIN.bottom;
  const y1 = MARGIN.top;
  for (const t of niceTicks(xMax)) {
    const xp = px(xScale(t));
    parts.push(
      `<line x1="${xp}" y1="${px(y0)}" x2="${xp}" y2="${px(y1)}" stroke="#eeeeee"/>`,
    );
    parts.push(
      `<text x="${xp}" y="${px(y0 + 18)}" font-size="12" fill="#333333" ` +
        `text-anchor="middle">${formatTick(t)}</text>`,
    );
  }
  for (const t of niceTicks(yMax)) {
    const yp = px(yScale(t));
    parts.push(
      `<line x1="${px(x0)}" y1="${yp}" x2="${px(x1)}" y2="${yp}" stroke="#eeeeee"/>`,
    );
    parts.push(
      `<text x="${px(x0 - 8)}" y="${yp}" font-size="12" fill="#333333" ` +
        `text-anchor="end" dominant-baseline="middle">${formatTick(t)}</text>`,
    );
  }
  parts.push(
    `<rect x="${px(x0)}" y="${px(y1)}" width="${px(x1 - x0)}" height="${px(
      y0 - y1,
    )}" fill="none" stroke="#333333"/>`,
  );
  parts.push(
    `<text x="${px((x0 + x1) / 2)}" y="${px(height - 14)}" font-size="13" ` +
      `fill="#111111" text-anchor="middle">${esc(xLabel)}</text>`,
  );
  parts.push(
    `<text x="18" y="${px((y0 + y1) / 2)}" font-size="13" fill="#111111" ` +
      `text-anchor="middle" transform="rotate(-90 18 ${px((y0 + y1) / 2)})">` +
      `${esc(yLabel)}</text>`,
  );
  parts.push(
    `<text x="${px((x0 + x1) / 2)}" y="26" font-size="15" fill="#111111" ` +
      `text-anchor="middle">${esc(title)}</text>`,
  );

  // guarantee line, or the unbounded note when the drift rate is infinite
  if (haveBoundLine) {
    parts.push(
      `<line class="bound-line" x1="${px(xScale(0))}" y1="${px(
        yScale(ctilde1),
      )}" x2="${px(xScale(capacity))}" y2="${px(yScale(0))}" ` +
        `stroke="#555555" stroke-dasharray="6 4" stroke-width="1.5"/>`,
    );
  } else {
    parts.push(
      `<text class="unbounded-note" x="${px((x0 + x1) / 2)}" y="${px(
        y1 + 24,
      )}" font-size="13" fill="#555555" text-anchor="middle" ` +
        `font-style="italic">exponent unbounded</text>`,
    );
  }

  // one curve per K
  ks.forEach((k, i) => {
    const color = palette[i % palette.length]!;
    const group = [...byK.get(k)!].sort((a, b) => a.rbar - b.rbar);
    const pts = group
      .map((r) => `${px(xScale(r.rbar * f))},${px(yScale(r.exponent * f))}`)
      .join(" ");
    parts.push(
      `<polyline class="curve" data-k="${k}" points="${pts}" fill="none" ` +
        `stroke="${color}" stroke-width="1.8"/>`,
    );
    for (const r of group) {
      parts.push(
        `<circle class="point" data-k="${k}" cx="${px(xScale(r.rbar * f))}" ` +
          `cy="${px(yScale(r.exponent * f))}" r="3.5" fill="${color}"/>`,
      );
    }
  });

  // legend (top right, inside the plot)
  ks.forEach((k, i) => {
    const color = palette[i % palette.length]!;
    const ly = y1 + 16 + 18 * i;
    parts.push(
      `<line x1="${px(x1 - 150)}" y1="${px(ly)}" x2="${px(x1 - 122)}" y2="${px(
        ly,
      )}" stroke="${color}" stroke-width="1.8"/>`,
    );
    parts.push(
      `<circle cx="${px(x1 - 136)}" cy="${px(ly)}" r="3.5" fill="${color}"/>`,
    );
    parts.push(
      `<text x="${px(x1 - 114)}" y="${px(ly)}" font-size="12" fill="#111111" ` +
        `dominant-baseline="middle">K = ${k}</text>`,
    );
  });

  // annotation box with the solved channel constants
  const annLines = [
    `C = ${fmtValue(capacity)} ${units}/use`,
    `ctilde1 = ${fmtValue(ctilde1)}`,
    `ctilde1_star = ${fmtValue(ctilde1Star)}`,
  ];
  const annX = x0 + 12;
  const annY = y1 + 12;
  parts.push(
    `<g class="annotation"><rect x="${px(annX)}" y="${px(annY)}" width="172" ` +
      `height="${px(10 + 16 * annLines.length)}" fill="#fafafa" ` +
      `stroke="#999999"/>`,
  );
  annLines.forEach((line, i) => {
    parts.push(
      `<text x="${px(annX + 8)}" y="${px(annY + 18 + 16 * i)}" font-size="12" ` +
        `fill="#111111">${esc(line)}</text>`,
    );
  });
  parts.push(`</g>`);

  parts.push(`</svg>`);
  return parts.join("\n") + "\n";
}
