/** Deterministic linear axis helpers for the SVG renderer. */

/** Round tick values at 1-2-5 steps covering [0, max], always including 0. */
export function niceTicks(max: number, target = 6): number[] {
  if (!(max > 0)) {
    throw new Error(`tick range must have positive max, got ${max}`);
  }
  const raw = max / target;
  const mag = Math.pow(10, Math.floor(Math.log10(raw)));
  let step = 10 * mag;
  for (const m of [1, 2, 5]) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  const ticks: number[] = [];
  // scale by 1/step and round so e.g. 0.1 * 3 prints as 0.3, not 0.30000000000000004
  for (let i = 0; i * step <= max * (1 + 1e-12); i++) {
    ticks.push(Number((i * step).toPrecision(12)));
  }
  return ticks;
}

/** Fixed-form label for a tick value (no exponent notation, no trailing zeros). */
export function formatTick(v: number): string {
  if (v === 0) return "0";
  const s = v.toPrecision(12);
  return String(Number(s));
}

/** Map data [0, max] onto pixel [pxLo, pxHi] (pxHi < pxLo flips the axis). */
export function linearScale(
  max: number,
  pxLo: number,
  pxHi: number,
): (v: number) => number {
  return (v: number) => pxLo + (v / max) * (pxHi - pxLo);
}
