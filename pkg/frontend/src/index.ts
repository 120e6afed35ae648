export {
  SWEEP_COLUMNS,
  parseBoundsJson,
  parseSweepCsv,
  type Bounds,
  type SweepRow,
} from "./schema.js";
export { TOOLKIT_VERSION, renderFigure, type RenderOptions } from "./render.js";
export { formatTick, linearScale, niceTicks } from "./scale.js";
export { main } from "./cli.js";
