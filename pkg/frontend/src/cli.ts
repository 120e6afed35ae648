/**
 * Command line: `figures render --csv sweep.csv --bounds bounds.json --out fig.svg`
 *
 * Repeat --csv to concatenate several sweeps of the same channel into one
 * figure.  --nats displays both axes in nats (inputs are always bits).
 * Exit codes: 0 ok, 2 usage error, 1 anything else (I/O, schema, rendering).
 */

import { readFile, writeFile } from "node:fs/promises";
import { parseArgs } from "node:util";

import { renderFigure, type RenderOptions } from "./render.js";
import { parseBoundsJson, parseSweepCsv, type SweepRow } from "./schema.js";

const USAGE =
  "usage: figures render --csv sweep.csv [--csv more.csv ...] " +
  "--bounds bounds.json --out figure.svg [--nats] [--title T] " +
  "[--xlabel L] [--ylabel L]";

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  if (command !== "render") {
    console.error(command ? `unknown command: ${command}` : "missing command");
    console.error(USAGE);
    return 2;
  }

  let values;
  try {
    ({ values } = parseArgs({
      args: rest,
      options: {
        csv: { type: "string", multiple: true },
        bounds: { type: "string" },
        out: { type: "string" },
        nats: { type: "boolean", default: false },
        title: { type: "string" },
        xlabel: { type: "string" },
        ylabel: { type: "string" },
      },
      allowPositionals: false,
    }));
  } catch (err) {
    console.error((err as Error).message);
    console.error(USAGE);
    return 2;
  }

  const csvPaths = values.csv ?? [];
  if (csvPaths.length === 0 || !values.bounds || !values.out) {
    console.error("--csv, --bounds, and --out are all required");
    console.error(USAGE);
    return 2;
  }
  if (!values.out.endsWith(".svg")) {
    console.error(`--out must end in .svg (vector output only), got ${values.out}`);
    return 2;
  }

  try {
    const rows: SweepRow[] = [];
    for (const path of csvPaths) {
      rows.push(...parseSweepCsv(await readFile(path, "utf8")));
    }
    const bounds = parseBoundsJson(await readFile(values.bounds, "utf8"));
    const opts: RenderOptions = {
      units: values.nats ? "nats" : "bits",
      title: values.title,
      xLabel: values.xlabel,
      yLabel: values.ylabel,
    };
    const svg = renderFigure(rows, bounds, opts);
    await writeFile(values.out, svg, "utf8");

    const ks = [...new Set(rows.map((r) => r.K))].sort((a, b) => a - b);
    console.log(
      `wrote ${values.out}: ${ks.length} curve(s) (K = ${ks.join(", ")}), ` +
        `${rows.length} row(s)`,
    );
    return 0;
  } catch (err) {
    console.error((err as Error).message);
    return 1;
  }
}
