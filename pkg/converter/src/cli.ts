#!/usr/bin/env node
/** handmodel-convert --in MANO_RIGHT.npz --out hand_model.json --pca 30 */

import { parseArgs } from "node:util";

import { convert } from "./convert.js";

function main(): number {
  const { values } = parseArgs({
    options: {
      in: { type: "string" },
      out: { type: "string" },
      pca: { type: "string", default: "30" },
      fingertips: { type: "string" },
      help: { type: "boolean", default: false },
    },
  });
  if (values.help || !values.in || !values.out) {
    console.log("usage: handmodel-convert --in <upstream.npz> --out <hand_model.json>"
      + " [--pca 30] [--fingertips a,b,c,d,e]");
    return values.help ? 0 : 2;
  }
  const numPca = Number(values.pca);
  if (!Number.isInteger(numPca)) {
    console.error(`--pca must be an integer, got '${values.pca}'`);
    return 2;
  }
  const fingertips = values.fingertips
    ? values.fingertips.split(",").map((t) => Number(t))
    : undefined;
  try {
    const checksums = convert(values.in, values.out, { numPca, fingertips });
    for (const [name, digest] of checksums) {
      console.log(`${name}  sha256:${digest}`);
    }
    console.log(`wrote ${values.out}`);
    return 0;
  } catch (err) {
    console.error(`conversion failed: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

process.exit(main());
