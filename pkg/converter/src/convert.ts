/**
 * Conversion driver: upstream .npz -> portable handmodel-v1 JSON document
 * with 9-significant-digit numbers, deterministic byte-for-byte output,
 * and a printed sha256 checksum per array.
 */

import { createHash } from "node:crypto";
import { readFileSync, writeFileSync } from "node:fs";

import { PortableArray, PortableModel, buildPortable } from "./model.js";
import { parseNpz } from "./npz.js";

/** 9 significant digits, shortest round-trip form (deterministic in JS). */
export function formatNumber(v: number, integer: boolean): string {
  if (integer) {
    return String(Math.trunc(v));
  }
  if (v === 0) {
    return "0";
  }
  return String(Number(v.toPrecision(9)));
}

export function serializeModel(model: PortableModel): string {
  const parts: string[] = ['{"format": "handmodel-v1"'];
  for (const [name, arr] of model) {
    const nums = new Array<string>(arr.data.length);
    for (let i = 0; i < arr.data.length; i++) {
      nums[i] = formatNumber(arr.data[i], arr.integer);
    }
    parts.push(`"${name}": {"shape": [${arr.shape.join(", ")}], "data": [${nums.join(", ")}]}`);
  }
  return parts.join(", ") + "}";
}

export function arrayChecksums(model: PortableModel): Map<string, string> {
  const out = new Map<string, string>();
  for (const [name, arr] of model) {
    const h = createHash("sha256");
    h.update(new Uint8Array(arr.data.buffer, arr.data.byteOffset, arr.data.byteLength));
    out.set(name, h.digest("hex"));
  }
  return out;
}

export interface ConvertOptions {
  numPca?: number;
  fingertips?: number[];
}

export function convert(upstreamPath: string, outPath: string,
                        options: ConvertOptions = {}): Map<string, string> {
  const bytes = new Uint8Array(readFileSync(upstreamPath));
  const upstream = parseNpz(bytes);
  const model = buildPortable(upstream, options.numPca ?? 30, options.fingertips);
  writeFileSync(outPath, serializeModel(model));
  return arrayChecksums(model);
}

export type { PortableArray, PortableModel };
