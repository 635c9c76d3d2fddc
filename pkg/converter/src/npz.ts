/**
 * Minimal .npz reader: a zip archive of .npy members, parsed through the
 * central directory. Supports stored and deflated entries (node:zlib).
 */

import { inflateRawSync } from "node:zlib";

import { NpyArray, parseNpy } from "./npy.js";

const EOCD_SIG = 0x06054b50;
const CENTRAL_SIG = 0x02014b50;
const LOCAL_SIG = 0x04034b50;

function findEocd(view: DataView): number {
  // EOCD is at the end, possibly followed by a zip comment (<= 65535 bytes)
  const min = Math.max(0, view.byteLength - 22 - 65535);
  for (let i = view.byteLength - 22; i >= min; i--) {
    if (view.getUint32(i, true) === EOCD_SIG) return i;
  }
  throw new Error("not a zip archive (no end-of-central-directory record)");
}

export function parseNpz(bytes: Uint8Array): Map<string, NpyArray> {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const eocd = findEocd(view);
  const count = view.getUint16(eocd + 10, true);
  let pos = view.getUint32(eocd + 16, true);

  const out = new Map<string, NpyArray>();
  for (let k = 0; k < count; k++) {
    if (view.getUint32(pos, true) !== CENTRAL_SIG) {
      throw new Error("corrupt central directory");
    }
    const method = view.getUint16(pos + 10, true);
    const compressedSize = view.getUint32(pos + 20, true);
    const nameLen = view.getUint16(pos + 28, true);
    const extraLen = view.getUint16(pos + 30, true);
    const commentLen = view.getUint16(pos + 32, true);
    const localOffset = view.getUint32(pos + 42, true);
    const name = new TextDecoder().decode(bytes.subarray(pos + 46, pos + 46 + nameLen));
    pos += 46 + nameLen + extraLen + commentLen;

    if (view.getUint32(localOffset, true) !== LOCAL_SIG) {
      throw new Error(`corrupt local header for ${name}`);
    }
    const localNameLen = view.getUint16(localOffset + 26, true);
    const localExtraLen = view.getUint16(localOffset + 28, true);
    const dataStart = localOffset + 30 + localNameLen + localExtraLen;
    const raw = bytes.subarray(dataStart, dataStart + compressedSize);

    let payload: Uint8Array;
    if (method === 0) {
      payload = raw;
    } else if (method === 8) {
      payload = new Uint8Array(inflateRawSync(raw));
    } else {
      throw new Error(`unsupported zip compression method ${method} for ${name}`);
    }
    if (!name.endsWith(".npy")) continue;
    out.set(name.slice(0, -4), parseNpy(payload));
  }
  return out;
}
