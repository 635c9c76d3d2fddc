/**
 * Minimal parser for the NumPy .npy serialization format (v1.0/2.0),
 * C-order little-endian numeric arrays only.
 */

export interface NpyArray {
  shape: number[];
  /** float64 view of the payload regardless of stored dtype */
  data: Float64Array;
  dtype: string;
}

const MAGIC = [0x93, 0x4e, 0x55, 0x4d, 0x50, 0x59]; // \x93NUMPY

function parseHeaderDict(header: string): { descr: string; fortran: boolean; shape: number[] } {
  const descr = /'descr'\s*:\s*'([^']+)'/.exec(header);
  const fortran = /'fortran_order'\s*:\s*(True|False)/.exec(header);
  const shape = /'shape'\s*:\s*\(([^)]*)\)/.exec(header);
  if (!descr || !fortran || !shape) {
    throw new Error(`unparseable npy header: ${header.trim()}`);
  }
  const dims = shape[1]
    .split(",")
    .map((t) => t.trim())
    .filter((t) => t.length > 0)
    .map((t) => {
      const n = Number(t);
      if (!Number.isInteger(n) || n < 0) throw new Error(`bad shape entry '${t}'`);
      return n;
    });
  return { descr: descr[1], fortran: fortran[1] === "True", shape: dims };
}

export function parseNpy(bytes: Uint8Array): NpyArray {
  if (bytes.length < 10 || MAGIC.some((b, i) => bytes[i] !== b)) {
    throw new Error("not an npy file (bad magic)");
  }
  const major = bytes[6];
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let headerLen: number;
  let offset: number;
  if (major === 1) {
    headerLen = view.getUint16(8, true);
    offset = 10 + headerLen;
  } else if (major === 2 || major === 3) {
    headerLen = view.getUint32(8, true);
    offset = 12 + headerLen;
  } else {
    throw new Error(`unsupported npy version ${major}`);
  }
  const header = new TextDecoder("latin1").decode(bytes.subarray(major === 1 ? 10 : 12, offset));
  const { descr, fortran, shape } = parseHeaderDict(header);
  if (fortran) {
    throw new Error("fortran-order arrays are not supported");
  }
  const count = shape.reduce((a, b) => a * b, 1);
  const data = new Float64Array(count);
  const payload = new DataView(bytes.buffer, bytes.byteOffset + offset);

  const read: Record<string, (i: number) => number> = {
    "<f8": (i) => payload.getFloat64(8 * i, true),
    "<f4": (i) => payload.getFloat32(4 * i, true),
    "<i8": (i) => {
      const v = payload.getBigInt64(8 * i, true);
      return Number(v);
    },
    "<i4": (i) => payload.getInt32(4 * i, true),
    "<u4": (i) => payload.getUint32(4 * i, true),
    "<u8": (i) => Number(payload.getBigUint64(8 * i, true)),
    "|i1": (i) => payload.getInt8(i),
    "|u1": (i) => payload.getUint8(i),
  };
  const reader = read[descr];
  if (!reader) {
    throw new Error(`unsupported dtype '${descr}'`);
  }
  const itemBytes: Record<string, number> = {
    "<f8": 8, "<f4": 4, "<i8": 8, "<i4": 4, "<u4": 4, "<u8": 8, "|i1": 1, "|u1": 1,
  };
  if (bytes.length - offset < count * itemBytes[descr]) {
    throw new Error(`npy payload truncated: need ${count * itemBytes[descr]} bytes`);
  }
  const absOffset = bytes.byteOffset + offset;
  if (descr === "<f8" && absOffset % 8 === 0) {
    // aligned fast path (little-endian hosts)
    data.set(new Float64Array(bytes.buffer, absOffset, count));
  } else {
    for (let i = 0; i < count; i++) {
      data[i] = reader(i);
    }
  }
  return { shape, data, dtype: descr };
}
