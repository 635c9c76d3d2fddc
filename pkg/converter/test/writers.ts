/** Test-only writers: build .npy buffers and a stored-entry .npz archive. */

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export function writeNpy(values: number[] | Float64Array, shape: number[],
                         dtype: "<f8" | "<f4" | "<i8" = "<f8"): Uint8Array {
  const shapeRepr = shape.length === 1 ? `(${shape[0]},)` : `(${shape.join(", ")})`;
  let header = `{'descr': '${dtype}', 'fortran_order': False, 'shape': ${shapeRepr}, }`;
  const unpadded = 10 + header.length + 1;
  header += " ".repeat((64 - (unpadded % 64)) % 64) + "\n";

  const count = shape.reduce((a, b) => a * b, 1);
  const itemSize = dtype === "<f4" ? 4 : 8;
  const out = new Uint8Array(10 + header.length + count * itemSize);
  out.set([0x93, 0x4e, 0x55, 0x4d, 0x50, 0x59, 1, 0]);
  const view = new DataView(out.buffer);
  view.setUint16(8, header.length, true);
  for (let i = 0; i < header.length; i++) {
    out[10 + i] = header.charCodeAt(i);
  }
  const base = 10 + header.length;
  if (dtype === "<f8" && base % 8 === 0) {
    const f64 = values instanceof Float64Array ? values : Float64Array.from(values);
    out.set(new Uint8Array(f64.buffer, f64.byteOffset, 8 * count), base);
  } else {
    for (let i = 0; i < count; i++) {
      const v = (values as any)[i] as number;
      if (dtype === "<f8") view.setFloat64(base + 8 * i, v, true);
      else if (dtype === "<f4") view.setFloat32(base + 4 * i, v, true);
      else view.setBigInt64(base + 8 * i, BigInt(Math.trunc(v)), true);
    }
  }
  return out;
}

/** Stored (uncompressed) zip with the given named members. */
export function writeZip(members: Map<string, Uint8Array>): Uint8Array {
  const chunks: Uint8Array[] = [];
  const central: Uint8Array[] = [];
  let offset = 0;

  for (const [name, data] of members) {
    const nameBytes = new TextEncoder().encode(name);
    const crc = crc32(data);

    const local = new Uint8Array(30 + nameBytes.length);
    const lv = new DataView(local.buffer);
    lv.setUint32(0, 0x04034b50, true);
    lv.setUint16(4, 20, true);
    lv.setUint16(8, 0, true); // stored
    lv.setUint32(14, crc, true);
    lv.setUint32(18, data.length, true);
    lv.setUint32(22, data.length, true);
    lv.setUint16(26, nameBytes.length, true);
    local.set(nameBytes, 30);
    chunks.push(local, data);

    const cent = new Uint8Array(46 + nameBytes.length);
    const cv = new DataView(cent.buffer);
    cv.setUint32(0, 0x02014b50, true);
    cv.setUint16(4, 20, true);
    cv.setUint16(6, 20, true);
    cv.setUint16(10, 0, true);
    cv.setUint32(16, crc, true);
    cv.setUint32(20, data.length, true);
    cv.setUint32(24, data.length, true);
    cv.setUint16(28, nameBytes.length, true);
    cv.setUint32(42, offset, true);
    cent.set(nameBytes, 46);
    central.push(cent);
    offset += local.length + data.length;
  }

  const centralSize = central.reduce((a, c) => a + c.length, 0);
  const eocd = new Uint8Array(22);
  const ev = new DataView(eocd.buffer);
  ev.setUint32(0, 0x06054b50, true);
  ev.setUint16(8, members.size, true);
  ev.setUint16(10, members.size, true);
  ev.setUint32(12, centralSize, true);
  ev.setUint32(16, offset, true);

  const total = offset + centralSize + 22;
  const out = new Uint8Array(total);
  let pos = 0;
  for (const c of [...chunks, ...central, eocd]) {
    out.set(c, pos);
    pos += c.length;
  }
  return out;
}

/** A deterministic synthetic upstream release for round-trip tests. */
export function syntheticUpstream(seed = 1234): Map<string, Uint8Array> {
  let state = seed >>> 0;
  const rand = () => {
    // xorshift32, uniform in [0, 1)
    state ^= state << 13; state >>>= 0;
    state ^= state >>> 17;
    state ^= state << 5; state >>>= 0;
    return state / 0xffffffff;
  };
  const randArray = (n: number, scale = 1.0) =>
    Float64Array.from({ length: n }, () => (rand() * 2 - 1) * scale);

  const members = new Map<string, Uint8Array>();
  members.set("v_template.npy", writeNpy(randArray(778 * 3, 0.1), [778, 3]));
  const faces = Float64Array.from({ length: 1538 * 3 }, () => Math.floor(rand() * 778));
  members.set("f.npy", writeNpy(faces, [1538, 3], "<i8"));
  members.set("shapedirs.npy", writeNpy(randArray(778 * 3 * 10, 0.01), [778, 3, 10]));
  members.set("posedirs.npy", writeNpy(randArray(778 * 3 * 135, 0.001), [778, 3, 135]));

  const regressor = new Float64Array(16 * 778);
  for (let j = 0; j < 16; j++) {
    for (let k = 0; k < 8; k++) {
      regressor[j * 778 + ((j * 48 + k * 3) % 778)] = 1 / 8;
    }
  }
  members.set("J_regressor.npy", writeNpy(regressor, [16, 778]));

  const weights = new Float64Array(778 * 16);
  for (let v = 0; v < 778; v++) {
    const j = v % 16;
    const w = 0.25 + 0.5 * rand();
    weights[v * 16 + j] = w;
    weights[v * 16 + ((j + 1) % 16)] = 1 - w;
  }
  members.set("weights.npy", writeNpy(weights, [778, 16]));

  const kintree = new Float64Array(2 * 16);
  const parents = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14];
  for (let j = 0; j < 16; j++) {
    kintree[j] = j === 0 ? 4294967295 : parents[j]; // row 0: parents (root often stored as -1/huge)
    kintree[16 + j] = j;
  }
  kintree[0] = -1;
  members.set("kintree_table.npy", writeNpy(kintree, [2, 16], "<i8"));

  members.set("hands_components.npy", writeNpy(randArray(45 * 45, 0.8), [45, 45]));
  members.set("hands_mean.npy", writeNpy(randArray(45, 0.05), [45]));
  return members;
}
