/**
 * Schema of the portable handmodel-v1 document and the mapping from the
 * upstream array names.
 */

import { NpyArray } from "./npy.js";

export const N_VERTICES = 778;
export const N_JOINTS = 16;
export const POSE_DIM = 45;

/** Fingertip vertex ids (thumb, index, middle, ring, pinky) used when the
 * upstream release does not carry them. */
export const DEFAULT_FINGERTIPS = [744, 320, 443, 554, 671];

export interface ArraySpec {
  /** name in the portable document */
  name: string;
  /** name in the upstream .npz export */
  upstream: string;
  /** expected shape; null entries are free dimensions */
  shape: (number | null)[];
  integer?: boolean;
}

export const ARRAY_SPECS: ArraySpec[] = [
  { name: "template_vertices", upstream: "v_template", shape: [N_VERTICES, 3] },
  { name: "faces", upstream: "f", shape: [null, 3], integer: true },
  { name: "shape_basis", upstream: "shapedirs", shape: [N_VERTICES, 3, 10] },
  { name: "pose_basis", upstream: "posedirs", shape: [N_VERTICES, 3, 135] },
  { name: "joint_regressor", upstream: "J_regressor", shape: [N_JOINTS, N_VERTICES] },
  { name: "skin_weights", upstream: "weights", shape: [N_VERTICES, N_JOINTS] },
  { name: "pca_pose_components", upstream: "hands_components", shape: [null, POSE_DIM] },
  { name: "pca_pose_mean", upstream: "hands_mean", shape: [POSE_DIM] },
];

export interface PortableArray {
  shape: number[];
  data: Float64Array;
  integer: boolean;
}

export type PortableModel = Map<string, PortableArray>;

function checkShape(name: string, got: number[], want: (number | null)[]): void {
  if (got.length !== want.length
      || want.some((w, i) => w !== null && got[i] !== w)) {
    throw new Error(`${name}: shape [${got}] does not match expected [${want}]`);
  }
}

function checkFinite(name: string, data: Float64Array): void {
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new Error(`${name}: non-finite value at index ${i}`);
    }
  }
}

/** Build the portable arrays from the upstream archive. */
export function buildPortable(
  upstream: Map<string, NpyArray>,
  numPca: number,
  fingertips: number[] = DEFAULT_FINGERTIPS,
): PortableModel {
  const out: PortableModel = new Map();
  for (const spec of ARRAY_SPECS) {
    const arr = upstream.get(spec.upstream);
    if (!arr) {
      throw new Error(`upstream file is missing array '${spec.upstream}' (for ${spec.name})`);
    }
    checkShape(spec.name, arr.shape, spec.shape);
    checkFinite(spec.name, arr.data);
    out.set(spec.name, {
      shape: arr.shape.slice(),
      data: arr.data,
      integer: !!spec.integer,
    });
  }

  // kinematic parents: derive from the 2 x 16 kintree table
  const kintree = upstream.get("kintree_table");
  if (!kintree) {
    throw new Error("upstream file is missing array 'kintree_table'");
  }
  checkShape("kintree_table", kintree.shape, [2, N_JOINTS]);
  const parents = new Float64Array(N_JOINTS);
  parents[0] = -1;
  for (let j = 1; j < N_JOINTS; j++) {
    const p = kintree.data[j]; // row 0 holds the parent ids
    if (!(p >= 0 && p < j)) {
      throw new Error(`kintree_table: joint ${j} has invalid parent ${p}`);
    }
    parents[j] = p;
  }
  out.set("kinematic_parents", { shape: [N_JOINTS], data: parents, integer: true });

  // truncate the pose PCA to the requested number of components
  const pca = out.get("pca_pose_components")!;
  if (numPca < 1 || numPca > pca.shape[0]) {
    throw new Error(`--pca ${numPca} out of range (upstream has ${pca.shape[0]} rows)`);
  }
  out.set("pca_pose_components", {
    shape: [numPca, POSE_DIM],
    data: pca.data.subarray(0, numPca * POSE_DIM),
    integer: false,
  });

  if (fingertips.length !== 5
      || fingertips.some((v) => !Number.isInteger(v) || v < 0 || v >= N_VERTICES)) {
    throw new Error(`fingertip ids must be 5 vertex indices < ${N_VERTICES}, got ${fingertips}`);
  }
  out.set("fingertip_vertex_ids", {
    shape: [5],
    data: Float64Array.from(fingertips),
    integer: true,
  });

  const order = [
    "template_vertices", "faces", "shape_basis", "pose_basis", "joint_regressor",
    "skin_weights", "kinematic_parents", "pca_pose_components", "pca_pose_mean",
    "fingertip_vertex_ids",
  ];
  const ordered: PortableModel = new Map();
  for (const name of order) {
    ordered.set(name, out.get(name)!);
  }
  return ordered;
}
