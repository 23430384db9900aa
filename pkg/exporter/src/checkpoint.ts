/**
 * tfjs-style checkpoint reader: a JSON weights manifest of shard groups,
 * each listing binary shard paths and the weight specs packed into them in
 * order. Only float32 weights are accepted; quantization happens later on
 * the engine side.
 */
import * as fs from "fs";
import * as path from "path";

export interface WeightSpec {
  name: string;
  shape: number[];
  dtype: string;
}

export interface WeightsGroup {
  paths: string[];
  weights: WeightSpec[];
}

export interface CheckpointTensor {
  shape: number[];
  data: Buffer;
}

export type Checkpoint = Map<string, CheckpointTensor>;

export function loadCheckpoint(manifestPath: string): Checkpoint {
  const dir = path.dirname(manifestPath);
  const groups: WeightsGroup[] = JSON.parse(fs.readFileSync(manifestPath, "utf-8"));
  if (!Array.isArray(groups)) {
    throw new Error(`${manifestPath}: expected an array of weight groups`);
  }
  const tensors: Checkpoint = new Map();
  for (const group of groups) {
    const blob = Buffer.concat(group.paths.map((p) => fs.readFileSync(path.resolve(dir, p))));
    let offset = 0;
    for (const spec of group.weights) {
      if (spec.dtype !== "float32") {
        throw new Error(`tensor '${spec.name}': dtype ${spec.dtype} unsupported; export expects float32`);
      }
      const elements = spec.shape.reduce((a, b) => a * b, 1);
      const nbytes = 4 * elements;
      if (offset + nbytes > blob.length) {
        throw new Error(`tensor '${spec.name}': shard data ends early (${blob.length} B total)`);
      }
      if (tensors.has(spec.name)) {
        throw new Error(`duplicate tensor '${spec.name}' in checkpoint`);
      }
      tensors.set(spec.name, { shape: spec.shape, data: blob.subarray(offset, offset + nbytes) });
      offset += nbytes;
    }
    if (offset !== blob.length) {
      throw new Error(`shard group has ${blob.length - offset} trailing bytes`);
    }
  }
  if (tensors.size === 0) {
    throw new Error(`${manifestPath}: checkpoint holds no tensors`);
  }
  return tensors;
}
