/**
 * Export driver: read an export manifest, resolve the checkpoint against the
 * target architecture's expected tensor table, and write a format-v1 file.
 */
import * as crypto from "crypto";
import * as fs from "fs";
import * as path from "path";

import { expectedTensors, TensorSpec } from "./archs.js";
import { Checkpoint, loadCheckpoint } from "./checkpoint.js";
import { NamedTensor, writeModelFile } from "./format.js";

export interface ExportManifest {
  /** path to the tfjs-style weights manifest, relative to this file */
  checkpoint: string;
  arch: string;
  labels: string[];
  input_size?: number;
  /** source checkpoint name -> format tensor name; omit for identity */
  mapping?: Record<string, string> | null;
}

export interface ExportResult {
  outPath: string;
  bytes: number;
  tensors: Array<{ name: string; shape: number[]; sha256: string }>;
}

export function readExportManifest(manifestPath: string): ExportManifest {
  const doc = JSON.parse(fs.readFileSync(manifestPath, "utf-8")) as ExportManifest;
  for (const key of ["checkpoint", "arch", "labels"] as const) {
    if (doc[key] === undefined) {
      throw new Error(`${manifestPath}: missing '${key}'`);
    }
  }
  if (!Array.isArray(doc.labels) || doc.labels.length < 2) {
    throw new Error(`${manifestPath}: 'labels' must list at least two classes`);
  }
  return doc;
}

/** target name -> source name, from the manifest's source->target table. */
function targetToSource(manifest: ExportManifest, expected: TensorSpec[]): Map<string, string> {
  const resolve = new Map<string, string>();
  if (manifest.mapping) {
    for (const [source, target] of Object.entries(manifest.mapping)) {
      if (resolve.has(target)) {
        throw new Error(`mapping sends two source tensors to '${target}'`);
      }
      resolve.set(target, source);
    }
  }
  for (const spec of expected) {
    if (!resolve.has(spec.name)) {
      resolve.set(spec.name, spec.name); // identity for unmapped names
    }
  }
  return resolve;
}

export function collectTensors(manifest: ExportManifest, checkpoint: Checkpoint): NamedTensor[] {
  const expected = expectedTensors(manifest.arch, manifest.labels.length);
  const resolve = targetToSource(manifest, expected);
  const tensors: NamedTensor[] = [];
  for (const spec of expected) {
    const source = resolve.get(spec.name)!;
    const entry = checkpoint.get(source);
    if (!entry) {
      throw new Error(`tensor '${spec.name}' missing from checkpoint (source name '${source}')`);
    }
    const same =
      entry.shape.length === spec.shape.length &&
      entry.shape.every((e, i) => e === spec.shape[i]);
    if (!same) {
      throw new Error(
        `tensor '${spec.name}': checkpoint shape [${entry.shape}] does not match ` +
          `expected [${spec.shape}]`,
      );
    }
    tensors.push({ name: spec.name, shape: spec.shape, data: entry.data });
  }
  return tensors;
}

export function sha256(data: Buffer): string {
  return crypto.createHash("sha256").update(data).digest("hex");
}

export function runExport(manifestPath: string, outPath: string): ExportResult {
  const manifest = readExportManifest(manifestPath);
  const checkpoint = loadCheckpoint(path.resolve(path.dirname(manifestPath), manifest.checkpoint));
  const tensors = collectTensors(manifest, checkpoint);
  const size = manifest.input_size ?? 256;
  const file = writeModelFile(
    { arch: manifest.arch, labels: manifest.labels, inputShape: [1, size, size, 3] },
    tensors,
  );
  fs.writeFileSync(outPath, file);
  return {
    outPath,
    bytes: file.length,
    tensors: tensors.map((t) => ({ name: t.name, shape: t.shape, sha256: sha256(t.data) })),
  };
}
