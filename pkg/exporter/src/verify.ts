/**
 * Byte-level verification: recompute per-tensor checksums on both the
 * exported model file and the source checkpoint and compare.
 */
import * as fs from "fs";
import * as path from "path";

import { collectTensors, readExportManifest, sha256 } from "./export.js";
import { loadCheckpoint } from "./checkpoint.js";
import { readModelFile } from "./format.js";

export interface VerifyReport {
  pass: boolean;
  checked: number;
  mismatches: string[];
}

export function runVerify(modelPath: string, manifestPath: string): VerifyReport {
  const manifest = readExportManifest(manifestPath);
  const checkpoint = loadCheckpoint(path.resolve(path.dirname(manifestPath), manifest.checkpoint));
  const sourceTensors = collectTensors(manifest, checkpoint);
  const sourceSums = new Map(sourceTensors.map((t) => [t.name, sha256(t.data)]));

  const data = fs.readFileSync(modelPath);
  const parsed = readModelFile(data);
  const mismatches: string[] = [];
  const seen = new Set<string>();
  for (const t of parsed.tensors) {
    seen.add(t.name);
    const want = sourceSums.get(t.name);
    if (want === undefined) {
      mismatches.push(`${t.name}: present in model file but not in checkpoint`);
      continue;
    }
    const got = sha256(data.subarray(t.offset, t.offset + t.length));
    if (got !== want) {
      mismatches.push(`${t.name}: checksum mismatch (file ${got.slice(0, 12)}..., checkpoint ${want.slice(0, 12)}...)`);
    }
  }
  for (const name of sourceSums.keys()) {
    if (!seen.has(name)) {
      mismatches.push(`${name}: missing from model file`);
    }
  }
  return { pass: mismatches.length === 0, checked: parsed.tensors.length, mismatches };
}
