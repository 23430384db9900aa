/**
 * Model container v1 writer and a minimal reader for verification.
 *
 * Layout (little-endian): magic "CACT" | version u32=1 | arch id (u8 len +
 * UTF-8) | class count u32 + labels (u8 len + UTF-8) | input shape 4 x u32 |
 * tensor count u32 | per tensor {name u8+bytes, dtype u8, rank u8,
 * extents u32 x rank, quant flag u8, offset u64, length u64} | payload blobs
 * 64-byte aligned. The exporter always writes dtype f32 and quant flag 0.
 */

const MAGIC = "CACT";
const VERSION = 1;
const ALIGN = 64;
const DTYPE_F32 = 0;

export interface NamedTensor {
  name: string;
  shape: number[];
  /** little-endian f32 payload, 4 x element-count bytes */
  data: Buffer;
}

export interface ModelHeader {
  arch: string;
  labels: string[];
  inputShape: [number, number, number, number];
}

function str8(s: string, what: string): Buffer {
  const raw = Buffer.from(s, "utf-8");
  if (raw.length > 255) {
    throw new Error(`${what} longer than 255 bytes: ${s.slice(0, 32)}...`);
  }
  return Buffer.concat([Buffer.from([raw.length]), raw]);
}

function align(n: number): number {
  return Math.ceil(n / ALIGN) * ALIGN;
}

export function writeModelFile(header: ModelHeader, tensors: NamedTensor[]): Buffer {
  const parts: Buffer[] = [Buffer.from(MAGIC, "ascii")];
  const u32 = (v: number) => {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(v);
    return b;
  };
  parts.push(u32(VERSION));
  parts.push(str8(header.arch, "arch id"));
  parts.push(u32(header.labels.length));
  for (const label of header.labels) {
    parts.push(str8(label, "class label"));
  }
  for (const extent of header.inputShape) {
    parts.push(u32(extent));
  }
  parts.push(u32(tensors.length));

  const records: Buffer[] = [];
  for (const t of tensors) {
    const elements = t.shape.reduce((a, b) => a * b, 1);
    if (t.data.length !== 4 * elements) {
      throw new Error(
        `tensor '${t.name}': payload ${t.data.length} B != 4 x ${elements} elements`,
      );
    }
    const rec = [str8(t.name, "tensor name"), Buffer.from([DTYPE_F32, t.shape.length])];
    for (const extent of t.shape) {
      rec.push(u32(extent));
    }
    rec.push(Buffer.from([0])); // no quantization params
    records.push(Buffer.concat(rec));
  }

  const headLen = parts.reduce((a, b) => a + b.length, 0);
  const dirLen = headLen + records.reduce((a, b) => a + b.length + 16, 0);

  let cursor = align(dirLen);
  const blobs: Array<{ offset: number; tensor: NamedTensor }> = [];
  for (const [i, t] of tensors.entries()) {
    const fixed = Buffer.alloc(16);
    fixed.writeBigUInt64LE(BigInt(cursor), 0);
    fixed.writeBigUInt64LE(BigInt(t.data.length), 8);
    records[i] = Buffer.concat([records[i], fixed]);
    blobs.push({ offset: cursor, tensor: t });
    cursor = align(cursor + t.data.length);
  }

  const lastEnd = blobs.length
    ? blobs[blobs.length - 1].offset + blobs[blobs.length - 1].tensor.data.length
    : dirLen;
  const out = Buffer.alloc(lastEnd);
  let pos = 0;
  for (const part of [...parts, ...records]) {
    part.copy(out, pos);
    pos += part.length;
  }
  for (const { offset, tensor } of blobs) {
    tensor.data.copy(out, offset);
  }
  return out;
}

export interface ParsedTensor {
  name: string;
  dtype: number;
  shape: number[];
  offset: number;
  length: number;
}

export interface ParsedModel {
  arch: string;
  labels: string[];
  inputShape: number[];
  tensors: ParsedTensor[];
}

export function readModelFile(data: Buffer): ParsedModel {
  let pos = 0;
  const take = (n: number, what: string): Buffer => {
    if (pos + n > data.length) {
      throw new Error(`file ends while reading ${what}`);
    }
    const chunk = data.subarray(pos, pos + n);
    pos += n;
    return chunk;
  };
  const u8 = (what: string) => take(1, what)[0];
  const u32 = (what: string) => take(4, what).readUInt32LE(0);
  const u64 = (what: string) => Number(take(8, what).readBigUInt64LE(0));
  const readStr8 = (what: string) => take(u8(`${what} length`), what).toString("utf-8");

  if (take(4, "magic").toString("ascii") !== MAGIC) {
    throw new Error("bad magic; not a model container");
  }
  const version = u32("version");
  if (version !== VERSION) {
    throw new Error(`unsupported container version ${version}`);
  }
  const arch = readStr8("arch id");
  const numClasses = u32("class count");
  const labels: string[] = [];
  for (let i = 0; i < numClasses; i++) {
    labels.push(readStr8(`label ${i}`));
  }
  const inputShape = [u32("shape"), u32("shape"), u32("shape"), u32("shape")];
  const count = u32("tensor count");
  const tensors: ParsedTensor[] = [];
  for (let i = 0; i < count; i++) {
    const name = readStr8(`tensor ${i} name`);
    const dtype = u8("dtype");
    const rank = u8("rank");
    const shape: number[] = [];
    for (let j = 0; j < rank; j++) {
      shape.push(u32("extent"));
    }
    const flag = u8("quant flag");
    if (flag === 1) {
      take(8, "quant params");
    } else if (flag !== 0) {
      throw new Error(`tensor '${name}': bad quant flag ${flag}`);
    }
    const offset = u64("offset");
    const length = u64("length");
    if (offset + length > data.length) {
      throw new Error(`tensor '${name}': payload extends past end of file`);
    }
    tensors.push({ name, dtype, shape, offset, length });
  }
  return { arch, labels, inputShape, tensors };
}
