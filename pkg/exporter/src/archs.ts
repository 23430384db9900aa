/**
 * Expected tensor tables for the engine's stock architectures.
 *
 * Mirrors the Python builders name-for-name and shape-for-shape; the export
 * is rejected unless the checkpoint covers this table exactly.
 */

export interface TensorSpec {
  name: string;
  shape: number[];
}

function conv(name: string, kh: number, kw: number, cin: number, cout: number): TensorSpec[] {
  return [
    { name: `${name}.weight`, shape: [kh, kw, cin, cout] },
    { name: `${name}.bias`, shape: [cout] },
  ];
}

function depthwise(name: string, c: number): TensorSpec[] {
  return [
    { name: `${name}.weight`, shape: [3, 3, 1, c] },
    { name: `${name}.bias`, shape: [c] },
  ];
}

function linear(name: string, din: number, dout: number): TensorSpec[] {
  return [
    { name: `${name}.weight`, shape: [din, dout] },
    { name: `${name}.bias`, shape: [dout] },
  ];
}

function norm(name: string, dim: number): TensorSpec[] {
  return [
    { name: `${name}.gamma`, shape: [dim] },
    { name: `${name}.beta`, shape: [dim] },
  ];
}

function invertedResidual(prefix: string, cin: number, cout: number, expand = 4): TensorSpec[] {
  const hidden = expand * cin;
  return [
    ...conv(`${prefix}.expand`, 1, 1, cin, hidden),
    ...depthwise(`${prefix}.dw`, hidden),
    ...conv(`${prefix}.project`, 1, 1, hidden, cout),
  ];
}

function mobilevitBlock(prefix: string, channels: number, dim: number, depth: number): TensorSpec[] {
  const out: TensorSpec[] = [
    ...conv(`${prefix}.local`, 3, 3, channels, channels),
    ...conv(`${prefix}.proj_in`, 1, 1, channels, dim),
  ];
  for (let i = 0; i < depth; i++) {
    const lp = `${prefix}.layers.${i}`;
    out.push(...norm(`${lp}.ln1`, dim));
    for (const w of ["wq", "wk", "wv", "wo"]) {
      out.push({ name: `${lp}.attn.${w}`, shape: [dim, dim] });
    }
    out.push(...norm(`${lp}.ln2`, dim));
    out.push(...linear(`${lp}.mlp.fc1`, dim, 2 * dim));
    out.push(...linear(`${lp}.mlp.fc2`, 2 * dim, dim));
  }
  out.push(...norm(`${prefix}.norm`, dim));
  out.push(...conv(`${prefix}.proj_out`, 1, 1, dim, channels));
  out.push(...conv(`${prefix}.fusion`, 3, 3, 2 * channels, channels));
  return out;
}

function cnnLite(numClasses: number): TensorSpec[] {
  const out: TensorSpec[] = [];
  let cin = 3;
  for (const [k, ch] of [64, 128, 256].entries()) {
    out.push(...conv(`block${k + 1}.conv1`, 3, 3, cin, ch));
    out.push(...conv(`block${k + 1}.conv2`, 3, 3, ch, ch));
    cin = ch;
  }
  out.push(...linear("head", 256, numClasses));
  return out;
}

const XS_STAGES: Array<[number, number, number]> = [
  [64, 96, 2],
  [96, 120, 4],
  [128, 144, 3],
];

function mobilevitXs(numClasses: number): TensorSpec[] {
  const out: TensorSpec[] = [...conv("stem", 3, 3, 3, 16)];
  out.push(...invertedResidual("stage1.ir0", 16, 32));
  out.push(...invertedResidual("stage2.ir0", 32, 48));
  out.push(...invertedResidual("stage2.ir1", 48, 48));
  out.push(...invertedResidual("stage2.ir2", 48, 48));
  let cin = 48;
  XS_STAGES.forEach(([ch, dim, depth], i) => {
    const stage = `stage${i + 3}`;
    out.push(...invertedResidual(`${stage}.ir0`, cin, ch));
    out.push(...mobilevitBlock(`${stage}.mvit`, ch, dim, depth));
    cin = ch;
  });
  out.push(...conv("final", 1, 1, cin, 512));
  out.push(...linear("head", 512, numClasses));
  return out;
}

export function expectedTensors(arch: string, numClasses: number): TensorSpec[] {
  if (numClasses < 2) {
    throw new Error(`need at least 2 classes, got ${numClasses}`);
  }
  switch (arch) {
    case "cnn-lite":
      return cnnLite(numClasses);
    case "mobilevit-xs":
      return mobilevitXs(numClasses);
    default:
      throw new Error(`unknown architecture '${arch}' (known: cnn-lite, mobilevit-xs)`);
  }
}
