"""Bit-exact portable model container (format v1).

Little-endian layout::

    magic "CACT" | version u32=1
    arch-id: len u8 + UTF-8
    num_classes u32, then per label: len u8 + UTF-8
    input shape: 4 x u32 (NHWC)
    tensor count u32
    per tensor: name len u8 + UTF-8 | dtype u8 (0=f32,1=f16,2=i8) | rank u8
                | extents u32 x rank | quant flag u8 (0 none, 1: S f32 + Z i32)
                | offset u64 | length u64
    payload: tensor blobs, each 64-byte aligned, in directory order

Offsets are absolute. Saving the same model twice produces identical bytes.
Every directory invariant is validated before any payload is touched, so a
corrupt file is rejected with a structured error instead of crashing.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .models import ARCHITECTURES, ModelGraph, count_params, infer_shapes
from .quantize import QuantParams
from .tensor import DTYPE_BYTES, DTYPES, Tensor

MAGIC = b"CACT"
VERSION = 1
ALIGN = 64

_DTYPE_CODE = {"f32": 0, "f16": 1, "i8": 2}
_CODE_DTYPE = {v: k for k, v in _DTYPE_CODE.items()}


class ModelFormatError(Exception):
    """Base class for all structured container errors."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


class OverlappingTensorsError(ModelFormatError):
    pass


class UnknownArchitectureError(ModelFormatError):
    pass


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def _encode_str8(s: str, what: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 255:
        raise ModelFormatError(f"{what} longer than 255 bytes: {s[:32]!r}...")
    return bytes([len(raw)]) + raw


def _layout(model: ModelGraph) -> tuple[bytes, list[tuple[str, int, int]]]:
    """Header+directory bytes plus (name, offset, length) per tensor."""
    head = bytearray()
    head += MAGIC
    head += struct.pack("<I", VERSION)
    head += _encode_str8(model.arch_id, "arch id")
    head += struct.pack("<I", len(model.class_labels))
    for label in model.class_labels:
        head += _encode_str8(label, "class label")
    head += struct.pack("<4I", *model.input_shape)
    head += struct.pack("<I", len(model.weights))

    records = []
    for name, t in model.weights.items():
        rec = bytearray()
        rec += _encode_str8(name, "tensor name")
        rec += bytes([_DTYPE_CODE[t.dtype], len(t.shape)])
        rec += struct.pack(f"<{len(t.shape)}I", *t.shape)
        qp = model.qparams.get(name)
        if qp is not None:
            rec += bytes([1]) + struct.pack("<fi", qp.scale, qp.zero_point)
        else:
            rec += bytes([0])
        records.append((name, rec, t.nbytes))

    dir_size = len(head) + sum(len(rec) + 16 for _, rec, _ in records)  # +16: offset/length u64s
    blobs = []
    cursor = _align(dir_size)
    for name, rec, nbytes in records:
        blobs.append((name, cursor, nbytes))
        cursor = _align(cursor + nbytes)

    out = bytearray(head)
    for (_, rec, _), (_, offset, length) in zip(records, blobs):
        out += rec
        out += struct.pack("<QQ", offset, length)
    return bytes(out), blobs


def serialized_size(model: ModelGraph) -> int:
    """Exact on-disk byte count without writing anything."""
    header, blobs = _layout(model)
    if not blobs:
        return len(header)
    _, offset, length = blobs[-1]
    return offset + length


def save_model(model: ModelGraph, path) -> int:
    """Write the container; returns the byte count. Deterministic per model."""
    infer_shapes(model)
    header, blobs = _layout(model)
    total = serialized_size(model)
    buf = bytearray(total)
    buf[:len(header)] = header
    for name, offset, length in blobs:
        raw = model.weights[name].tobytes()
        assert len(raw) == length
        buf[offset:offset + length] = raw
    Path(path).write_bytes(buf)
    return total


class _Reader:
    """Bounds-checked little-endian cursor over the raw file bytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file ends while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]

    def i32(self, what: str) -> int:
        return struct.unpack("<i", self.take(4, what))[0]

    def str8(self, what: str) -> str:
        n = self.u8(f"{what} length")
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ModelFormatError(f"invalid UTF-8 in {what}") from e


def _parse(data: bytes) -> dict:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError("bad magic; not a model container")
    version = r.u32("version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    arch_id = r.str8("arch id")
    num_classes = r.u32("class count")
    if num_classes > 4096:
        raise ModelFormatError(f"implausible class count {num_classes}")
    labels = [r.str8(f"label {i}") for i in range(num_classes)]
    input_shape = struct.unpack("<4I", r.take(16, "input shape"))
    if any(e < 1 for e in input_shape):
        raise ModelFormatError(f"input shape extents must be >= 1, got {input_shape}")
    count = r.u32("tensor count")
    if count > 100_000:
        raise ModelFormatError(f"implausible tensor count {count}")

    tensors = []
    for i in range(count):
        name = r.str8(f"tensor {i} name")
        dtype_code = r.u8(f"tensor {name!r} dtype")
        if dtype_code not in _CODE_DTYPE:
            raise ModelFormatError(f"tensor {name!r}: unknown dtype code {dtype_code}")
        rank = r.u8(f"tensor {name!r} rank")
        if rank < 1 or rank > 8:
            raise ModelFormatError(f"tensor {name!r}: implausible rank {rank}")
        extents = struct.unpack(f"<{rank}I", r.take(4 * rank, f"tensor {name!r} extents"))
        if any(e < 1 for e in extents):
            raise ModelFormatError(f"tensor {name!r}: extents must be >= 1, got {extents}")
        flag = r.u8(f"tensor {name!r} quant flag")
        if flag not in (0, 1):
            raise ModelFormatError(f"tensor {name!r}: bad quant flag {flag}")
        qp = None
        if flag:
            scale = r.f32(f"tensor {name!r} scale")
            zp = r.i32(f"tensor {name!r} zero point")
            if not (scale > 0) or not np.isfinite(scale):
                raise ModelFormatError(f"tensor {name!r}: invalid scale {scale}")
            if not -128 <= zp <= 127:
                raise ModelFormatError(f"tensor {name!r}: zero point {zp} outside i8 range")
            qp = (scale, zp)
        offset = r.u64(f"tensor {name!r} offset")
        length = r.u64(f"tensor {name!r} length")
        tensors.append({
            "name": name, "dtype": _CODE_DTYPE[dtype_code], "shape": extents,
            "qparams": qp, "offset": offset, "length": length,
        })

    payload_start = r.pos
    seen = set()
    for t in tensors:
        name, dtype, extents = t["name"], t["dtype"], t["shape"]
        if name in seen:
            raise ModelFormatError(f"duplicate tensor name {name!r}")
        seen.add(name)
        elems = 1
        for e in extents:
            elems *= e
        expect = elems * DTYPE_BYTES[dtype]
        if t["length"] != expect:
            raise ModelFormatError(
                f"tensor {name!r}: payload length {t['length']} != "
                f"{DTYPE_BYTES[dtype]} x {elems} elements"
            )
        if t["offset"] % ALIGN:
            raise ModelFormatError(f"tensor {name!r}: offset {t['offset']} not {ALIGN}-byte aligned")
        if t["offset"] < payload_start:
            raise OverlappingTensorsError(f"tensor {name!r}: offset {t['offset']} inside the directory")
        if t["offset"] + t["length"] > len(data):
            raise TruncatedFileError(
                f"tensor {name!r}: payload [{t['offset']}, {t['offset'] + t['length']}) "
                f"extends past end of file ({len(data)} bytes)"
            )
    spans = sorted((t["offset"], t["offset"] + t["length"], t["name"]) for t in tensors)
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise OverlappingTensorsError(f"tensors {n0!r} and {n1!r} overlap")
    end = spans[-1][1] if spans else payload_start
    if len(data) != end:
        raise ModelFormatError(f"file has {len(data) - end} trailing bytes past the payload")

    return {
        "arch_id": arch_id, "labels": labels, "input_shape": input_shape,
        "tensors": tensors, "payload_start": payload_start,
    }


_skeleton_cache: dict[tuple, ModelGraph] = {}


def _skeleton(arch_id: str, labels: tuple[str, ...], input_shape: tuple[int, ...]) -> ModelGraph:
    key = (arch_id, labels, input_shape)
    cached = _skeleton_cache.get(key)
    if cached is not None:
        return cached
    builder = ARCHITECTURES.get(arch_id)
    if builder is None:
        raise UnknownArchitectureError(
            f"unknown architecture {arch_id!r}; known: {sorted(ARCHITECTURES)}"
        )
    try:
        try:
            model = builder(len(labels), seed=0, labels=list(labels), input_size=input_shape[1])
        except TypeError:  # custom builders without an input_size knob
            model = builder(len(labels), seed=0, labels=list(labels))
    except (ValueError, KeyError) as e:
        raise ModelFormatError(f"stored header incompatible with architecture {arch_id!r}: {e}") from e
    if len(_skeleton_cache) > 32:
        _skeleton_cache.clear()
    _skeleton_cache[key] = model
    return model


def load_model(path) -> ModelGraph:
    """Parse, validate, rebuild by arch id and attach the stored weights."""
    data = Path(path).read_bytes()
    info = _parse(data)
    arch_id = info["arch_id"]
    skeleton = _skeleton(arch_id, tuple(info["labels"]), tuple(info["input_shape"]))
    if tuple(skeleton.input_shape) != tuple(info["input_shape"]):
        raise ModelFormatError(
            f"stored input shape {info['input_shape']} does not match "
            f"architecture {arch_id!r} ({skeleton.input_shape})"
        )
    expected = {name: t.shape for name, t in skeleton.weights.items()}
    got = {t["name"]: t["shape"] for t in info["tensors"]}
    if set(expected) != set(got):
        missing = sorted(set(expected) - set(got))[:3]
        extra = sorted(set(got) - set(expected))[:3]
        raise ModelFormatError(
            f"tensor names do not match architecture {arch_id!r} "
            f"(missing {missing}, unexpected {extra})"
        )
    for name, shape in expected.items():
        if tuple(got[name]) != tuple(shape):
            raise ModelFormatError(
                f"tensor {name!r} has shape {got[name]}, architecture expects {shape}"
            )

    weights: dict[str, Tensor] = {}
    qparams: dict[str, QuantParams] = {}
    for t in info["tensors"]:
        raw = data[t["offset"]:t["offset"] + t["length"]]
        arr = np.frombuffer(raw, dtype=DTYPES[t["dtype"]]).reshape(t["shape"]).copy()
        weights[t["name"]] = Tensor(arr)
        if t["qparams"] is not None:
            scale, zp = t["qparams"]
            qparams[t["name"]] = QuantParams(scale=scale, zero_point=zp)
        elif t["dtype"] == "i8":
            raise ModelFormatError(f"i8 tensor {t['name']!r} has no quantization params")

    model = skeleton.with_weights(weights, qparams)
    infer_shapes(model)
    return model


def inspect_model(path) -> dict:
    """Read-only structured dump: header, labels, tensor table, checksums."""
    data = Path(path).read_bytes()
    info = _parse(data)
    tensors = []
    total_payload = 0
    for t in info["tensors"]:
        raw = data[t["offset"]:t["offset"] + t["length"]]
        total_payload += t["length"]
        tensors.append({
            "name": t["name"],
            "dtype": t["dtype"],
            "shape": list(t["shape"]),
            "bytes": t["length"],
            "offset": t["offset"],
            "quant": None if t["qparams"] is None else
                     {"scale": t["qparams"][0], "zero_point": t["qparams"][1]},
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
    return {
        "arch": info["arch_id"],
        "version": VERSION,
        "labels": info["labels"],
        "input_shape": list(info["input_shape"]),
        "tensor_count": len(tensors),
        "file_bytes": len(data),
        "payload_bytes": total_payload,
        "tensors": tensors,
    }


def format_inspect(info: dict) -> str:
    lines = [
        f"arch:        {info['arch']} (format v{info['version']})",
        f"labels:      {', '.join(info['labels'])}",
        f"input shape: {'x'.join(str(e) for e in info['input_shape'])}",
        f"tensors:     {info['tensor_count']}  "
        f"payload {info['payload_bytes']:,} B  file {info['file_bytes']:,} B",
        "",
        f"{'name':<34} {'dtype':<5} {'shape':<20} {'bytes':>10}  quant",
    ]
    for t in info["tensors"]:
        quant = "-" if t["quant"] is None else f"S={t['quant']['scale']:.6g} Z={t['quant']['zero_point']}"
        shape = "x".join(str(e) for e in t["shape"])
        lines.append(f"{t['name']:<34} {t['dtype']:<5} {shape:<20} {t['bytes']:>10,}  {quant}")
    return "\n".join(lines)


def model_size_summary(model: ModelGraph) -> dict:
    return {
        "params": count_params(model),
        "file_bytes": serialized_size(model),
        "weight_bytes": sum(t.nbytes for t in model.weights.values()),
    }
