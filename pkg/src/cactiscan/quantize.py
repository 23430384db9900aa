"""Post-training quantization: f32 -> f16 storage and f32 -> int8 affine.

Weights only; compute stays in f32 (tensors are dequantized on load), so
quantization is purely a storage compression with the mapping
q = round(w / S) + Z and its inverse w = (q - Z) * S. Rounding is
half-to-even so golden files are bit-exact across platforms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .tensor import Tensor

if TYPE_CHECKING:  # pragma: no cover
    from .models import ModelGraph

I8_MIN, I8_MAX = -128, 127
F16_MAX = float(np.finfo(np.float16).max)  # 65504.0


class QuantizationError(ValueError):
    """Raised for invalid calibration inputs or mode misuse."""


@dataclass(frozen=True)
class QuantParams:
    """Scale, zero-point and clamp range of one quantized tensor."""

    scale: float
    zero_point: int = 0
    mode: str = "i8_affine"
    qmin: int = I8_MIN
    qmax: int = I8_MAX

    def __post_init__(self):
        if not self.scale > 0:
            raise QuantizationError(f"scale must be > 0, got {self.scale}")
        if self.mode == "i8_affine" and not I8_MIN <= self.zero_point <= I8_MAX:
            raise QuantizationError(f"zero_point {self.zero_point} outside i8 range")
        if self.mode not in ("i8_affine", "f16"):
            raise QuantizationError(f"unknown quantization mode {self.mode!r}")


@dataclass
class TensorQuantStats:
    max_abs_err: float
    mean_abs_err: float
    original_bytes: int
    compressed_bytes: int
    saturated: int = 0


@dataclass
class QuantReport:
    """Per-tensor error/size stats plus the model-level compression ratio."""

    mode: str
    per_tensor: dict[str, TensorQuantStats] = field(default_factory=dict)

    @property
    def original_bytes(self) -> int:
        return sum(s.original_bytes for s in self.per_tensor.values())

    @property
    def compressed_bytes(self) -> int:
        return sum(s.compressed_bytes for s in self.per_tensor.values())

    @property
    def compression_ratio(self) -> float:
        return self.original_bytes / self.compressed_bytes

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "original_bytes": self.original_bytes,
            "compressed_bytes": self.compressed_bytes,
            "compression_ratio": round(self.compression_ratio, 4),
            "tensors": {
                name: {
                    "max_abs_err": s.max_abs_err,
                    "mean_abs_err": s.mean_abs_err,
                    "original_bytes": s.original_bytes,
                    "compressed_bytes": s.compressed_bytes,
                    "saturated": s.saturated,
                }
                for name, s in self.per_tensor.items()
            },
        }


def calibrate_minmax(weights, scheme: str = "symmetric") -> QuantParams:
    """Min/max calibration for int8.

    Symmetric (default): S = max|w| / 127, Z = 0. The asymmetric scheme maps
    [min, max] onto the full i8 range. An all-zero tensor pins S = 1, Z = 0.
    """
    w = weights.f32() if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float32)
    if w.size == 0:
        raise QuantizationError("cannot calibrate an empty tensor")
    if not np.all(np.isfinite(w)):
        raise QuantizationError("weights contain NaN or Inf; calibration undefined")
    if scheme == "symmetric":
        max_abs = float(np.max(np.abs(w)))
        if max_abs == 0.0:
            return QuantParams(scale=1.0, zero_point=0)
        return QuantParams(scale=max_abs / I8_MAX, zero_point=0)
    if scheme == "affine":
        lo = min(float(w.min()), 0.0)
        hi = max(float(w.max()), 0.0)
        if hi == lo:
            return QuantParams(scale=1.0, zero_point=0)
        scale = (hi - lo) / (I8_MAX - I8_MIN)
        zp = int(np.clip(round(I8_MIN - lo / scale), I8_MIN, I8_MAX))
        return QuantParams(scale=scale, zero_point=zp)
    raise QuantizationError(f"unknown calibration scheme {scheme!r}")


def quantize_int8(weights, qp: QuantParams) -> Tensor:
    """Elementwise round-half-to-even of w/S, plus Z, clamped to i8."""
    if qp.mode != "i8_affine":
        raise QuantizationError(f"quantize_int8 requires i8_affine params, got {qp.mode}")
    w = weights.f32() if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float32)
    q = np.rint(w.astype(np.float64) / qp.scale) + qp.zero_point
    return Tensor(np.clip(q, qp.qmin, qp.qmax).astype(np.int8))


def dequantize(q, qp: QuantParams) -> Tensor:
    """(q - Z) * S back to f32."""
    arr = q.data if isinstance(q, Tensor) else np.asarray(q)
    return Tensor(((arr.astype(np.float32) - qp.zero_point) * np.float32(qp.scale)).astype(np.float32))


def quantize_f16(weights) -> Tensor:
    """IEEE half-precision round-to-nearest-even; overflow saturates to +/-max."""
    w = weights.f32() if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float32)
    return Tensor(np.clip(w, -F16_MAX, F16_MAX).astype(np.float16))


def f16_saturation_count(weights) -> int:
    w = weights.f32() if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float32)
    return int(np.count_nonzero(np.abs(w) > F16_MAX))


def quantize_model(model: "ModelGraph", mode: str) -> tuple["ModelGraph", QuantReport]:
    """Convert every weight tensor of an fp32 model to f16 or int8 storage.

    Returns a new graph (per-tensor QuantParams attached for int8) plus a
    report; inference dequantizes on load so kernel semantics are unchanged.
    """
    if mode not in ("f16", "i8"):
        raise QuantizationError(f"mode must be f16 or i8, got {mode!r}")
    non_f32 = [n for n, t in model.weights.items() if t.dtype != "f32"]
    if non_f32:
        raise QuantizationError(f"model is already quantized (non-f32 tensors: {non_f32[:3]}...)")

    new_weights: dict[str, Tensor] = {}
    qparams: dict[str, QuantParams] = {}
    report = QuantReport(mode=mode)
    for name, t in model.weights.items():
        if mode == "f16":
            qt = quantize_f16(t)
            back = qt.f32()
            saturated = f16_saturation_count(t)
        else:
            qp = calibrate_minmax(t)
            qt = quantize_int8(t, qp)
            back = dequantize(qt, qp).data
            qparams[name] = qp
            saturated = 0
        err = np.abs(back - t.f32())
        report.per_tensor[name] = TensorQuantStats(
            max_abs_err=float(err.max()),
            mean_abs_err=float(err.mean()),
            original_bytes=t.nbytes,
            compressed_bytes=qt.nbytes,
            saturated=saturated,
        )
        new_weights[name] = qt
    return model.with_weights(new_weights, qparams), report
