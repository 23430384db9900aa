"""Core tensor container and layout conventions.

All image tensors are NHWC, row-major. Storage dtypes are f32, f16 and i8;
f16/i8 are storage-only and every kernel widens to f32 before computing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# storage dtype name -> numpy dtype
DTYPES = {
    "f32": np.dtype(np.float32),
    "f16": np.dtype(np.float16),
    "i8": np.dtype(np.int8),
}
_NP_TO_NAME = {v: k for k, v in DTYPES.items()}

DTYPE_BYTES = {"f32": 4, "f16": 2, "i8": 1}


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with an operation."""


class Tensor:
    """Immutable n-dimensional array with a pinned storage dtype.

    Wraps a C-contiguous numpy buffer. The buffer is marked read-only so a
    built model can be shared freely across threads.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(DTYPES[dtype], copy=False)
        if arr.dtype not in _NP_TO_NAME:
            raise TypeError(f"unsupported storage dtype {arr.dtype}; expected one of {sorted(DTYPES)}")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(e < 1 for e in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def dtype(self) -> str:
        return _NP_TO_NAME[self.data.dtype]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def f32(self) -> np.ndarray:
        """Widen to an f32 compute array (no copy if already f32)."""
        return np.asarray(self.data, dtype=np.float32)

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    def __repr__(self) -> str:
        return f"Tensor(dtype={self.dtype}, shape={self.shape})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.dtype == other.dtype
            and self.shape == other.shape
            and np.array_equal(self.data, other.data)
        )


def as_array(x, dtype=np.float32) -> np.ndarray:
    """Accept either a Tensor or array-like and return an ndarray view."""
    if isinstance(x, Tensor):
        return np.asarray(x.data, dtype=dtype)
    return np.asarray(x, dtype=dtype)


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution.

    ``padding`` is "SAME" (zero pad, split floor/ceil with the extra row and
    column on the bottom/right) or "VALID" (no padding). ``groups`` is 1 for
    a dense conv or the input channel count for a depthwise conv; any divisor
    of both channel counts is accepted.
    """

    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: str = "SAME"
    groups: int = 1

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError(f"kernel extents must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding not in ("SAME", "VALID"):
            raise ValueError(f"padding must be SAME or VALID, got {self.padding!r}")
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")


def conv_output_extent(in_extent: int, kernel: int, stride: int, padding: str) -> int:
    """Spatial output extent under SAME/VALID arithmetic."""
    if padding == "SAME":
        return -(-in_extent // stride)  # ceil division
    if in_extent < kernel:
        raise ShapeError(f"VALID conv needs input extent >= kernel ({in_extent} < {kernel})")
    return (in_extent - kernel) // stride + 1


def same_padding(in_extent: int, kernel: int, stride: int) -> tuple[int, int]:
    """(pad_begin, pad_end) for SAME padding; the extra pixel goes to the end."""
    out = -(-in_extent // stride)
    total = max((out - 1) * stride + kernel - in_extent, 0)
    begin = total // 2
    return begin, total - begin
