"""Dense numeric kernels: convolution, pooling, activations, matmul, norms.

Pure functions over immutable tensors; accumulation is always f32 regardless
of storage dtype. NaNs propagate through elementwise ops (inputs are
validated upstream in the pipeline).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConvSpec, ShapeError, Tensor, as_array, same_padding

ACTIVATIONS = ("relu", "silu", "gelu")

# tanh-approximation constants for GELU, pinned for cross-platform determinism
_GELU_SQRT_2_OVER_PI = 0.7978845608028654
_GELU_CUBIC = 0.044715


def _nhwc(x, name: str) -> np.ndarray:
    arr = as_array(x)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be NHWC (4-D), got shape {arr.shape}")
    return arr


def conv2d(x, weights, bias, spec: ConvSpec) -> Tensor:
    """2-D convolution over an NHWC input.

    ``weights`` is (Kh, Kw, Cin/groups, Cout) and ``bias`` is (Cout,). Output
    spatial extents follow SAME/VALID arithmetic; each output element is the
    direct sum of the kernel window times the input patch plus bias.
    """
    arr = _nhwc(x, "conv2d input")
    w = as_array(weights)
    b = as_array(bias)
    if w.ndim != 4:
        raise ShapeError(f"conv2d weights must be (Kh, Kw, Cin/groups, Cout), got shape {w.shape}")
    kh, kw, cg, cout = w.shape
    if (kh, kw) != (spec.kernel_h, spec.kernel_w):
        raise ShapeError(f"weight kernel extents {kh}x{kw} do not match spec {spec.kernel_h}x{spec.kernel_w}")
    n, h, wid, cin = arr.shape
    g = spec.groups
    if cin % g != 0 or cout % g != 0:
        raise ShapeError(f"groups={g} must divide in-channels {cin} and out-channels {cout}")
    if cg != cin // g:
        raise ShapeError(f"weight in-channel extent {cg} does not match input channels {cin} / groups {g}")
    if b.shape != (cout,):
        raise ShapeError(f"bias length {b.shape} does not match out-channels {cout}")

    if spec.padding == "SAME":
        ph = same_padding(h, kh, spec.stride)
        pw = same_padding(wid, kw, spec.stride)
        arr = np.pad(arr, ((0, 0), ph, pw, (0, 0)))
    elif h < kh or wid < kw:
        raise ShapeError(f"VALID conv input {h}x{wid} smaller than kernel {kh}x{kw}")

    s = spec.stride
    # (N, Ho', Wo', C, Kh, Kw) -> strided subsample -> patches
    win = sliding_window_view(arr, (kh, kw), axis=(1, 2))[:, ::s, ::s]
    ho, wo = win.shape[1], win.shape[2]

    if g == 1:
        patches = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
        out = patches @ w.reshape(kh * kw * cin, cout)
        out = out.reshape(n, ho, wo, cout)
    elif g == cin:
        # depthwise: weights (Kh, Kw, 1, C*m); channel c feeds outputs c*m..(c+1)*m
        m = cout // cin
        wd = w.reshape(kh, kw, cin, m)
        out = np.einsum("nhwckl,klcm->nhwcm", win, wd, optimize=True).reshape(n, ho, wo, cout)
    else:
        out = np.empty((n, ho, wo, cout), dtype=np.float32)
        cg_out = cout // g
        for gi in range(g):
            wg = w[:, :, :, gi * cg_out:(gi + 1) * cg_out].reshape(kh * kw * cg, cg_out)
            patches = win[:, :, :, gi * cg:(gi + 1) * cg].transpose(0, 1, 2, 4, 5, 3)
            out[..., gi * cg_out:(gi + 1) * cg_out] = (
                patches.reshape(n * ho * wo, kh * kw * cg) @ wg
            ).reshape(n, ho, wo, cg_out)
    return Tensor(np.ascontiguousarray(out, dtype=np.float32) + b)


def pool2d(x, window: int, stride: int, mode: str = "max") -> Tensor:
    """Windowed max/avg pooling, channels independent, no padding."""
    arr = _nhwc(x, "pool2d input")
    if mode not in ("max", "avg"):
        raise ValueError(f"pool mode must be max or avg, got {mode!r}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n, h, w, c = arr.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input {h}x{w}")
    win = sliding_window_view(arr, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    if mode == "max":
        out = win.max(axis=(4, 5))
    else:
        out = win.mean(axis=(4, 5), dtype=np.float32)
    return Tensor(np.ascontiguousarray(out, dtype=np.float32))


def apply_activation(x, kind: str) -> Tensor:
    """Elementwise relu / silu / gelu (tanh approximation)."""
    arr = as_array(x)
    if kind == "relu":
        out = np.maximum(arr, 0.0)
    elif kind == "silu":
        out = arr / (1.0 + np.exp(-arr))
    elif kind == "gelu":
        inner = _GELU_SQRT_2_OVER_PI * (arr + _GELU_CUBIC * arr ** 3)
        out = 0.5 * arr * (1.0 + np.tanh(inner))
    else:
        raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    return Tensor(out.astype(np.float32, copy=False))


def linear(x, weights, bias) -> Tensor:
    """Affine map: (N, Din) @ (Din, Dout) + (Dout,), f32 accumulation."""
    arr = as_array(x)
    w = as_array(weights)
    b = as_array(bias)
    if arr.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear inner dimensions disagree: input {arr.shape[-1]} vs weights {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias length {b.shape} does not match output width {w.shape[1]}")
    return Tensor((arr @ w + b).astype(np.float32, copy=False))


def softmax(x) -> Tensor:
    """Numerically stable softmax over the last axis (max-subtraction)."""
    arr = as_array(x)
    if arr.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last axis")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return Tensor((e / e.sum(axis=-1, keepdims=True)).astype(np.float32, copy=False))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    arr = as_array(x)
    g = as_array(gamma)
    b = as_array(beta)
    d = arr.shape[-1]
    if g.shape != (d,) or b.shape != (d,):
        raise ShapeError(f"gamma/beta must have shape ({d},), got {g.shape} and {b.shape}")
    mean = arr.mean(axis=-1, keepdims=True, dtype=np.float32)
    var = arr.var(axis=-1, keepdims=True, dtype=np.float32)
    out = (arr - mean) / np.sqrt(var + eps) * g + b
    return Tensor(out.astype(np.float32, copy=False))
