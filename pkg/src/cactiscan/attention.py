"""Patch unfold/fold and multi-head self-attention.

The unfold rearranges an NHWC feature map into per-pixel-position sequences
of patches (N, P, T, C) where P = patch_h * patch_w and T is the number of
patches; attention then mixes the T patches at each pixel position. fold is
the exact inverse. No positional encoding is added.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import apply_activation, layer_norm, linear, softmax
from .tensor import ShapeError, Tensor, as_array


@dataclass(frozen=True)
class AttentionConfig:
    embed_dim: int
    num_heads: int
    patch_h: int = 2
    patch_w: int = 2

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(f"num_heads {self.num_heads} must divide embed_dim {self.embed_dim}")
        if self.patch_h < 1 or self.patch_w < 1:
            raise ValueError("patch extents must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


def unfold_patches(fmap, patch_h: int, patch_w: int) -> Tensor:
    """(N, H, W, C) -> (N, P, T, C); bijective, nothing created or lost.

    Patches tile the map row-major; within a patch, pixel positions are
    row-major too. Spatial extents must be divisible by the patch extents
    (callers pad beforehand).
    """
    arr = as_array(fmap)
    if arr.ndim != 4:
        raise ShapeError(f"unfold_patches expects NHWC, got shape {arr.shape}")
    n, h, w, c = arr.shape
    if h % patch_h != 0 or w % patch_w != 0:
        raise ShapeError(
            f"spatial extents {h}x{w} not divisible by patch {patch_h}x{patch_w}; pad the map first"
        )
    nh, nw = h // patch_h, w // patch_w
    seq = (
        arr.reshape(n, nh, patch_h, nw, patch_w, c)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(n, patch_h * patch_w, nh * nw, c)
    )
    return Tensor(np.ascontiguousarray(seq))


def fold_patches(seq, out_h: int, out_w: int, patch_h: int, patch_w: int) -> Tensor:
    """Exact inverse of :func:`unfold_patches`."""
    arr = as_array(seq)
    if arr.ndim != 4:
        raise ShapeError(f"fold_patches expects (N, P, T, C), got shape {arr.shape}")
    n, p, t, c = arr.shape
    if p != patch_h * patch_w:
        raise ShapeError(f"P={p} does not equal patch area {patch_h}x{patch_w}")
    if p * t != out_h * out_w:
        raise ShapeError(f"P*T={p * t} does not cover output extents {out_h}x{out_w}")
    nh, nw = out_h // patch_h, out_w // patch_w
    fmap = (
        arr.reshape(n, patch_h, patch_w, nh, nw, c)
        .transpose(0, 3, 1, 4, 2, 5)
        .reshape(n, out_h, out_w, c)
    )
    return Tensor(np.ascontiguousarray(fmap))


def attention_scores(q: np.ndarray, k: np.ndarray, head_dim: int) -> np.ndarray:
    """Scaled dot-product score matrix QK^T / sqrt(d_k), softmaxed per row."""
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(float(head_dim))
    return softmax(scores).data


def mhsa(seq, wq, wk, wv, wo, cfg: AttentionConfig) -> Tensor:
    """Multi-head self-attention over the T axis of (..., T, d).

    Per head: q k v projections, row-softmaxed QK^T/sqrt(d_k), weighted sum
    of values; heads concatenated and projected by wo. Projections carry no
    bias.
    """
    arr = as_array(seq)
    d = cfg.embed_dim
    if arr.shape[-1] != d:
        raise ShapeError(f"sequence feature dim {arr.shape[-1]} does not match embed_dim {d}")
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)):
        if as_array(w).shape != (d, d):
            raise ShapeError(f"{name} must be ({d}, {d}), got {as_array(w).shape}")
    lead = arr.shape[:-2]
    t = arr.shape[-2]
    h, dk = cfg.num_heads, cfg.head_dim

    def split_heads(m: np.ndarray) -> np.ndarray:
        return m.reshape(*lead, t, h, dk).swapaxes(-2, -3)  # (..., h, T, dk)

    q = split_heads(arr @ as_array(wq))
    k = split_heads(arr @ as_array(wk))
    v = split_heads(arr @ as_array(wv))
    attn = attention_scores(q, k, dk)
    ctx = (attn @ v).swapaxes(-2, -3).reshape(*lead, t, d)
    return Tensor((ctx @ as_array(wo)).astype(np.float32, copy=False))


@dataclass(frozen=True)
class TransformerWeights:
    """Learned tensors of one pre-norm encoder layer (MLP hidden dim = 2*d)."""

    ln1_gamma: Tensor
    ln1_beta: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    fc1_weight: Tensor
    fc1_bias: Tensor
    fc2_weight: Tensor
    fc2_bias: Tensor


def transformer_block(seq, weights: TransformerWeights, cfg: AttentionConfig,
                      activation: str = "silu") -> Tensor:
    """Pre-norm encoder layer: x + MHSA(LN(x)), then x + MLP(LN(x)).

    Shape-preserving; with all learned tensors zero the residual paths make
    this the exact identity.
    """
    x = as_array(seq)
    attn_in = layer_norm(x, weights.ln1_gamma, weights.ln1_beta)
    x = x + mhsa(attn_in, weights.wq, weights.wk, weights.wv, weights.wo, cfg).data
    mlp_in = layer_norm(x, weights.ln2_gamma, weights.ln2_beta)
    hidden = apply_activation(linear(mlp_in, weights.fc1_weight, weights.fc1_bias), activation)
    x = x + linear(hidden, weights.fc2_weight, weights.fc2_bias).data
    return Tensor(x.astype(np.float32, copy=False))
