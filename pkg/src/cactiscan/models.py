"""Architecture builders and the forward-pass executor.

Two stock architectures are provided: "cnn-lite", three conv blocks tuned
for low latency, and "mobilevit-xs", a hybrid that interleaves inverted
residual stages with transformer blocks over unfolded patches. Weights are
seeded-random (fan-in scaled uniform) so builds are deterministic without
training; trained weights arrive via the model file format.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .attention import AttentionConfig, TransformerWeights, fold_patches, transformer_block, unfold_patches
from .quantize import QuantParams
from .tensor import ConvSpec, ShapeError, Tensor, conv_output_extent

DEFAULT_LABELS_3 = ("Affected", "Healthy", "NoCactus")

LAYER_KINDS = (
    "conv", "depthwise_conv", "pool", "activation", "layer_norm", "linear",
    "mobilevit_block", "inverted_residual", "flatten", "global_avg_pool", "softmax_head",
)


@dataclass(frozen=True)
class LayerSpec:
    """One layer: a kind plus its parameters and consumed weight names."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass
class ModelGraph:
    """Ordered layers plus a named-weight table; immutable after build."""

    arch_id: str
    layers: list[LayerSpec]
    weights: dict[str, Tensor]
    input_shape: tuple[int, int, int, int]
    class_labels: list[str]
    qparams: dict[str, QuantParams] = field(default_factory=dict)
    _f32_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def weight_f32(self, name: str) -> np.ndarray:
        """Dequantized f32 view of a weight tensor (cached after first use)."""
        cached = self._f32_cache.get(name)
        if cached is not None:
            return cached
        t = self.weights[name]
        if t.dtype == "i8":
            qp = self.qparams[name]
            arr = (t.data.astype(np.float32) - qp.zero_point) * np.float32(qp.scale)
        else:
            arr = t.f32()
        self._f32_cache[name] = arr
        return arr

    def with_weights(self, weights: dict[str, Tensor], qparams: dict[str, QuantParams]) -> "ModelGraph":
        if set(weights) != set(self.weights):
            raise ValueError("replacement weight table must cover the same tensor names")
        return ModelGraph(
            arch_id=self.arch_id,
            layers=self.layers,
            weights=weights,
            input_shape=self.input_shape,
            class_labels=list(self.class_labels),
            qparams=dict(qparams),
        )


class _WeightTable:
    """Deterministic seeded initializer: uniform(-a, a), a = sqrt(6/fan_in)."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.tensors: dict[str, Tensor] = {}

    def _uniform(self, shape, fan_in: int) -> Tensor:
        a = np.sqrt(6.0 / fan_in)
        return Tensor(self.rng.uniform(-a, a, size=shape).astype(np.float32))

    def conv(self, name: str, kh: int, kw: int, cin: int, cout: int, groups: int = 1):
        self.tensors[f"{name}.weight"] = self._uniform((kh, kw, cin // groups, cout), kh * kw * cin // groups)
        self.tensors[f"{name}.bias"] = Tensor(np.zeros(cout, dtype=np.float32))

    def linear(self, name: str, din: int, dout: int):
        self.tensors[f"{name}.weight"] = self._uniform((din, dout), din)
        self.tensors[f"{name}.bias"] = Tensor(np.zeros(dout, dtype=np.float32))

    def norm(self, name: str, dim: int):
        self.tensors[f"{name}.gamma"] = Tensor(np.ones(dim, dtype=np.float32))
        self.tensors[f"{name}.beta"] = Tensor(np.zeros(dim, dtype=np.float32))

    def square(self, name: str, dim: int):
        self.tensors[name] = self._uniform((dim, dim), dim)


def _resolve_labels(num_classes: int, labels) -> list[str]:
    if labels is not None:
        labels = list(labels)
        if len(labels) != num_classes:
            raise ValueError(f"{len(labels)} labels given for {num_classes} classes")
        return labels
    if num_classes == len(DEFAULT_LABELS_3):
        return list(DEFAULT_LABELS_3)
    return [f"class_{i}" for i in range(num_classes)]


def build_lightweight_cnn(num_classes: int, seed: int = 42, labels=None,
                          input_size: int = 256) -> ModelGraph:
    """Efficiency-first classifier: three [conv-relu-conv-relu-maxpool] blocks.

    Channel plan (64, 128, 256), global average pooling, linear head;
    ~1.15M parameters at 3 classes. ``input_size`` only moves the spatial
    extents; the weight table is identical for any size.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if input_size < 8 or input_size % 8:
        raise ValueError(f"input_size must be a multiple of 8, got {input_size}")
    wt = _WeightTable(seed)
    layers: list[LayerSpec] = []
    cin = 3
    for k, ch in enumerate((64, 128, 256), start=1):
        for j, (ci, co) in enumerate(((cin, ch), (ch, ch)), start=1):
            name = f"block{k}.conv{j}"
            wt.conv(name, 3, 3, ci, co)
            layers.append(LayerSpec("conv", {
                "weights": f"{name}.weight", "bias": f"{name}.bias",
                "spec": ConvSpec(3, 3, stride=1, padding="SAME"),
            }))
            layers.append(LayerSpec("activation", {"kind": "relu"}))
        layers.append(LayerSpec("pool", {"window": 2, "stride": 2, "mode": "max"}))
        cin = ch
    layers.append(LayerSpec("global_avg_pool", {}))
    wt.linear("head", 256, num_classes)
    layers.append(LayerSpec("linear", {"weights": "head.weight", "bias": "head.bias"}))
    model = ModelGraph(
        arch_id="cnn-lite",
        layers=layers,
        weights=wt.tensors,
        input_shape=(1, input_size, input_size, 3),
        class_labels=_resolve_labels(num_classes, labels),
    )
    infer_shapes(model)
    return model


# (channels, transformer_dim, depth) for the three hybrid stages; the channel
# plan is widened over the smallest published variant so the 3-class model
# lands on the ~2.3M parameter budget.
_XS_STAGES = ((64, 96, 2), (96, 120, 4), (128, 144, 3))
_XS_FINAL_WIDTH = 512
_XS_EXPAND = 4
_XS_ACT = "silu"


def _add_inverted_residual(wt: _WeightTable, layers: list[LayerSpec], prefix: str,
                           cin: int, cout: int, stride: int):
    hidden = _XS_EXPAND * cin
    wt.conv(f"{prefix}.expand", 1, 1, cin, hidden)
    wt.conv(f"{prefix}.dw", 3, 3, hidden, hidden, groups=hidden)
    wt.conv(f"{prefix}.project", 1, 1, hidden, cout)
    layers.append(LayerSpec("inverted_residual", {
        "prefix": prefix, "in_channels": cin, "out_channels": cout,
        "stride": stride, "expand": _XS_EXPAND, "activation": _XS_ACT,
    }))


def _add_mobilevit_block(wt: _WeightTable, layers: list[LayerSpec], prefix: str,
                         channels: int, dim: int, depth: int):
    wt.conv(f"{prefix}.local", 3, 3, channels, channels)
    wt.conv(f"{prefix}.proj_in", 1, 1, channels, dim)
    for i in range(depth):
        lp = f"{prefix}.layers.{i}"
        wt.norm(f"{lp}.ln1", dim)
        for w in ("wq", "wk", "wv", "wo"):
            wt.square(f"{lp}.attn.{w}", dim)
        wt.norm(f"{lp}.ln2", dim)
        wt.linear(f"{lp}.mlp.fc1", dim, 2 * dim)
        wt.linear(f"{lp}.mlp.fc2", 2 * dim, dim)
    wt.norm(f"{prefix}.norm", dim)
    wt.conv(f"{prefix}.proj_out", 1, 1, dim, channels)
    wt.conv(f"{prefix}.fusion", 3, 3, 2 * channels, channels)
    layers.append(LayerSpec("mobilevit_block", {
        "prefix": prefix, "channels": channels, "dim": dim, "depth": depth,
        "cfg": AttentionConfig(embed_dim=dim, num_heads=4, patch_h=2, patch_w=2),
        "activation": _XS_ACT,
    }))


def build_mobilevit_xs(num_classes: int, seed: int = 42, labels=None,
                       input_size: int = 256) -> ModelGraph:
    """Accuracy-first hybrid: conv stem, inverted-residual stages, and three
    transformer stages (dims 96/120/144, depths 2/4/3, 2x2 patches, 4 heads).

    ~2.27M parameters at 3 classes.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if input_size < 64 or input_size % 64:
        raise ValueError(f"input_size must be a multiple of 64, got {input_size}")
    wt = _WeightTable(seed)
    layers: list[LayerSpec] = []

    wt.conv("stem", 3, 3, 3, 16)
    layers.append(LayerSpec("conv", {
        "weights": "stem.weight", "bias": "stem.bias",
        "spec": ConvSpec(3, 3, stride=2, padding="SAME"),
    }))
    layers.append(LayerSpec("activation", {"kind": _XS_ACT}))

    _add_inverted_residual(wt, layers, "stage1.ir0", 16, 32, stride=1)
    _add_inverted_residual(wt, layers, "stage2.ir0", 32, 48, stride=2)
    _add_inverted_residual(wt, layers, "stage2.ir1", 48, 48, stride=1)
    _add_inverted_residual(wt, layers, "stage2.ir2", 48, 48, stride=1)

    cin = 48
    for k, (ch, dim, depth) in enumerate(_XS_STAGES, start=3):
        _add_inverted_residual(wt, layers, f"stage{k}.ir0", cin, ch, stride=2)
        _add_mobilevit_block(wt, layers, f"stage{k}.mvit", ch, dim, depth)
        cin = ch

    wt.conv("final", 1, 1, cin, _XS_FINAL_WIDTH)
    layers.append(LayerSpec("conv", {
        "weights": "final.weight", "bias": "final.bias",
        "spec": ConvSpec(1, 1, stride=1, padding="SAME"),
    }))
    layers.append(LayerSpec("activation", {"kind": _XS_ACT}))
    layers.append(LayerSpec("global_avg_pool", {}))
    wt.linear("head", _XS_FINAL_WIDTH, num_classes)
    layers.append(LayerSpec("linear", {"weights": "head.weight", "bias": "head.bias"}))

    model = ModelGraph(
        arch_id="mobilevit-xs",
        layers=layers,
        weights=wt.tensors,
        input_shape=(1, input_size, input_size, 3),
        class_labels=_resolve_labels(num_classes, labels),
    )
    infer_shapes(model)
    return model


ARCHITECTURES: dict[str, Callable[..., ModelGraph]] = {
    "cnn-lite": build_lightweight_cnn,
    "mobilevit-xs": build_mobilevit_xs,
}


def register_architecture(arch_id: str, builder: Callable[..., ModelGraph]):
    """Register a builder so files carrying this arch id can be loaded."""
    ARCHITECTURES[arch_id] = builder


def build(arch_id: str, num_classes: int, seed: int = 42, labels=None) -> ModelGraph:
    if arch_id not in ARCHITECTURES:
        raise KeyError(f"unknown architecture {arch_id!r}; known: {sorted(ARCHITECTURES)}")
    return ARCHITECTURES[arch_id](num_classes, seed=seed, labels=labels)


def count_params(model: ModelGraph) -> int:
    """Total element count over all weight tensors."""
    return sum(t.size for t in model.weights.values())


# ---------------------------------------------------------------------------
# forward execution


def _run_inverted_residual(model: ModelGraph, p: dict, x: np.ndarray) -> np.ndarray:
    act = p["activation"]
    pre = f"{p['prefix']}"
    hidden_spec = ConvSpec(1, 1)
    h = kernels.conv2d(x, model.weight_f32(f"{pre}.expand.weight"),
                       model.weight_f32(f"{pre}.expand.bias"), hidden_spec)
    h = kernels.apply_activation(h, act)
    dw_spec = ConvSpec(3, 3, stride=p["stride"], padding="SAME", groups=h.shape[-1])
    h = kernels.conv2d(h, model.weight_f32(f"{pre}.dw.weight"),
                       model.weight_f32(f"{pre}.dw.bias"), dw_spec)
    h = kernels.apply_activation(h, act)
    h = kernels.conv2d(h, model.weight_f32(f"{pre}.project.weight"),
                       model.weight_f32(f"{pre}.project.bias"), hidden_spec)
    out = h.data
    if p["stride"] == 1 and p["in_channels"] == p["out_channels"]:
        out = out + x
    return out


def _transformer_weights(model: ModelGraph, layer_prefix: str) -> TransformerWeights:
    g = model.weight_f32
    return TransformerWeights(
        ln1_gamma=g(f"{layer_prefix}.ln1.gamma"), ln1_beta=g(f"{layer_prefix}.ln1.beta"),
        wq=g(f"{layer_prefix}.attn.wq"), wk=g(f"{layer_prefix}.attn.wk"),
        wv=g(f"{layer_prefix}.attn.wv"), wo=g(f"{layer_prefix}.attn.wo"),
        ln2_gamma=g(f"{layer_prefix}.ln2.gamma"), ln2_beta=g(f"{layer_prefix}.ln2.beta"),
        fc1_weight=g(f"{layer_prefix}.mlp.fc1.weight"), fc1_bias=g(f"{layer_prefix}.mlp.fc1.bias"),
        fc2_weight=g(f"{layer_prefix}.mlp.fc2.weight"), fc2_bias=g(f"{layer_prefix}.mlp.fc2.bias"),
    )


def _run_mobilevit_block(model: ModelGraph, p: dict, x: np.ndarray) -> np.ndarray:
    act = p["activation"]
    pre = p["prefix"]
    cfg: AttentionConfig = p["cfg"]
    shortcut = x
    h = kernels.conv2d(x, model.weight_f32(f"{pre}.local.weight"),
                       model.weight_f32(f"{pre}.local.bias"), ConvSpec(3, 3))
    h = kernels.apply_activation(h, act)
    h = kernels.conv2d(h, model.weight_f32(f"{pre}.proj_in.weight"),
                       model.weight_f32(f"{pre}.proj_in.bias"), ConvSpec(1, 1))
    _, fh, fw, _ = h.shape
    seq = unfold_patches(h, cfg.patch_h, cfg.patch_w)
    for i in range(p["depth"]):
        seq = transformer_block(seq, _transformer_weights(model, f"{pre}.layers.{i}"), cfg, act)
    seq = kernels.layer_norm(seq, model.weight_f32(f"{pre}.norm.gamma"),
                             model.weight_f32(f"{pre}.norm.beta"))
    h = fold_patches(seq, fh, fw, cfg.patch_h, cfg.patch_w)
    h = kernels.conv2d(h, model.weight_f32(f"{pre}.proj_out.weight"),
                       model.weight_f32(f"{pre}.proj_out.bias"), ConvSpec(1, 1))
    h = kernels.apply_activation(h, act)
    fused_in = np.concatenate([shortcut, h.data], axis=-1)
    h = kernels.conv2d(fused_in, model.weight_f32(f"{pre}.fusion.weight"),
                       model.weight_f32(f"{pre}.fusion.bias"), ConvSpec(3, 3))
    return kernels.apply_activation(h, act).data


def forward(model: ModelGraph, batch) -> Tensor:
    """Execute the layers in order; returns pre-softmax logits (N, C)."""
    x = batch.f32() if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float32)
    if x.shape[1:] != model.input_shape[1:]:
        raise ShapeError(
            f"batch shape {x.shape} does not match model input {model.input_shape} (batch dim free)"
        )
    for idx, layer in enumerate(model.layers):
        p = layer.params
        try:
            if layer.kind in ("conv", "depthwise_conv"):
                x = kernels.conv2d(x, model.weight_f32(p["weights"]),
                                   model.weight_f32(p["bias"]), p["spec"]).data
            elif layer.kind == "pool":
                x = kernels.pool2d(x, p["window"], p["stride"], p["mode"]).data
            elif layer.kind == "activation":
                x = kernels.apply_activation(x, p["kind"]).data
            elif layer.kind == "layer_norm":
                x = kernels.layer_norm(x, model.weight_f32(p["gamma"]),
                                       model.weight_f32(p["beta"]), p.get("eps", 1e-5)).data
            elif layer.kind == "linear":
                x = kernels.linear(x, model.weight_f32(p["weights"]),
                                   model.weight_f32(p["bias"])).data
            elif layer.kind == "inverted_residual":
                x = _run_inverted_residual(model, p, x)
            elif layer.kind == "mobilevit_block":
                x = _run_mobilevit_block(model, p, x)
            elif layer.kind == "flatten":
                x = x.reshape(x.shape[0], -1)
            elif layer.kind == "global_avg_pool":
                x = x.mean(axis=(1, 2), dtype=np.float32)
            elif layer.kind == "softmax_head":
                x = kernels.softmax(x).data
        except ShapeError as e:
            raise ShapeError(f"layer {idx} ({layer.kind}): {e}") from e
    return Tensor(np.asarray(x, dtype=np.float32))


# ---------------------------------------------------------------------------
# static shape checking


def _check_weight(model: ModelGraph, name: str, expect: tuple[int, ...], where: str):
    t = model.weights.get(name)
    if t is None:
        raise ShapeError(f"{where}: weight {name!r} missing from table")
    if t.shape != expect:
        raise ShapeError(f"{where}: weight {name!r} has shape {t.shape}, expected {expect}")


def infer_shapes(model: ModelGraph) -> list[tuple[int, ...]]:
    """Compute every layer's output shape; raises if any contract is broken."""
    shape = model.input_shape
    shapes = [shape]
    for idx, layer in enumerate(model.layers):
        p = layer.params
        where = f"layer {idx} ({layer.kind})"
        if layer.kind in ("conv", "depthwise_conv"):
            spec: ConvSpec = p["spec"]
            n, h, w, c = shape
            wt = model.weights.get(p["weights"])
            if wt is None:
                raise ShapeError(f"{where}: weight {p['weights']!r} missing from table")
            kh, kw, cg, cout = wt.shape
            if cg != c // spec.groups:
                raise ShapeError(f"{where}: weight channels {cg} vs input {c}/groups {spec.groups}")
            _check_weight(model, p["bias"], (cout,), where)
            shape = (n, conv_output_extent(h, kh, spec.stride, spec.padding),
                     conv_output_extent(w, kw, spec.stride, spec.padding), cout)
        elif layer.kind == "pool":
            n, h, w, c = shape
            if p["window"] > h or p["window"] > w:
                raise ShapeError(f"{where}: window {p['window']} exceeds input {h}x{w}")
            shape = (n, (h - p["window"]) // p["stride"] + 1,
                     (w - p["window"]) // p["stride"] + 1, c)
        elif layer.kind in ("activation", "softmax_head"):
            pass
        elif layer.kind == "layer_norm":
            _check_weight(model, p["gamma"], (shape[-1],), where)
            _check_weight(model, p["beta"], (shape[-1],), where)
        elif layer.kind == "linear":
            wt = model.weights.get(p["weights"])
            if wt is None:
                raise ShapeError(f"{where}: weight {p['weights']!r} missing from table")
            if shape[-1] != wt.shape[0]:
                raise ShapeError(f"{where}: input width {shape[-1]} vs weight rows {wt.shape[0]}")
            _check_weight(model, p["bias"], (wt.shape[1],), where)
            shape = shape[:-1] + (wt.shape[1],)
        elif layer.kind == "inverted_residual":
            n, h, w, c = shape
            if c != p["in_channels"]:
                raise ShapeError(f"{where}: input channels {c} vs declared {p['in_channels']}")
            hidden = p["expand"] * c
            pre = p["prefix"]
            _check_weight(model, f"{pre}.expand.weight", (1, 1, c, hidden), where)
            _check_weight(model, f"{pre}.dw.weight", (3, 3, 1, hidden), where)
            _check_weight(model, f"{pre}.project.weight", (1, 1, hidden, p["out_channels"]), where)
            shape = (n, conv_output_extent(h, 3, p["stride"], "SAME"),
                     conv_output_extent(w, 3, p["stride"], "SAME"), p["out_channels"])
        elif layer.kind == "mobilevit_block":
            n, h, w, c = shape
            cfg: AttentionConfig = p["cfg"]
            if c != p["channels"]:
                raise ShapeError(f"{where}: input channels {c} vs declared {p['channels']}")
            if h % cfg.patch_h or w % cfg.patch_w:
                raise ShapeError(f"{where}: spatial {h}x{w} not divisible by patch "
                                 f"{cfg.patch_h}x{cfg.patch_w}")
            d = p["dim"]
            pre = p["prefix"]
            _check_weight(model, f"{pre}.local.weight", (3, 3, c, c), where)
            _check_weight(model, f"{pre}.proj_in.weight", (1, 1, c, d), where)
            for i in range(p["depth"]):
                lp = f"{pre}.layers.{i}"
                for wname in ("wq", "wk", "wv", "wo"):
                    _check_weight(model, f"{lp}.attn.{wname}", (d, d), where)
                _check_weight(model, f"{lp}.mlp.fc1.weight", (d, 2 * d), where)
                _check_weight(model, f"{lp}.mlp.fc2.weight", (2 * d, d), where)
            _check_weight(model, f"{pre}.proj_out.weight", (1, 1, d, c), where)
            _check_weight(model, f"{pre}.fusion.weight", (3, 3, 2 * c, c), where)
        elif layer.kind == "flatten":
            n = shape[0]
            size = 1
            for e in shape[1:]:
                size *= e
            shape = (n, size)
        elif layer.kind == "global_avg_pool":
            shape = (shape[0], shape[-1])
        shapes.append(shape)
    if model.class_labels and shapes[-1][-1] != len(model.class_labels):
        raise ShapeError(
            f"final width {shapes[-1][-1]} does not match {len(model.class_labels)} class labels"
        )
    return shapes
