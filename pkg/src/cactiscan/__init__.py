"""Offline edge inference engine and quantization toolkit for cactus pad
disease screening: two compact architectures, f16/i8 post-training
quantization, grid-LIME explanations, and confidence-tiered dispatch with a
non-plant rejection class."""

from .attention import AttentionConfig, fold_patches, mhsa, transformer_block, unfold_patches
from .kernels import apply_activation, conv2d, layer_norm, linear, pool2d, softmax
from .lime import LimeConfig, SaliencyMap, explain, sample_perturbations, segment_grid
from .model_format import inspect_model, load_model, save_model
from .models import (
    ModelGraph,
    build_lightweight_cnn,
    build_mobilevit_xs,
    count_params,
    forward,
    register_architecture,
)
from .pipeline import (
    AugmentParams,
    ConfusionMatrix,
    Prediction,
    TieredClassifier,
    augment,
    bench_latency,
    classify_tiered,
    evaluate,
    predict,
    preprocess,
)
from .quantize import (
    QuantParams,
    QuantReport,
    calibrate_minmax,
    dequantize,
    quantize_f16,
    quantize_int8,
    quantize_model,
)
from .tensor import ConvSpec, ShapeError, Tensor

__version__ = "0.1.0"
