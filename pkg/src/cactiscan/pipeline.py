"""End-to-end pipeline: preprocessing, augmentation, tiered dispatch with a
rejection class, evaluation metrics, and latency benchmarking.

Augmentation is training-only; :func:`evaluate` asserts the augment call
counter never moves while it runs, so validation inputs provably stay clean.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import softmax
from .model_format import serialized_size
from .models import ModelGraph, forward
from .tensor import Tensor, as_array

IMAGE_SIZE = 256
REJECTION_LABEL = "NoCactus"

ROTATION_RANGE_DEG = 20.0
ZOOM_RANGE = 0.15

_augment_lock = threading.Lock()
_augment_calls = 0


def augment_call_count() -> int:
    return _augment_calls


def decode_image(path) -> np.ndarray:
    """Decode a PNG/JPEG file to an 8-bit RGB array."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of an (H, W, C) array."""
    h, w = img.shape[:2]
    src = img.astype(np.float32, copy=False)
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(np.float32)[:, None, None]
    fx = (xs - x0).astype(np.float32)[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def preprocess(raw: np.ndarray) -> Tensor:
    """Resize raw 8-bit H x W x 3 pixels to 256x256 and scale into [0, 1]."""
    arr = np.asarray(raw)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 RGB input, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("empty image")
    resized = bilinear_resize(arr.astype(np.float32), IMAGE_SIZE, IMAGE_SIZE)
    return Tensor((resized / 255.0).astype(np.float32)[None, ...])


@dataclass(frozen=True)
class AugmentParams:
    """One sampled geometric transform, applied rotation -> zoom -> flip."""

    rotation_deg: float
    zoom: float
    flip: bool


def draw_augment_params(seed: int) -> AugmentParams:
    """Sample rotation in +/-20 deg, zoom in +/-15%, flip with p=0.5."""
    rng = np.random.default_rng(seed)
    return AugmentParams(
        rotation_deg=float(rng.uniform(-ROTATION_RANGE_DEG, ROTATION_RANGE_DEG)),
        zoom=float(rng.uniform(-ZOOM_RANGE, ZOOM_RANGE)),
        flip=bool(rng.random() < 0.5),
    )


def augment(image, params: AugmentParams) -> Tensor:
    """Composed rotation/zoom/flip about the image center, bilinear resampling,
    zero fill outside the source bounds. Training-time only.
    """
    global _augment_calls
    with _augment_lock:
        _augment_calls += 1

    arr = as_array(image)
    squeeze = False
    if arr.ndim == 3:
        arr = arr[None, ...]
        squeeze = True
    n, h, w, c = arr.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    # inverse map: dst -> flip -> un-zoom -> un-rotate -> src
    dy, dx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    if params.flip:
        dx = -dx
    scale = 1.0 + params.zoom
    dx = dx / scale
    dy = dy / scale
    theta = np.deg2rad(-params.rotation_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    sx = cos_t * dx - sin_t * dy + cx
    sy = sin_t * dx + cos_t * dy + cy

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0).astype(np.float32)
    fy = (sy - y0).astype(np.float32)

    out = np.zeros_like(arr, dtype=np.float32)
    for (oy, ox, wgt) in (
        (y0, x0, (1 - fy) * (1 - fx)),
        (y0, x0 + 1, (1 - fy) * fx),
        (y0 + 1, x0, fy * (1 - fx)),
        (y0 + 1, x0 + 1, fy * fx),
    ):
        valid = (oy >= 0) & (oy < h) & (ox >= 0) & (ox < w)
        yc = np.clip(oy, 0, h - 1)
        xc = np.clip(ox, 0, w - 1)
        contrib = arr[:, yc, xc, :] * (wgt * valid)[None, :, :, None]
        out += contrib
    result = Tensor(out.astype(np.float32))
    return result if not squeeze else Tensor(out[0])


@dataclass
class Prediction:
    """Classifier output for one image."""

    probabilities: np.ndarray
    label: str
    confidence: float
    tier: str
    latency_ms: float
    rejected: bool = False


def predict(model: ModelGraph, image, tier: str = "fast") -> Prediction:
    start = time.perf_counter()
    arr = as_array(image)
    if arr.ndim == 3:
        arr = arr[None, ...]
    probs = softmax(forward(model, arr)).data[0]
    latency = (time.perf_counter() - start) * 1000.0
    idx = int(probs.argmax())
    return Prediction(
        probabilities=probs,
        label=model.class_labels[idx],
        confidence=float(probs[idx]),
        tier=tier,
        latency_ms=latency,
    )


class TieredClassifier:
    """Fast model first; inputs below the confidence threshold escalate to the
    precise model. A rejection-class verdict is terminal either way."""

    def __init__(self, fast: ModelGraph, precise: ModelGraph | None = None,
                 tau: float = 0.8, rejection_label: str = REJECTION_LABEL):
        if not 0.0 < tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {tau}")
        if precise is not None and precise.class_labels != fast.class_labels:
            raise ValueError(
                f"tier label mismatch: fast {fast.class_labels} vs precise {precise.class_labels}"
            )
        self.fast = fast
        self.precise = precise
        self.tau = tau
        self.rejection_label = rejection_label
        self._lock = threading.Lock()
        self.stats = {"fast_calls": 0, "precise_calls": 0, "escalations": 0, "rejections": 0}

    def classify(self, image) -> Prediction:
        start = time.perf_counter()
        result = predict(self.fast, image, tier="fast")
        with self._lock:
            self.stats["fast_calls"] += 1
        if self.precise is not None and result.confidence < self.tau:
            result = predict(self.precise, image, tier="escalated")
            with self._lock:
                self.stats["precise_calls"] += 1
                self.stats["escalations"] += 1
        result.latency_ms = (time.perf_counter() - start) * 1000.0
        if result.label == self.rejection_label and self.rejection_label in self.fast.class_labels:
            result.rejected = True
            with self._lock:
                self.stats["rejections"] += 1
        return result


def classify_tiered(fast: ModelGraph, precise: ModelGraph | None, image, tau: float = 0.8) -> Prediction:
    return TieredClassifier(fast, precise, tau=tau).classify(image)


@dataclass
class ConfusionMatrix:
    """C x C counts, row = true class, col = predicted class."""

    labels: list[str]
    counts: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            c = len(self.labels)
            self.counts = np.zeros((c, c), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)

    def add(self, true_label: str, predicted_label: str):
        self.counts[self.labels.index(true_label), self.labels.index(predicted_label)] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def precision(self, i: int) -> float:
        col = float(self.counts[:, i].sum())
        return float(self.counts[i, i]) / col if col else 0.0

    def recall(self, i: int) -> float:
        row = float(self.counts[i, :].sum())
        return float(self.counts[i, i]) / row if row else 0.0

    def f1(self, i: int) -> float:
        p, r = self.precision(i), self.recall(i)
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def macro_f1(self) -> float:
        return float(np.mean([self.f1(i) for i in range(len(self.labels))]))

    def as_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "counts": self.counts.tolist(),
            "total": self.total,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": {
                label: {"precision": self.precision(i), "recall": self.recall(i), "f1": self.f1(i)}
                for i, label in enumerate(self.labels)
            },
        }

    def __str__(self) -> str:
        width = max(len(l) for l in self.labels) + 2
        head = " " * width + "".join(f"{l:>{width}}" for l in self.labels)
        rows = [head]
        for i, l in enumerate(self.labels):
            rows.append(f"{l:>{width}}" + "".join(f"{v:>{width}}" for v in self.counts[i]))
        rows.append(f"accuracy {self.accuracy:.4f}  macro-F1 {self.macro_f1:.4f}  n={self.total}")
        return "\n".join(rows)


def evaluate(predictor, dataset) -> ConfusionMatrix:
    """Run a predictor over (image, label) pairs and tally the matrix.

    Enforces the sanitized protocol: any augment() call while evaluating is a
    hard error, and inputs are fed exactly as given.
    """
    if isinstance(predictor, ModelGraph):
        labels = predictor.class_labels
        classify = lambda img: predict(predictor, img)
    elif isinstance(predictor, TieredClassifier):
        labels = predictor.fast.class_labels
        classify = predictor.classify
    else:
        raise TypeError(f"predictor must be ModelGraph or TieredClassifier, got {type(predictor)!r}")

    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty evaluation set")
    matrix = ConfusionMatrix(labels=list(labels))
    calls_before = augment_call_count()
    for image, true_label in dataset:
        if true_label not in labels:
            raise ValueError(f"unknown label {true_label!r}; model classes: {labels}")
        pred = classify(image)
        matrix.add(true_label, pred.label)
    if augment_call_count() != calls_before:
        raise RuntimeError("augmentation ran during evaluation; sanitized protocol violated")
    return matrix


@dataclass
class LatencyReport:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    model_bytes: int
    iters: int

    def as_dict(self) -> dict:
        return {"mean_ms": self.mean_ms, "p50_ms": self.p50_ms, "p95_ms": self.p95_ms,
                "model_bytes": self.model_bytes, "iters": self.iters}


def bench_latency(model: ModelGraph, warmup: int = 2, iters: int = 10) -> LatencyReport:
    """Wall-clock single-image forward latency after warmup; informational."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = np.zeros(model.input_shape, dtype=np.float32)
    for _ in range(warmup):
        forward(model, x)
    samples = []
    for _ in range(iters):
        t0 = time.perf_counter()
        forward(model, x)
        samples.append((time.perf_counter() - t0) * 1000.0)
    arr = np.asarray(samples)
    return LatencyReport(
        mean_ms=float(arr.mean()),
        p50_ms=float(np.percentile(arr, 50)),
        p95_ms=float(np.percentile(arr, 95)),
        model_bytes=serialized_size(model),
        iters=iters,
    )


def load_manifest(path) -> list[tuple[Path, str]]:
    """Parse "relative-image-path<TAB>label" records; paths resolve against
    the manifest's directory."""
    mpath = Path(path)
    base = mpath.parent
    records = []
    for lineno, line in enumerate(mpath.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"{mpath}:{lineno}: expected 'path<TAB>label', got {line!r}")
        rel, label = line.split("\t", 1)
        records.append((base / rel.strip(), label.strip()))
    if not records:
        raise ValueError(f"{mpath}: manifest is empty")
    return records


def load_labeled_images(manifest_path) -> list[tuple[Tensor, str]]:
    records = load_manifest(manifest_path)
    missing = [str(p) for p, _ in records if not p.exists()]
    if missing:
        raise FileNotFoundError("missing image files:\n" + "\n".join(missing))
    return [(preprocess(decode_image(p)), label) for p, label in records]
