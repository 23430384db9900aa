"""Local surrogate explanations: grid superpixels, perturbation sampling,
weighted ridge regression, saliency output.

The image is tiled into a rows x cols grid; random binary masks switch tiles
between the original pixels and a mid-gray baseline. A weighted ridge
surrogate fit on the masked predictions yields one signed weight per tile,
indicating how much that region drove the target-class probability.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kernels import softmax
from .models import ModelGraph, forward
from .tensor import Tensor, as_array


@dataclass(frozen=True)
class SegmentGrid:
    """Near-equal rectangular tiles; remainder pixels go to the last row/col."""

    rows: int
    cols: int
    height: int
    width: int
    ids: np.ndarray = field(repr=False, compare=False)  # (H, W) int32 segment id per pixel

    @property
    def num_segments(self) -> int:
        return self.rows * self.cols

    def bounds(self, segment: int) -> tuple[int, int, int, int]:
        """(y0, x0, y1, x1) half-open pixel bounds of one segment."""
        r, c = divmod(segment, self.cols)
        y0 = r * (self.height // self.rows)
        x0 = c * (self.width // self.cols)
        y1 = self.height if r == self.rows - 1 else (r + 1) * (self.height // self.rows)
        x1 = self.width if c == self.cols - 1 else (c + 1) * (self.width // self.cols)
        return y0, x0, y1, x1


def segment_grid(height: int, width: int, rows: int, cols: int) -> SegmentGrid:
    if rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be >= 1, got {rows}x{cols}")
    if rows > height or cols > width:
        raise ValueError(f"grid {rows}x{cols} larger than image {height}x{width}")
    row_id = np.minimum(np.arange(height) // (height // rows), rows - 1)
    col_id = np.minimum(np.arange(width) // (width // cols), cols - 1)
    ids = (row_id[:, None] * cols + col_id[None, :]).astype(np.int32)
    return SegmentGrid(rows=rows, cols=cols, height=height, width=width, ids=ids)


def sample_perturbations(n: int, segments: int, seed: int) -> np.ndarray:
    """n x segments binary masks: row 0 all ones, the rest i.i.d. Bernoulli(0.5)."""
    if n < segments + 1:
        raise ValueError(f"need at least segments+1={segments + 1} samples for the regression, got {n}")
    rng = np.random.default_rng(seed)
    masks = (rng.random((n, segments)) < 0.5).astype(np.float64)
    masks[0, :] = 1.0
    return masks


@dataclass(frozen=True)
class LimeConfig:
    rows: int = 8
    cols: int = 8
    samples: int = 256
    ridge_lambda: float = 1e-3
    kernel_width: float = 0.25
    baseline: float = 0.5
    seed: int = 42
    batch_size: int = 32


@dataclass
class SaliencyMap:
    """Per-segment surrogate weights for one target class."""

    weights: np.ndarray
    target_class: int
    target_label: str
    intercept: float
    r2: float
    grid: SegmentGrid

    def as_dict(self) -> dict:
        segs = []
        for s in range(self.grid.num_segments):
            y0, x0, y1, x1 = self.grid.bounds(s)
            segs.append({
                "segment": s,
                "bounds": [y0, x0, y1, x1],
                "weight": float(self.weights[s]),
            })
        return {
            "target_class": self.target_class,
            "target_label": self.target_label,
            "intercept": self.intercept,
            "r2": self.r2,
            "grid": {"rows": self.grid.rows, "cols": self.grid.cols},
            "segments": segs,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def to_pgm(self) -> str:
        """Per-pixel heatmap of |normalized| weights as an ASCII PGM (P2)."""
        w = self.weights
        span = float(np.max(np.abs(w)))
        norm = w / span if span > 0 else np.zeros_like(w)
        pixels = ((norm[self.grid.ids] + 1.0) * 127.5).round().astype(np.int32)
        lines = [f"P2", f"{self.grid.width} {self.grid.height}", "255"]
        for row in pixels:
            lines.append(" ".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def _kernel_weights(masks: np.ndarray, width: float) -> np.ndarray:
    """exp(-(1 - cos_sim)^2 / width^2) similarity to the all-ones instance."""
    s = masks.shape[1]
    on = masks.sum(axis=1)
    cos = np.sqrt(on / s)  # cosine of a binary mask against all-ones
    return np.exp(-((1.0 - cos) ** 2) / width ** 2)


def _probability_fn(model):
    """Normalize a ModelGraph or a callable into batch -> target probabilities."""
    if isinstance(model, ModelGraph):
        def fn(batch: np.ndarray) -> np.ndarray:
            return softmax(forward(model, batch)).data
        return fn
    if callable(model):
        return model
    raise TypeError(f"expected ModelGraph or callable, got {type(model)!r}")


def explain(model, image, target_class, cfg: LimeConfig = LimeConfig()) -> SaliencyMap:
    """Fit the local linear surrogate for one image and one class.

    ``model`` is either a ModelGraph or a callable mapping an (N, H, W, C)
    batch to (N, num_classes) probabilities. Deterministic for a fixed seed
    and config regardless of batching.
    """
    if cfg.ridge_lambda <= 0:
        raise ValueError("ridge_lambda must be > 0 (the normal matrix may be singular otherwise)")
    img = as_array(image)
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise ValueError("explain works on a single image")
        img = img[0]
    h, w, _ = img.shape
    grid = segment_grid(h, w, cfg.rows, cfg.cols)
    labels = model.class_labels if isinstance(model, ModelGraph) else None
    if isinstance(target_class, str):
        if labels is None:
            raise ValueError("target class by name requires a ModelGraph")
        if target_class not in labels:
            raise ValueError(f"unknown class {target_class!r}; model classes: {labels}")
        target = labels.index(target_class)
    else:
        target = int(target_class)
    prob_fn = _probability_fn(model)

    masks = sample_perturbations(cfg.samples, grid.num_segments, cfg.seed)
    probs = np.empty(cfg.samples, dtype=np.float64)
    for start in range(0, cfg.samples, cfg.batch_size):
        chunk = masks[start:start + cfg.batch_size]
        batch = np.empty((len(chunk), h, w, img.shape[2]), dtype=np.float32)
        for i, m in enumerate(chunk):
            keep = m[grid.ids].astype(bool)
            masked = np.where(keep[..., None], img, np.float32(cfg.baseline))
            batch[i] = masked
        out = np.asarray(prob_fn(batch), dtype=np.float64)
        if out.ndim != 2 or target >= out.shape[1]:
            raise ValueError(f"model output shape {out.shape} incompatible with class {target}")
        probs[start:start + len(chunk)] = out[:, target]

    sample_w = _kernel_weights(masks, cfg.kernel_width)
    sw = np.sqrt(sample_w)
    # weighted ridge with unpenalized intercept, closed form
    xa = np.hstack([masks, np.ones((cfg.samples, 1))])
    xw = xa * sw[:, None]
    yw = probs * sw
    normal = xw.T @ xw
    reg = np.zeros(grid.num_segments + 1)
    reg[:-1] = cfg.ridge_lambda
    normal[np.diag_indices_from(normal)] += reg
    try:
        beta = np.linalg.solve(normal, xw.T @ yw)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"surrogate normal matrix is singular: {e}") from e

    fitted = xa @ beta
    ss_res = float(np.sum(sample_w * (probs - fitted) ** 2))
    mean_w = float(np.sum(sample_w * probs) / np.sum(sample_w))
    ss_tot = float(np.sum(sample_w * (probs - mean_w) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-12 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot

    label = labels[target] if labels else str(target)
    return SaliencyMap(
        weights=beta[:-1].astype(np.float64),
        target_class=target,
        target_label=label,
        intercept=float(beta[-1]),
        r2=float(r2),
        grid=grid,
    )
