"""Operator-facing command surface.

Subcommands: init-model, classify, quantize, explain, eval, bench, inspect.
Exit codes: 0 success, 2 input rejected as non-plant, 1 any error. All
randomized behavior hangs off --seed (default 42) so runs are reproducible.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .lime import LimeConfig, explain
from .model_format import (
    ModelFormatError,
    format_inspect,
    inspect_model,
    load_model,
    save_model,
)
from .models import ARCHITECTURES, build, count_params
from .pipeline import (
    TieredClassifier,
    bench_latency,
    decode_image,
    evaluate,
    load_labeled_images,
    preprocess,
)
from .quantize import QuantizationError, quantize_model
from .tensor import ShapeError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REJECTED = 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for rejected inputs
    def error(self, message):
        raise CliError(message)


def _emit(args, payload: dict, text: str):
    if args.format == "json":
        print(json.dumps(payload, indent=2))
    else:
        print(text)


def _load_image(path) -> np.ndarray:
    try:
        return decode_image(path)
    except Exception as e:
        raise CliError(f"cannot decode image {path}: {e}") from e


def cmd_init_model(args) -> int:
    labels = args.labels.split(",") if args.labels else None
    model = build(args.arch, args.classes, seed=args.seed, labels=labels)
    nbytes = save_model(model, args.out)
    payload = {
        "arch": args.arch,
        "classes": model.class_labels,
        "params": count_params(model),
        "file_bytes": nbytes,
        "path": str(args.out),
        "seed": args.seed,
    }
    _emit(args, payload,
          f"{args.arch}: {payload['params']:,} params, {nbytes:,} bytes -> {args.out}")
    return EXIT_OK


def cmd_classify(args) -> int:
    fast = load_model(args.model)
    precise = load_model(args.precise_model) if args.precise_model else None
    clf = TieredClassifier(fast, precise, tau=args.tau)
    image = preprocess(_load_image(args.image))
    pred = clf.classify(image)
    payload = {
        "label": pred.label,
        "probabilities": {l: float(p) for l, p in zip(fast.class_labels, pred.probabilities)},
        "confidence": pred.confidence,
        "tier": pred.tier,
        "latency_ms": round(pred.latency_ms, 3),
        "rejected": pred.rejected,
    }
    probs = "  ".join(f"{l}={p:.4f}" for l, p in payload["probabilities"].items())
    _emit(args, payload,
          f"{pred.label} (confidence {pred.confidence:.4f}, tier {pred.tier}, "
          f"{pred.latency_ms:.1f} ms)\n{probs}")
    return EXIT_REJECTED if pred.rejected else EXIT_OK


def cmd_quantize(args) -> int:
    model = load_model(args.model)
    qmodel, report = quantize_model(model, args.mode)
    out_bytes = save_model(qmodel, args.out)
    in_bytes = Path(args.model).stat().st_size
    tensors = {}
    for name, stats in report.per_tensor.items():
        entry = {"max_abs_err": stats.max_abs_err, "mean_abs_err": stats.mean_abs_err,
                 "saturated": stats.saturated}
        if name in qmodel.qparams:
            entry["scale"] = qmodel.qparams[name].scale
            entry["zero_point"] = qmodel.qparams[name].zero_point
            entry["bound_ok"] = stats.max_abs_err <= qmodel.qparams[name].scale / 2 * (1 + 1e-5)
        tensors[name] = entry
    payload = {
        "mode": args.mode,
        "in_bytes": in_bytes,
        "out_bytes": out_bytes,
        "weight_compression_ratio": round(report.compression_ratio, 4),
        "max_abs_err": max(s.max_abs_err for s in report.per_tensor.values()),
        "path": str(args.out),
        "tensors": tensors,
    }
    _emit(args, payload,
          f"{args.mode}: {in_bytes:,} -> {out_bytes:,} bytes "
          f"(weights {report.compression_ratio:.2f}x), max |err| {payload['max_abs_err']:.3g} "
          f"-> {args.out}")
    return EXIT_OK


def cmd_explain(args) -> int:
    model = load_model(args.model)
    image = preprocess(_load_image(args.image))
    cfg = LimeConfig(rows=args.grid_rows, cols=args.grid_cols, samples=args.samples,
                     ridge_lambda=args.ridge_lambda, kernel_width=args.kernel_width,
                     seed=args.seed)
    sal = explain(model, image, args.target_class, cfg)
    doc = sal.as_dict()
    if args.out:
        Path(args.out).write_text(sal.to_json())
        doc["saliency_path"] = str(args.out)
    if args.heatmap:
        Path(args.heatmap).write_text(sal.to_pgm())
        doc["heatmap_path"] = str(args.heatmap)
    ranked = sorted(doc["segments"], key=lambda s: s["weight"], reverse=True)[:5]
    top = "\n".join(f"  segment {s['segment']:>3} bounds {s['bounds']} weight {s['weight']:+.5f}"
                    for s in ranked)
    _emit(args, doc,
          f"class {sal.target_label}: surrogate R2 {sal.r2:.4f}, "
          f"intercept {sal.intercept:.4f}\ntop segments:\n{top}")
    return EXIT_OK


def cmd_eval(args) -> int:
    fast = load_model(args.model)
    precise = load_model(args.precise_model) if args.precise_model else None
    clf = TieredClassifier(fast, precise, tau=args.tau)
    dataset = load_labeled_images(args.manifest)
    matrix = evaluate(clf, dataset)
    n = matrix.total
    payload = matrix.as_dict()
    payload["escalation_rate"] = clf.stats["escalations"] / n
    payload["rejection_rate"] = clf.stats["rejections"] / n
    payload["tau"] = args.tau
    _emit(args, payload,
          f"{matrix}\nescalated {clf.stats['escalations']}/{n}  "
          f"rejected {clf.stats['rejections']}/{n}")
    return EXIT_OK


def cmd_bench(args) -> int:
    model = load_model(args.model)
    rep = bench_latency(model, warmup=args.warmup, iters=args.iters)
    payload = {"arch": model.arch_id, **rep.as_dict()}
    _emit(args, payload,
          f"{model.arch_id}: mean {rep.mean_ms:.1f} ms  p50 {rep.p50_ms:.1f} ms  "
          f"p95 {rep.p95_ms:.1f} ms  ({rep.iters} iters, model {rep.model_bytes:,} B)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    info = inspect_model(args.model)
    _emit(args, info, format_inspect(info))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cactiscan",
                     description="Offline cactus pad disease screening toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=42, help="RNG seed (default 42)")
        p.add_argument("--format", choices=("text", "json"), default="text")

    p = sub.add_parser("init-model", help="build a seeded-random model file")
    p.add_argument("--arch", required=True, choices=sorted(ARCHITECTURES))
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--labels", help="comma-separated class labels")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=cmd_init_model)

    p = sub.add_parser("classify", help="classify one image, optionally tiered")
    p.add_argument("--model", required=True, help="fast-tier model file")
    p.add_argument("--precise-model", help="escalation-tier model file")
    p.add_argument("--image", required=True)
    p.add_argument("--tau", type=float, default=0.8, help="escalation threshold (default 0.8)")
    common(p)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("quantize", help="compress an fp32 model to f16 or i8")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", required=True, choices=("f16", "i8"))
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("explain", help="LIME-style saliency for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--target-class", required=True)
    p.add_argument("--grid-rows", type=int, default=8)
    p.add_argument("--grid-cols", type=int, default=8)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--ridge-lambda", type=float, default=1e-3)
    p.add_argument("--kernel-width", type=float, default=0.25)
    p.add_argument("--out", help="write saliency JSON here")
    p.add_argument("--heatmap", help="write a PGM heatmap here")
    common(p)
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("eval", help="evaluate against a labeled manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--precise-model")
    p.add_argument("--tau", type=float, default=0.8)
    p.add_argument("--manifest", required=True)
    common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="single-image latency benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    common(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("inspect", help="dump a model file's directory")
    p.add_argument("--model", required=True)
    common(p)
    p.set_defaults(fn=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (ModelFormatError, QuantizationError, ShapeError, ValueError, KeyError,
            FileNotFoundError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
