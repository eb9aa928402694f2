"""Command line interface: train-rf, segment, explain, compare, replay."""

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, TlimeError
from .explainer import (
    CSV_COLUMNS,
    ExplainerConfig,
    compare_batch,
    explain_tree,
    explanation_mask,
    report_document,
    report_rows,
)
from .ingest import parse_idx, parse_pnm, read_idx, write_pnm
from .models.external import ExternalPredictor
from .models.forest import classification_report, format_report, load_model, rf_train
from .representation import Image
from .sampling import KernelConfig
from .segmentation import SegmentationConfig, segment

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROTOCOL, EXIT_INTERNAL = 0, 2, 3, 4, 5


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunManifest:
    """Everything needed to rerun a command: argv, resolved config, seeds, input hashes."""

    def __init__(self, argv, command):
        self.doc = {
            "tool": "tlime",
            "version": __version__,
            "command": command,
            "argv": list(argv),
            "config": {},
            "seed": None,
            "inputs": {},
            "started": _now(),
            "finished": None,
        }

    def add_input(self, path):
        self.doc["inputs"][str(path)] = file_hash(path)

    def finish(self):
        self.doc["finished"] = _now()
        return self.doc


def default_seed():
    env = os.environ.get("TLIME_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"TLIME_SEED must be an integer, got {env!r}") from None


def load_image(path, index=0):
    """Read a PGM/PPM file, or image `index` of an IDX images file."""
    data = Path(path).read_bytes()
    if data[:2] in (b"P5", b"P6"):
        return parse_pnm(data)
    ds = parse_idx(data)
    if ds.kind != "images":
        raise DataError(f"{path} holds labels, not images")
    if not 0 <= index < ds.dims[0]:
        raise DataError(f"{path} has {ds.dims[0]} images; index {index} is out of range")
    return Image(ds.payload[index][:, :, None] / 255.0)


def parse_range(text, upper):
    start, _, stop = text.partition(":")
    start = int(start) if start else 0
    stop = int(stop) if stop else upper
    if not 0 <= start < stop <= upper:
        raise ConfigError(f"range {text!r} is not within 0:{upper}")
    return start, stop


def load_instances(paths, idx_range=None):
    """(name, Image) pairs from PNM files, directories of them, or IDX files."""
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files = sorted(f for f in p.iterdir() if f.suffix.lower() in (".pgm", ".ppm"))
            out += [(str(f), parse_pnm(f.read_bytes())) for f in files]
            continue
        data = p.read_bytes()
        if data[:2] in (b"P5", b"P6"):
            out.append((str(p), parse_pnm(data)))
            continue
        ds = parse_idx(data)
        if ds.kind != "images":
            raise DataError(f"{p} holds labels, not images")
        start, stop = parse_range(idx_range or ":", ds.dims[0])
        out += [(f"{p}[{i}]", Image(ds.payload[i][:, :, None] / 255.0)) for i in range(start, stop)]
    if not out:
        raise DataError("no instances found")
    return out


def sigma_arg(text):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("must be 'auto' or a positive number") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def label_arg(text):
    if text == "auto":
        return "auto-top1"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("must be 'auto' or a class id") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return value


def positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def add_explain_flags(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="forest model JSON written by train-rf")
    src.add_argument("--external", help="command speaking the line-JSON predictor protocol")
    p.add_argument("--external-timeout", type=float, default=30.0, help="seconds per batch (default 30)")
    p.add_argument("--external-workers", type=positive_int, default=1)
    p.add_argument("--method", choices=["grid", "slic"], default="grid")
    p.add_argument("--segments", type=positive_int, default=16)
    p.add_argument("--compactness", type=float, default=10.0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--sigma", type=sigma_arg, default="auto")
    p.add_argument("--keep-prob", type=float, default=0.5)
    p.add_argument("--max-depth", type=int, default=5)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--label", type=label_arg, default="auto")
    p.add_argument("--ridge-lambda", type=float, default=0.01)
    p.add_argument("--mask-fill", choices=["mean", "gray"], default="mean")
    p.add_argument("--seed", type=int, default=None, help="defaults to $TLIME_SEED, else 0")
    p.add_argument("--out", required=True, help="output prefix")


def build_parser():
    parser = argparse.ArgumentParser(prog="tlime", description=__doc__)
    parser.add_argument("--version", action="version", version=f"tlime {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-rf", help="train the random forest black box on IDX data")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--trees", type=positive_int, default=50)
    p.add_argument("--max-depth", type=positive_int, default=12)
    p.add_argument("--feature-subsample", type=positive_int, default=None)
    p.add_argument("--split", type=float, default=0.7, help="training fraction (default 0.7)")
    p.add_argument("--limit", type=positive_int, default=None, help="use only N samples of the shuffled data")
    p.add_argument("--workers", type=positive_int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("segment", help="write a superpixel label map as P5")
    p.add_argument("--image", required=True)
    p.add_argument("--index", type=int, default=0, help="image index inside an IDX file")
    p.add_argument("--method", choices=["grid", "slic"], default="grid")
    p.add_argument("--segments", type=int, default=16)
    p.add_argument("--compactness", type=float, default=10.0)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain", help="explain one prediction with a tree surrogate")
    p.add_argument("--image", required=True)
    p.add_argument("--index", type=int, default=0, help="image index inside an IDX file")
    add_explain_flags(p)

    p = sub.add_parser("compare", help="tree vs linear surrogates on one or many instances")
    p.add_argument("--instances", nargs="+", required=True,
                   help="PGM/PPM files, directories of them, or IDX image files")
    p.add_argument("--idx-range", default=None, help="START:STOP slice for IDX inputs")
    p.add_argument("--workers", type=positive_int, default=os.cpu_count() or 1)
    add_explain_flags(p)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest or output JSON")
    p.add_argument("manifest")
    return parser


def _segmentation_config(args, seed):
    return SegmentationConfig(
        method=args.method, target_segments=args.segments,
        compactness=args.compactness, iterations=getattr(args, "iterations", 10), seed=seed,
    )


def _explainer_config(args, seed):
    return ExplainerConfig(
        n_samples=args.samples, max_depth=args.max_depth, delta=args.delta,
        kernel=KernelConfig(args.sigma), keep_prob=args.keep_prob, seed=seed,
        target_label=args.label, ridge_lambda=args.ridge_lambda, mask_fill=args.mask_fill,
    )


def _predictor(args, manifest):
    if args.model:
        manifest.add_input(args.model)
        return load_model(args.model)
    return ExternalPredictor(args.external, timeout=args.external_timeout, workers=args.external_workers)


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def cmd_train_rf(args, manifest, out):
    if not 0 < args.split < 1:
        raise ConfigError(f"--split must lie strictly between 0 and 1 (got {args.split}); "
                          "an empty train or test set cannot be evaluated")
    images = read_idx(args.images)
    labels = read_idx(args.labels)
    manifest.add_input(args.images)
    manifest.add_input(args.labels)
    if images.kind != "images" or labels.kind != "labels":
        raise DataError("--images must be an IDX image file and --labels an IDX label file")
    X, y = images.pixel_array(), labels.labels()
    if len(X) != len(y):
        raise DataError(f"{len(X)} images but {len(y)} labels")
    num_classes = int(y.max()) + 1
    # shuffle before limiting: IDX files may be sorted by class
    order = np.random.default_rng(args.seed).permutation(len(y))[:args.limit]
    cut = int(round(args.split * len(order)))
    if cut == 0 or cut == len(order):
        raise ConfigError("the split leaves the train or test set empty")
    train, test = order[:cut], order[cut:]
    model = rf_train(X[train], y[train], trees=args.trees, max_depth=args.max_depth,
                     feature_subsample=args.feature_subsample, seed=args.seed,
                     num_classes=num_classes, workers=args.workers)
    if model.num_classes != num_classes:
        raise DataError("class count mismatch between labels and model")
    report = classification_report(y[test], model.predict(X[test]), num_classes)
    model.save(args.out)
    manifest.doc["config"] = {"train_size": len(train), "test_size": len(test), **model.params}
    manifest.doc["metrics"] = report["weighted"]
    write_json(f"{args.out}.manifest.json", manifest.finish())
    print(format_report(report), file=out)
    print(f"model written to {args.out}", file=out)


def label_image(seg):
    """Segment ids stored directly as 8-bit gray levels, so the file reads back as a label map."""
    if seg.num_segments > 256:
        raise ConfigError(f"{seg.num_segments} segments do not fit an 8-bit label map")
    return Image(seg.labels[:, :, None] / 255.0)


def cmd_segment(args, manifest, out):
    if args.segments < 1:
        raise ConfigError("--segments must be at least 1")
    x = load_image(args.image, args.index)
    manifest.add_input(args.image)
    cfg = _segmentation_config(args, args.seed)
    seg = segment(x, cfg)
    Path(args.out).write_bytes(write_pnm(label_image(seg)))
    manifest.doc["config"] = asdict(cfg)
    manifest.doc["num_segments"] = seg.num_segments
    write_json(f"{args.out}.manifest.json", manifest.finish())
    print(seg.num_segments, file=out)


def cmd_explain(args, manifest, out):
    x = load_image(args.image, args.index)
    manifest.add_input(args.image)
    seg = segment(x, _segmentation_config(args, args.seed))
    cfg = _explainer_config(args, args.seed)
    f = _predictor(args, manifest)
    try:
        e = explain_tree(x, seg, f, cfg)
    finally:
        if isinstance(f, ExternalPredictor):
            f.close()
    manifest.doc["config"] = {"explainer": cfg.to_dict(), "segmentation": asdict(_segmentation_config(args, args.seed))}
    doc = e.to_dict()
    doc["num_segments"] = seg.num_segments
    doc["manifest"] = manifest.finish()
    prefix = args.out
    write_json(f"{prefix}.json", doc)
    ref = f"manifest: {Path(prefix).name}.json"
    Path(f"{prefix}.dot").write_text(e.model.to_dot(comment=ref))
    mask = explanation_mask(x, seg, e.model)
    ext = "pgm" if mask.channels == 1 else "ppm"
    Path(f"{prefix}-mask.{ext}").write_bytes(write_pnm(mask, comment=ref))
    print(f"label     {e.target_label}", file=out)
    print(f"fx        {e.fx:.4f}", file=out)
    print(f"gx        {e.gx:.4f}", file=out)
    print(f"error     {e.prediction_error:.4f}", file=out)
    print(f"depth     {e.depth_used}", file=out)
    print(f"fit_time  {e.fit_time:.4f}s", file=out)


def cmd_compare(args, manifest, out):
    instances = load_instances(args.instances, args.idx_range)
    for p in args.instances:
        if Path(p).is_file():
            manifest.add_input(p)
    cfg = _explainer_config(args, args.seed)
    seg_cfg = _segmentation_config(args, args.seed)
    f = _predictor(args, manifest)
    try:
        rows, summary = compare_batch(
            [im for _, im in instances], lambda im: segment(im, seg_cfg), f, cfg,
            names=[name for name, _ in instances], workers=args.workers,
        )
    finally:
        if isinstance(f, ExternalPredictor):
            f.close()
    manifest.doc["config"] = {"explainer": cfg.to_dict(), "segmentation": asdict(seg_cfg)}
    write_json(f"{args.out}.json", report_document(rows, summary, manifest.finish()))
    with open(f"{args.out}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        writer.writerows(report_rows(rows))
    print(f"{'instance':<28}{'fx':>8}{'TLIME gx':>10}{'error':>8}{'time':>9}{'LIME gx':>10}{'error':>8}{'time':>9}",
          file=out)
    for r in rows:
        print(f"{str(r.instance)[-28:]:<28}{r.fx:>8.4f}{r.tree.gx:>10.4f}{r.tree.error:>8.4f}"
              f"{r.tree.fit_time:>8.4f}s{r.linear.gx:>10.4f}{r.linear.error:>8.4f}{r.linear.fit_time:>8.4f}s",
              file=out)
    print(f"mean error TLIME {summary['mean_tree_error']:.4f}  LIME {summary['mean_linear_error']:.4f}  "
          f"win rate {summary['win_rate']:.2f}  mean time TLIME {summary['mean_tree_time']:.4f}s  "
          f"LIME {summary['mean_linear_time']:.4f}s", file=out)


def cmd_replay(args, out):
    doc = json.loads(Path(args.manifest).read_text())
    manifest = doc.get("manifest", doc)
    argv = manifest.get("argv")
    if not argv:
        raise DataError(f"{args.manifest} records no command line")
    return main(argv, out=out)


COMMANDS = {"train-rf": cmd_train_rf, "segment": cmd_segment, "explain": cmd_explain, "compare": cmd_compare}


def main(argv=None, out=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.command == "replay":
            return cmd_replay(args, out)
        if getattr(args, "seed", None) is None:
            args.seed = default_seed()
        manifest = RunManifest(argv, args.command)
        manifest.doc["seed"] = args.seed
        COMMANDS[args.command](args, manifest, out)
        return EXIT_OK
    except TlimeError as exc:
        print(f"tlime {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"tlime {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
