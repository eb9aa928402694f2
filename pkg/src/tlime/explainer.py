"""Tree (TLIME) and linear (LIME) explanations of one black-box prediction."""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError
from .models.predictor import checked_predict
from .representation import Image
from .sampling import KernelConfig, build_database, derive_seed
from .surrogate import LinearSurrogate, SurrogateTree, fit_linear, fit_tree, tree_sse

SCHEMA = "tlime.explanation/1"
REPORT_SCHEMA = "tlime.comparison/1"


@dataclass(frozen=True)
class ExplainerConfig:
    n_samples: int = 1000
    max_depth: int = 5
    delta: float = 0.05
    kernel: KernelConfig = field(default_factory=KernelConfig)
    keep_prob: float = 0.5
    seed: int = 0
    target_label: object = "auto-top1"  # class id or "auto-top1"
    ridge_lambda: float = 0.01
    mask_fill: str = "mean"
    batch_size: int = 256
    workers: int = 1

    def __post_init__(self):
        if self.max_depth < 1:
            raise ConfigError("max_depth must be at least 1")
        if self.delta < 0:
            raise ConfigError("delta must be nonnegative")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be at least 2")
        if not 0.0 <= self.keep_prob <= 1.0:
            raise ConfigError("keep_prob must lie in [0, 1]")
        if self.target_label != "auto-top1" and (
            not isinstance(self.target_label, (int, np.integer)) or self.target_label < 0
        ):
            raise ConfigError(f"target_label must be 'auto-top1' or a class id, got {self.target_label!r}")
        if self.ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = asdict(self.kernel)
        return d


@dataclass
class Explanation:
    kind: str  # "tree" or "linear"
    model: object  # SurrogateTree or LinearSurrogate
    target_label: int
    fx: float
    gx: float
    prediction_error: float
    fit_time: float
    depth_used: int = None
    segment_map_ref: str = None
    config_echo: ExplainerConfig = None
    sigma_used: float = None
    # per tried depth: {"depth", "gx", "error", "sse"}
    depth_trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "kind": self.kind,
            "target_label": self.target_label,
            "fx": self.fx,
            "gx": self.gx,
            "prediction_error": self.prediction_error,
            "fit_time": round(self.fit_time, 6),
            "depth_used": self.depth_used,
            "sigma_used": self.sigma_used,
            "segment_map_ref": self.segment_map_ref,
            "config_echo": self.config_echo.to_dict() if self.config_echo else None,
            "depth_trace": self.depth_trace,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != SCHEMA:
            raise DataError(f"not an explanation document (schema {doc.get('schema')!r})")
        model = (SurrogateTree if doc["kind"] == "tree" else LinearSurrogate).from_dict(doc["model"])
        cfg = doc.get("config_echo")
        if cfg is not None:
            cfg = ExplainerConfig(**{**cfg, "kernel": KernelConfig(**cfg["kernel"])})
        return cls(
            kind=doc["kind"], model=model, target_label=doc["target_label"], fx=doc["fx"], gx=doc["gx"],
            prediction_error=doc["prediction_error"], fit_time=doc["fit_time"],
            depth_used=doc["depth_used"], segment_map_ref=doc["segment_map_ref"], config_echo=cfg,
            sigma_used=doc.get("sigma_used"), depth_trace=doc.get("depth_trace", []),
        )


def prediction_error(fx, gx):
    return abs(fx - gx)


def top_labels(f, x, k):
    probs = checked_predict(f, [x])[0]
    if k < 1:
        raise ConfigError("k must be at least 1")
    if k > len(probs):
        raise ConfigError(f"asked for {k} labels but the predictor has {len(probs)} classes")
    order = sorted(range(len(probs)), key=lambda c: (-probs[c], c))[:k]
    return [(c, float(probs[c])) for c in order]


def resolve_label(f, x, cfg):
    if cfg.target_label == "auto-top1":
        return top_labels(f, x, 1)[0][0]
    return int(cfg.target_label)


def perturbations(x, seg, f, cfg, label=None):
    """The perturbation set both explainers fit on."""
    if label is None:
        label = resolve_label(f, x, cfg)
    return build_database(
        x, seg, f, label, cfg.n_samples, cfg.kernel, cfg.keep_prob, cfg.seed,
        batch_size=cfg.batch_size, workers=cfg.workers, fill=cfg.mask_fill,
    )


def black_box_value(f, x, label):
    return float(checked_predict(f, [x])[0][label])


def search_depth(pset, fx, max_depth, delta):
    """Fit trees of growing depth until |fx - g(x')| < delta or max_depth is reached.

    Returns (tree, depth, trace, fit_seconds); only the fits are timed.
    """
    ones = np.ones(pset.num_features, dtype=np.uint8)
    trace = []
    elapsed = 0.0
    for depth in range(1, max_depth + 1):
        start = time.perf_counter()
        tree = fit_tree(pset, depth)
        gx = tree.predict(ones)
        elapsed += time.perf_counter() - start
        err = prediction_error(fx, gx)
        trace.append({
            "depth": depth,
            "gx": gx,
            "error": err,
            "sse": tree_sse(tree, pset.zprimes, pset.fz, pset.weights),
        })
        if err < delta:
            break
    return tree, depth, trace, elapsed


def explain_tree_from(pset, fx, cfg, seg_ref=None):
    tree, depth, trace, elapsed = search_depth(pset, fx, cfg.max_depth, cfg.delta)
    gx = trace[-1]["gx"]
    return Explanation(
        kind="tree", model=tree, target_label=pset.target_label, fx=fx, gx=gx,
        prediction_error=prediction_error(fx, gx), fit_time=elapsed, depth_used=depth,
        segment_map_ref=seg_ref, config_echo=cfg, sigma_used=pset.sigma_used, depth_trace=trace,
    )


def explain_linear_from(pset, fx, cfg, seg_ref=None):
    start = time.perf_counter()
    model = fit_linear(pset, cfg.ridge_lambda)
    gx = float(model.predict(np.ones(pset.num_features)))
    elapsed = time.perf_counter() - start
    return Explanation(
        kind="linear", model=model, target_label=pset.target_label, fx=fx, gx=gx,
        prediction_error=prediction_error(fx, gx), fit_time=elapsed,
        segment_map_ref=seg_ref, config_echo=cfg, sigma_used=pset.sigma_used,
    )


def explain_tree(x, seg, f, cfg=ExplainerConfig()):
    pset = perturbations(x, seg, f, cfg)
    fx = black_box_value(f, x, pset.target_label)
    return explain_tree_from(pset, fx, cfg, seg.content_hash())


def explain_linear(x, seg, f, cfg=ExplainerConfig()):
    pset = perturbations(x, seg, f, cfg)
    fx = black_box_value(f, x, pset.target_label)
    return explain_linear_from(pset, fx, cfg, seg.content_hash())


@dataclass
class MethodResult:
    gx: float
    error: float
    fit_time: float
    depth: int = None


@dataclass
class ComparisonReport:
    """One row of a TLIME/LIME comparison: fx plus gx, error and time per method."""

    target_label: int
    fx: float
    tree: MethodResult
    linear: MethodResult
    instance: str = None
    tree_explanation: Explanation = None
    linear_explanation: Explanation = None

    @classmethod
    def from_values(cls, fx, tree_gx, linear_gx, target_label=0, tree_time=0.0, linear_time=0.0,
                    instance=None):
        """Build a row from known probabilities, e.g. published ones."""
        return cls(
            target_label=target_label, fx=fx,
            tree=MethodResult(tree_gx, prediction_error(fx, tree_gx), tree_time),
            linear=MethodResult(linear_gx, prediction_error(fx, linear_gx), linear_time),
            instance=instance,
        )

    @property
    def tree_wins(self):
        return self.tree.error < self.linear.error

    def to_dict(self):
        return {
            "instance": self.instance,
            "target_label": self.target_label,
            "fx": self.fx,
            "tree": asdict(self.tree),
            "linear": asdict(self.linear),
        }


def compare(x, seg, f, cfg=ExplainerConfig(), instance=None):
    """Fit both surrogates on one shared perturbation set."""
    pset = perturbations(x, seg, f, cfg)
    fx = black_box_value(f, x, pset.target_label)
    ref = seg.content_hash()
    t = explain_tree_from(pset, fx, cfg, ref)
    lin = explain_linear_from(pset, fx, cfg, ref)
    return ComparisonReport(
        target_label=pset.target_label, fx=fx,
        tree=MethodResult(t.gx, t.prediction_error, t.fit_time, t.depth_used),
        linear=MethodResult(lin.gx, lin.prediction_error, lin.fit_time),
        instance=instance, tree_explanation=t, linear_explanation=lin,
    )


def aggregate(rows):
    n = len(rows)
    if n == 0:
        raise DataError("no comparison rows to aggregate")
    return {
        "instances": n,
        "mean_tree_error": sum(r.tree.error for r in rows) / n,
        "mean_linear_error": sum(r.linear.error for r in rows) / n,
        "win_rate": sum(r.tree_wins for r in rows) / n,
        "tree_not_worse_rate": sum(r.tree.error <= r.linear.error for r in rows) / n,
        "mean_tree_time": sum(r.tree.fit_time for r in rows) / n,
        "mean_linear_time": sum(r.linear.fit_time for r in rows) / n,
    }


def compare_batch(images, segmenter, f, cfg=ExplainerConfig(), names=None, workers=1):
    """Compare on many instances; instance i uses a seed derived from (cfg.seed, i)."""
    images = [im if isinstance(im, Image) else Image(im) for im in images]
    names = names or [str(i) for i in range(len(images))]

    def run(i):
        sub = replace(cfg, seed=derive_seed(cfg.seed, i))
        return compare(images[i], segmenter(images[i]), f, sub, instance=names[i])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, range(len(images))))
    else:
        rows = [run(i) for i in range(len(images))]
    return rows, aggregate(rows)


CSV_COLUMNS = ["instance", "target_label", "fx", "tree_gx", "tree_error", "tree_time", "tree_depth",
               "linear_gx", "linear_error", "linear_time"]


def report_rows(rows):
    for r in rows:
        yield [r.instance, r.target_label, r.fx, r.tree.gx, r.tree.error, r.tree.fit_time, r.tree.depth,
               r.linear.gx, r.linear.error, r.linear.fit_time]


def report_document(rows, summary, manifest=None):
    return {
        "schema": REPORT_SCHEMA,
        "rows": [r.to_dict() for r in rows],
        "aggregate": summary,
        "manifest": manifest,
    }


def explanation_mask(x, seg, tree, fill=0.5):
    """Keep the segments a tree splits on; paint the rest flat gray."""
    keep = np.zeros(seg.num_segments, dtype=bool)
    keep[tree.split_features()] = True
    pixels = np.where(keep[seg.labels][..., None], x.pixels, fill)
    return Image(pixels)


def dumps(doc):
    return json.dumps(doc, indent=1, sort_keys=False)
