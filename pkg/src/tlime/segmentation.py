"""Superpixel segmentation: a deterministic grid tiling and SLIC."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .representation import SegmentMap

METHODS = ("grid", "slic")


@dataclass(frozen=True)
class SegmentationConfig:
    method: str = "grid"
    target_segments: int = 16
    compactness: float = 10.0
    iterations: int = 10
    seed: int = 0

    def validate(self, pixel_count=None):
        if self.method not in METHODS:
            raise ConfigError(f"unknown segmentation method {self.method!r}; choose from {METHODS}")
        if self.target_segments < 1:
            raise ConfigError("target_segments must be at least 1")
        if pixel_count is not None and self.target_segments > pixel_count:
            raise ConfigError(
                f"target_segments={self.target_segments} exceeds the pixel count {pixel_count}"
            )
        if self.compactness < 0:
            raise ConfigError("compactness must be nonnegative")
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        return self


def segment(x, cfg):
    cfg.validate(x.width * x.height)
    if cfg.method == "grid":
        return segment_grid(x, cfg.target_segments)
    return segment_slic(x, cfg)


def _block_edges(length, parts):
    """Boundaries of `parts` equal blocks; the remainder goes to the last block."""
    base = length // parts
    edges = [i * base for i in range(parts)]
    return edges + [length]


def grid_shape(height, width, target):
    """Choose (rows, cols) with rows * cols == target and near-square blocks.

    rows starts from round(sqrt(target * H / W)) and moves to the closest
    divisor of target that fits the image; ties go to the smaller divisor.
    """
    if target < 1:
        raise ConfigError("target_segments must be at least 1")
    if target > height * width:
        raise ConfigError(f"target_segments={target} exceeds the pixel count {height * width}")
    ideal = round(math.sqrt(target * height / width))
    fits = [
        r for r in range(1, target + 1)
        if target % r == 0 and r <= height and target // r <= width
    ]
    if not fits:
        raise ConfigError(f"{target} segments cannot tile a {width}x{height} image as a grid")
    rows = min(fits, key=lambda r: (abs(r - ideal), r))
    return rows, target // rows


def segment_grid(x, target_segments):
    rows, cols = grid_shape(x.height, x.width, target_segments)
    row_of = np.searchsorted(_block_edges(x.height, rows)[1:-1], np.arange(x.height), side="right")
    col_of = np.searchsorted(_block_edges(x.width, cols)[1:-1], np.arange(x.width), side="right")
    labels = row_of[:, None] * cols + col_of[None, :]
    return SegmentMap(labels, rows * cols)


def slic_centers(height, width, target):
    """Initial SLIC centers (y, x) at the middle of a rows x cols grid with rows * cols <= target."""
    rows = min(max(1, round(math.sqrt(target * height / width))), target, height)
    cols = min(max(1, target // rows), width)
    ys = (np.arange(rows) + 0.5) * height / rows - 0.5
    xs = (np.arange(cols) + 0.5) * width / cols - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1), (height / rows, width / cols)


def segment_slic(x, cfg):
    """SLIC: local k-means over (color, position), then connectivity repair.

    Colors are RGB (or gray) intensities scaled to [0, 100] so that the
    usual compactness values (around 10) keep their meaning. The procedure
    is deterministic; ``cfg.seed`` does not influence it.
    """
    cfg.validate(x.width * x.height)
    h, w, c = x.shape
    color = x.pixels * 100.0
    centers_yx, (step_y, step_x) = slic_centers(h, w, cfg.target_segments)
    k = len(centers_yx)
    step = math.sqrt(h * w / k)
    centers_col = color[
        np.clip(np.rint(centers_yx[:, 0]).astype(int), 0, h - 1),
        np.clip(np.rint(centers_yx[:, 1]).astype(int), 0, w - 1),
    ].astype(np.float64)
    spatial_scale = (cfg.compactness / step) ** 2
    window = int(math.ceil(max(step_y, step_x)))
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)

    labels = np.full((h, w), -1, dtype=np.int64)
    for _ in range(max(1, cfg.iterations)):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for j in range(k):
            cy, cx = centers_yx[j]
            y0, y1 = max(0, int(cy - window)), min(h, int(cy + window) + 2)
            x0, x1 = max(0, int(cx - window)), min(w, int(cx + window) + 2)
            dc = np.sum((color[y0:y1, x0:x1] - centers_col[j]) ** 2, axis=2)
            ds = (gy[y0:y1, x0:x1] - cy) ** 2 + (gx[y0:y1, x0:x1] - cx) ** 2
            dist = dc + ds * spatial_scale
            closer = dist < best[y0:y1, x0:x1]
            best[y0:y1, x0:x1][closer] = dist[closer]
            labels[y0:y1, x0:x1][closer] = j
        orphan = labels < 0
        if orphan.any():
            d2 = (gy[orphan][:, None] - centers_yx[:, 0]) ** 2 + (gx[orphan][:, None] - centers_yx[:, 1]) ** 2
            labels[orphan] = np.argmin(d2, axis=1)
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k)
        used = counts > 0
        for arr, src in ((centers_yx[:, 0], gy), (centers_yx[:, 1], gx)):
            sums = np.bincount(flat, weights=src.ravel(), minlength=k)
            arr[used] = sums[used] / counts[used]
        for ch in range(c):
            sums = np.bincount(flat, weights=color[:, :, ch].ravel(), minlength=k)
            centers_col[used, ch] = sums[used] / counts[used]

    return enforce_connectivity(labels)


def enforce_connectivity(labels, min_fraction=0.25):
    """Make every segment 4-connected and drop empty ids.

    The largest component of each label keeps it. Every other component,
    and any component smaller than ``min_fraction`` of the average segment
    size, is absorbed into its largest 4-adjacent neighbour. Surviving ids
    are renumbered in raster order of first appearance.
    """
    labels = np.asarray(labels, dtype=np.int64)
    h, w = labels.shape
    comp = np.empty_like(labels)
    principal = []
    sizes = []
    offset = 0
    for lab in np.unique(labels):
        cc, n = ndimage.label(labels == lab)
        mask = cc > 0
        comp[mask] = cc[mask] - 1 + offset
        cs = np.bincount(cc[mask] - 1, minlength=n)
        sizes.extend(cs.tolist())
        principal.append(offset + int(np.argmax(cs)))
        offset += n
    ncomp = offset
    sizes = np.array(sizes)
    avg = h * w / len(principal)
    kept = np.zeros(ncomp, dtype=bool)
    kept[principal] = True
    kept &= sizes >= min_fraction * avg
    if not kept.any():
        kept[int(np.argmax(sizes))] = True

    # adjacency between components via horizontal and vertical pixel pairs
    pairs = np.concatenate([
        np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], axis=1),
        np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], axis=1),
    ])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    neighbours = [[] for _ in range(ncomp)]
    for a, b in pairs:
        neighbours[a].append(b)
        neighbours[b].append(a)

    parent = list(range(ncomp))
    group_size = sizes.astype(np.int64).copy()

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    small = [i for i in range(ncomp) if not kept[i]]
    small.sort(key=lambda i: (-sizes[i], i))
    for i in small:
        root = find(i)
        options = {find(nb) for nb in neighbours[i]} - {root}
        if not options:
            continue
        target = max(options, key=lambda g: (group_size[g], -g))
        parent[root] = target
        group_size[target] += group_size[root]

    roots = np.array([find(i) for i in range(ncomp)])
    merged = roots[comp]
    _, first = np.unique(merged.ravel(), return_index=True)
    order = np.unique(merged.ravel())[np.argsort(first)]
    remap = np.empty(ncomp, dtype=np.int64)
    remap[order] = np.arange(len(order))
    return SegmentMap(remap[merged], len(order))
