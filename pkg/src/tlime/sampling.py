"""Perturbation database around one instance: z', f(z) and locality weights."""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, SamplingError, TlimeError
from .models.predictor import checked_predict
from .representation import check_compatible, l2_distance, recover_batch

SCHEMA = "tlime.perturbation-set/1"


@dataclass(frozen=True)
class KernelConfig:
    sigma: object = "auto"  # positive float or "auto"
    distance_space: str = "original_image"

    def __post_init__(self):
        if self.sigma != "auto":
            try:
                sigma = float(self.sigma)
            except (TypeError, ValueError):
                raise ConfigError(f"sigma must be 'auto' or a positive number, got {self.sigma!r}") from None
            if not sigma > 0 or not math.isfinite(sigma):
                raise ConfigError(f"sigma must be positive, got {self.sigma!r}")
            object.__setattr__(self, "sigma", sigma)
        if self.distance_space != "original_image":
            raise ConfigError("only the original_image distance space is supported")


def sample_rng(seed, index):
    """Independent generator for sample `index` under `seed`."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def derive_seed(seed, index):
    """64-bit child seed, e.g. for the i-th instance of a batch."""
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1, np.uint64)[0])


def draw_zprime(d_prime, rng, keep_prob=0.5):
    if d_prime < 1:
        raise ConfigError("d_prime must be at least 1")
    if not 0.0 <= keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must lie in [0, 1], got {keep_prob}")
    return (rng.random(d_prime) < keep_prob).astype(np.uint8)


def kernel_weight(x, z, sigma):
    return kernel_from_distance(l2_distance(x, z), sigma)


def kernel_from_distance(distance, sigma):
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    return np.exp(-np.square(distance) / sigma**2)


def auto_sigma(distances):
    d = np.asarray(distances, dtype=np.float64)
    positive = d[d > 0]
    if positive.size == 0:
        raise SamplingError(
            "every perturbed sample is identical to the instance; lower keep_prob or pass an explicit sigma"
        )
    return float(np.median(positive))


class PerturbationRecord(NamedTuple):
    zprime: np.ndarray
    fz: float
    weight: float


@dataclass(frozen=True, eq=False)
class PerturbationSet:
    """Columnar store of the perturbation database.

    ``zprimes`` is (n, d') uint8, ``fz``, ``weights`` and ``distances`` are
    length-n float arrays. ``records`` gives the row view.
    """

    zprimes: np.ndarray
    fz: np.ndarray
    weights: np.ndarray
    num_features: int
    target_label: int
    sigma_used: float
    seed: int
    keep_prob: float = 0.5
    distances: np.ndarray = field(default=None)

    def __post_init__(self):
        z = np.asarray(self.zprimes, dtype=np.uint8)
        if z.ndim != 2 or z.shape[1] != self.num_features:
            raise DataError(f"zprimes must be (n, {self.num_features}), got {z.shape}")
        n = z.shape[0]
        for name in ("fz", "weights"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise DataError(f"{name} must have {n} entries")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "zprimes", z)
        if self.distances is not None:
            object.__setattr__(self, "distances", np.asarray(self.distances, dtype=np.float64))
        for arr in (self.zprimes, self.fz, self.weights, self.distances):
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self):
        return self.zprimes.shape[0]

    @property
    def records(self):
        return [PerturbationRecord(z, float(f), float(w)) for z, f, w in zip(self.zprimes, self.fz, self.weights)]

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "num_features": self.num_features,
            "target_label": self.target_label,
            "sigma_used": self.sigma_used,
            "seed": self.seed,
            "keep_prob": self.keep_prob,
            "records": [
                {"zprime": "".join(map(str, z.tolist())), "fz": float(f), "weight": float(w)}
                for z, f, w in zip(self.zprimes, self.fz, self.weights)
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != SCHEMA:
            raise DataError(f"not a perturbation set document (schema {doc.get('schema')!r})")
        recs = doc["records"]
        d = doc["num_features"]
        z = np.array([[int(ch) for ch in r["zprime"]] for r in recs], dtype=np.uint8).reshape(len(recs), d)
        return cls(
            zprimes=z,
            fz=[r["fz"] for r in recs],
            weights=[r["weight"] for r in recs],
            num_features=d,
            target_label=doc["target_label"],
            sigma_used=doc["sigma_used"],
            seed=doc["seed"],
            keep_prob=doc["keep_prob"],
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _query(f, x, seg, zprimes, start, fill):
    batch = recover_batch(zprimes, x, seg, fill)
    diff = (batch - x.pixels[None]).reshape(len(batch), -1)
    distances = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    try:
        probs = checked_predict(f, batch)
    except TlimeError as exc:
        exc.args = (f"sample {start}..{start + len(batch) - 1}: {exc}",)
        raise
    except Exception as exc:
        raise SamplingError(f"predictor failed on sample {start}: {exc}", start) from exc
    return probs, distances


def build_database(
    x,
    seg,
    f,
    label,
    n,
    kernel=KernelConfig(),
    keep_prob=0.5,
    seed=0,
    batch_size=256,
    workers=1,
    fill="mean",
):
    """Sample n binary perturbations, query f on their recoveries and weight them."""
    check_compatible(x, seg)
    if n < 2:
        raise ConfigError(f"need at least 2 samples, got {n}")
    if not 0.0 <= keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must lie in [0, 1], got {keep_prob}")
    d = seg.num_segments
    zprimes = np.stack([draw_zprime(d, sample_rng(seed, i), keep_prob) for i in range(n)])

    starts = range(0, n, batch_size)
    jobs = [(zprimes[s:s + batch_size], s) for s in starts]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _query(f, x, seg, job[0], job[1], fill), jobs))
    else:
        results = [_query(f, x, seg, z, s, fill) for z, s in jobs]
    probs = np.concatenate([r[0] for r in results])
    distances = np.concatenate([r[1] for r in results])
    if not 0 <= label < probs.shape[1]:
        raise ConfigError(f"label {label} outside the predictor's {probs.shape[1]} classes")

    sigma = auto_sigma(distances) if kernel.sigma == "auto" else kernel.sigma
    weights = kernel_from_distance(distances, sigma)
    if not np.any(weights > 0):
        raise SamplingError(f"all locality weights underflowed to zero with sigma={sigma}; raise sigma")
    return PerturbationSet(
        zprimes=zprimes,
        fz=probs[:, label],
        weights=weights,
        num_features=d,
        target_label=int(label),
        sigma_used=float(sigma),
        seed=int(seed),
        keep_prob=float(keep_prob),
        distances=distances,
    )
