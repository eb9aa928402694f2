"""The black-box contract and boundary checks on its outputs."""

from typing import Protocol, runtime_checkable

import numpy as np

from ..errors import DataError, ProbabilityError

SUM_TOLERANCE = 1e-6


@runtime_checkable
class Predictor(Protocol):
    """Anything with ``num_classes`` and ``predict_proba``.

    ``predict_proba`` takes an (n, h, w, c) float array of images and
    returns an (n, num_classes) array of probabilities. Implementations
    must be stateless and safe to call from several threads at once.
    """

    num_classes: int

    def predict_proba(self, batch): ...


def as_batch(images):
    """Stack Images (or pass through an array) into an (n, h, w, c) array."""
    if isinstance(images, np.ndarray):
        batch = images.astype(np.float64, copy=False)
    else:
        batch = np.stack([getattr(im, "pixels", im) for im in images]).astype(np.float64, copy=False)
    if batch.ndim == 3:
        batch = batch[..., None]
    if batch.ndim != 4:
        raise DataError(f"expected a batch of images (n, h, w, c), got shape {batch.shape}")
    return batch


def check_probabilities(probs, n, num_classes=None, tol=SUM_TOLERANCE):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != n:
        raise ProbabilityError(f"expected {n} probability vectors, got shape {probs.shape}")
    if num_classes is not None and probs.shape[1] != num_classes:
        raise ProbabilityError(f"expected {num_classes} classes, got {probs.shape[1]}")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        bad = int(np.flatnonzero(~np.all(np.isfinite(probs) & (probs >= 0), axis=1))[0])
        raise ProbabilityError(f"vector {bad} has negative or non-finite entries: {probs[bad].tolist()}")
    sums = probs.sum(axis=1)
    off = np.abs(sums - 1.0) > tol
    if np.any(off):
        bad = int(np.flatnonzero(off)[0])
        raise ProbabilityError(f"vector {bad} sums to {sums[bad]!r}, not 1 (tolerance {tol})")
    return probs


def checked_predict(f, images):
    """Call ``f.predict_proba`` and enforce the probability contract."""
    batch = as_batch(images)
    return check_probabilities(f.predict_proba(batch), len(batch), getattr(f, "num_classes", None))


class ConstantPredictor:
    """Returns the same distribution for every input."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.num_classes = len(self.probs)

    def predict_proba(self, batch):
        return np.tile(self.probs, (len(batch), 1))


class CallablePredictor:
    """Adapts ``fn(batch) -> (n, num_classes)`` to the Predictor contract."""

    def __init__(self, fn, num_classes):
        self.fn = fn
        self.num_classes = num_classes

    def predict_proba(self, batch):
        return self.fn(batch)
