"""Images, superpixel maps and the binary interpretable representation.

A binary instance is a plain ``uint8`` numpy vector with one entry per
segment: 1 keeps the segment's pixels, 0 masks them.
"""

import hashlib

import numpy as np

from .errors import DataError

MASK_FILLS = ("mean", "gray")


def _frozen(array):
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


class Image:
    """Row-major pixel grid with intensities in [0, 1].

    ``pixels`` has shape (height, width, channels) with 1 or 3 channels.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
            raise DataError(f"expected (height, width, 1|3) pixels, got shape {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise DataError("image must have at least one pixel")
        if not np.all((pixels >= 0.0) & (pixels <= 1.0)):
            raise DataError("intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(pixels))

    def __setattr__(self, name, value):
        raise AttributeError("Image is immutable")

    @classmethod
    def from_bytes(cls, raw, width, height, channels=1):
        arr = np.frombuffer(bytes(raw), dtype=np.uint8)
        if arr.size != width * height * channels:
            raise DataError(f"{arr.size} bytes do not fill a {width}x{height}x{channels} image")
        return cls(arr.reshape(height, width, channels) / 255.0)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return self.pixels.shape[2]

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def data(self):
        return self.pixels.ravel()

    def to_bytes(self):
        """Quantize to 8 bits with round(v * 255)."""
        return np.rint(self.pixels * 255.0).astype(np.uint8).tobytes()

    def content_hash(self):
        h = hashlib.sha256(repr(self.shape).encode())
        h.update(self.pixels.tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None

    def __repr__(self):
        return f"Image({self.width}x{self.height}x{self.channels})"


class SegmentMap:
    """Per-pixel superpixel labels in [0, num_segments).

    Construction checks the label range and that every id is used;
    4-connectivity is checked on demand with :meth:`is_connected`.
    """

    __slots__ = ("labels", "num_segments")

    def __init__(self, labels, num_segments=None):
        labels = np.asarray(labels)
        if labels.ndim != 2:
            raise DataError(f"labels must be 2-D, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
        if num_segments is None:
            num_segments = int(labels.max()) + 1
        if labels.min() < 0 or labels.max() >= num_segments:
            raise DataError(f"labels must lie in [0, {num_segments})")
        counts = np.bincount(labels.ravel(), minlength=num_segments)
        if np.any(counts == 0):
            missing = np.flatnonzero(counts == 0)[:5].tolist()
            raise DataError(f"segment ids {missing} have no pixels")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "num_segments", int(num_segments))

    def __setattr__(self, name, value):
        raise AttributeError("SegmentMap is immutable")

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def sizes(self):
        return np.bincount(self.labels.ravel(), minlength=self.num_segments)

    def is_connected(self):
        from scipy import ndimage

        for k in range(self.num_segments):
            _, ncomp = ndimage.label(self.labels == k)
            if ncomp != 1:
                return False
        return True

    def content_hash(self):
        h = hashlib.sha256(f"{self.height}x{self.width}:{self.num_segments}".encode())
        h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()

    def to_image(self):
        """Spread the labels over the gray range for visual inspection."""
        if self.num_segments == 1:
            gray = np.zeros(self.labels.shape)
        else:
            gray = np.rint(self.labels * 255.0 / (self.num_segments - 1)) / 255.0
        return Image(gray)

    def __eq__(self, other):
        if not isinstance(other, SegmentMap):
            return NotImplemented
        return self.num_segments == other.num_segments and np.array_equal(self.labels, other.labels)

    __hash__ = None

    def __repr__(self):
        return f"SegmentMap({self.width}x{self.height}, {self.num_segments} segments)"


def as_bits(zprime, num_segments=None):
    bits = np.asarray(zprime)
    if bits.ndim != 1:
        raise DataError("a binary instance is a 1-D vector")
    if not np.all((bits == 0) | (bits == 1)):
        raise DataError("binary instance entries must be 0 or 1")
    if num_segments is not None and bits.size != num_segments:
        raise DataError(f"binary instance has {bits.size} bits, segment map has {num_segments} segments")
    return bits.astype(np.uint8)


def full_instance(seg):
    return np.ones(seg.num_segments, dtype=np.uint8)


def check_compatible(x, seg):
    if (x.height, x.width) != (seg.height, seg.width):
        raise DataError(
            f"segment map is {seg.width}x{seg.height} but image is {x.width}x{x.height}"
        )


def segment_means(x, seg):
    """(num_segments, channels) mean color of each segment."""
    check_compatible(x, seg)
    flat = seg.labels.ravel()
    sizes = np.bincount(flat, minlength=seg.num_segments)
    pix = x.pixels.reshape(-1, x.channels)
    sums = np.stack(
        [np.bincount(flat, weights=pix[:, c], minlength=seg.num_segments) for c in range(x.channels)],
        axis=1,
    )
    return sums / sizes[:, None]


def _fill_values(x, seg, fill):
    if fill == "mean":
        return segment_means(x, seg)
    if fill == "gray":
        return np.full((seg.num_segments, x.channels), 0.5)
    raise DataError(f"unknown mask fill {fill!r}; choose from {MASK_FILLS}")


def recover_batch(zprimes, x, seg, fill="mean"):
    """Map an (n, d') bit matrix to an (n, h, w, c) array of images."""
    check_compatible(x, seg)
    zprimes = np.asarray(zprimes)
    if zprimes.ndim != 2 or zprimes.shape[1] != seg.num_segments:
        raise DataError(f"expected (n, {seg.num_segments}) bit matrix, got shape {zprimes.shape}")
    fills = _fill_values(x, seg, fill)
    masked = fills[seg.labels]  # (h, w, c)
    keep = zprimes[:, seg.labels].astype(bool)[..., None]  # (n, h, w, 1)
    return np.where(keep, x.pixels[None], masked[None])


def recover(zprime, x, seg, fill="mean"):
    bits = as_bits(zprime, seg.num_segments)
    return Image(recover_batch(bits[None], x, seg, fill)[0])


def l2_distance(a, b):
    pa = a.pixels if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    pb = b.pixels if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise DataError(f"cannot compare images of shapes {pa.shape} and {pb.shape}")
    diff = np.abs(pa - pb)
    top = diff.max(initial=0.0)
    if top == 0:
        return 0.0
    # scale first so tiny differences do not underflow to zero when squared
    diff = diff / top
    return float(top * np.sqrt(np.sum(diff * diff)))
