"""Parsers for IDX (MNIST) datasets and binary Netpbm images."""

import gzip
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    IdxDtypeError,
    IdxLengthError,
    IdxMagicError,
    IdxTruncatedError,
    PnmHeaderError,
    PnmMagicError,
    PnmMaxvalError,
    PnmTruncatedError,
)
from .representation import Image

IDX_UBYTE = 0x08
GZIP_MAGIC = b"\x1f\x8b"


@dataclass(frozen=True)
class IdxDataset:
    kind: str  # "images" or "labels"
    dims: tuple
    payload: np.ndarray  # uint8, shaped by dims

    def images(self):
        """Return the payload as a list of normalized grayscale Images."""
        if self.kind != "images":
            raise TypeError("dataset holds labels, not images")
        return [Image(frame[:, :, None] / 255.0) for frame in self.payload]

    def pixel_array(self):
        """(n, rows, cols, 1) float array in [0, 1]."""
        return self.payload[..., None] / 255.0

    def labels(self):
        if self.kind != "labels":
            raise TypeError("dataset holds images, not labels")
        return self.payload.astype(np.int64)


def parse_idx(data):
    if data[:2] == GZIP_MAGIC:
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise IdxTruncatedError(f"corrupt gzip stream: {exc}") from None
    if len(data) < 4:
        raise IdxTruncatedError(f"header needs 4 bytes, got {len(data)}")
    zero0, zero1, dtype, ndims = data[0], data[1], data[2], data[3]
    if zero0 != 0 or zero1 != 0:
        raise IdxMagicError(f"magic must start with 00 00, got {zero0:02x} {zero1:02x}")
    if dtype != IDX_UBYTE:
        raise IdxDtypeError(f"only unsigned byte payloads (0x08) are supported, got 0x{dtype:02x}")
    if ndims == 3:
        kind = "images"
    elif ndims == 1:
        kind = "labels"
    else:
        raise IdxMagicError(f"expected 1 (labels) or 3 (images) dimensions, got {ndims}")
    header_len = 4 + 4 * ndims
    if len(data) < header_len:
        raise IdxTruncatedError(f"dimension table needs {header_len} bytes, got {len(data)}")
    dims = struct.unpack(f">{ndims}I", data[4:header_len])
    expected = int(np.prod(dims, dtype=np.int64))
    body = len(data) - header_len
    if body < expected:
        raise IdxTruncatedError(f"payload has {body} bytes, dims {list(dims)} need {expected}")
    if body > expected:
        raise IdxLengthError(f"payload has {body - expected} trailing bytes beyond dims {list(dims)}")
    payload = np.frombuffer(data, dtype=np.uint8, offset=header_len).reshape(dims)
    return IdxDataset(kind, tuple(dims), payload)


def read_idx(path):
    return parse_idx(Path(path).read_bytes())


def write_idx(array):
    """Encode a uint8 array with 1 or 3 dims as IDX bytes."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">4B", 0, 0, IDX_UBYTE, array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.tobytes()


_TOKEN = re.compile(rb"\s*(?:#[^\n\r]*[\n\r]\s*)*")


def _header_tokens(data, count):
    """Read `count` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the first payload byte.
    """
    tokens = []
    pos = 2
    for _ in range(count):
        start = _TOKEN.match(data, pos).end()
        end = start
        while end < len(data) and data[end:end + 1].isdigit():
            end += 1
        if end == start:
            raise PnmHeaderError(f"expected a decimal number at byte {start}")
        tokens.append(int(data[start:end]))
        pos = end
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r", b"\v", b"\f"):
        raise PnmHeaderError("header must end with a single whitespace byte")
    return tokens, pos + 1


def parse_pnm(data):
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise PnmMagicError(f"unsupported magic {magic!r}; only P5 and P6 are read")
    (width, height, maxval), offset = _header_tokens(data, 3)
    if width < 1 or height < 1:
        raise PnmHeaderError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise PnmMaxvalError(f"only maxval 255 is supported, got {maxval}")
    need = width * height * channels
    if len(data) - offset < need:
        raise PnmTruncatedError(f"raster has {len(data) - offset} bytes, need {need}")
    raster = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    return Image(raster.reshape(height, width, channels) / 255.0)


def write_pnm(img, comment=None):
    magic = {1: b"P5", 3: b"P6"}[img.channels]
    header = magic + b"\n"
    if comment:
        for line in comment.splitlines():
            header += b"# " + line.encode("ascii", "replace") + b"\n"
    header += f"{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.to_bytes()


def read_pnm(path):
    return parse_pnm(Path(path).read_bytes())
