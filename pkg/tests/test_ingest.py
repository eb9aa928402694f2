import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tlime.errors import (
    IdxDtypeError,
    IdxLengthError,
    IdxMagicError,
    IdxTruncatedError,
    IngestError,
    PnmHeaderError,
    PnmMagicError,
    PnmMaxvalError,
    PnmTruncatedError,
)
from tlime.ingest import parse_idx, parse_pnm, write_idx, write_pnm
from tlime.representation import Image

IMAGES = bytes([0, 0, 8, 3]) + struct.pack(">3I", 1, 2, 2) + bytes([0, 255, 128, 64])
LABELS = bytes([0, 0, 8, 1]) + struct.pack(">I", 3) + bytes([7, 2, 1])


def test_idx_images_fixture():
    ds = parse_idx(IMAGES)
    assert ds.kind == "images" and ds.dims == (1, 2, 2)
    img = ds.images()[0]
    assert img.pixels[..., 0].tolist() == [[0.0, 1.0], [128 / 255, 64 / 255]]


def test_idx_labels_fixture():
    ds = parse_idx(LABELS)
    assert ds.kind == "labels"
    assert ds.labels().tolist() == [7, 2, 1]


def test_idx_gzip_transparent():
    assert parse_idx(gzip.compress(LABELS)).labels().tolist() == [7, 2, 1]


def test_idx_truncated():
    with pytest.raises(IdxTruncatedError):
        parse_idx(IMAGES[:-1])
    with pytest.raises(IdxTruncatedError):
        parse_idx(IMAGES[:10])
    with pytest.raises(IdxTruncatedError):
        parse_idx(b"\x00\x00")


def test_idx_trailing_bytes():
    with pytest.raises(IdxLengthError):
        parse_idx(LABELS + b"\x00")


def test_idx_distinct_errors():
    with pytest.raises(IdxMagicError):
        parse_idx(b"\x01" + LABELS[1:])
    with pytest.raises(IdxDtypeError):
        parse_idx(LABELS[:2] + b"\x0d" + LABELS[3:])
    with pytest.raises(IdxMagicError):
        parse_idx(LABELS[:3] + b"\x02" + LABELS[4:])


def test_idx_write_roundtrip(rng):
    arr = rng.integers(0, 256, size=(3, 4, 5), dtype=np.uint8)
    assert np.array_equal(parse_idx(write_idx(arr)).payload, arr)


def test_idx_magic_fuzz_exhaustive():
    """Every single-byte mutation of the magic is rejected unless it is a valid magic for the body."""
    for pos in range(4):
        for value in range(256):
            mutated = bytearray(IMAGES)
            mutated[pos] = value
            if bytes(mutated[:4]) == IMAGES[:4]:
                assert parse_idx(bytes(mutated)).kind == "images"
                continue
            with pytest.raises(IngestError):
                parse_idx(bytes(mutated))


def test_idx_random_mutation_fuzz():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        data = bytearray(IMAGES if rng.random() < 0.5 else LABELS)
        for _ in range(rng.integers(1, 4)):
            op = rng.integers(3)
            pos = int(rng.integers(len(data)))
            if op == 0:
                data[pos] = int(rng.integers(256))
            elif op == 1 and len(data) > 1:
                del data[pos]
            else:
                data.insert(pos, int(rng.integers(256)))
        try:
            ds = parse_idx(bytes(data))
        except IngestError:
            continue
        assert int(np.prod(ds.dims)) == ds.payload.size


def test_pnm_minimal_p5():
    img = parse_pnm(b"P5 1 1 255\n\x00")
    assert img.shape == (1, 1, 1) and img.pixels[0, 0, 0] == 0.0


def test_pnm_p6_fixture():
    img = parse_pnm(b"P6\n3 1\n255\n" + bytes([255, 0, 0, 0, 255, 0, 0, 0, 255]))
    assert img.pixels[0].tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 1]]


def test_pnm_comments_in_header():
    img = parse_pnm(b"P5\n# made by hand\n2 # width\n1\n# max\n255\n\x00\xff")
    assert img.pixels.ravel().tolist() == [0.0, 1.0]


@pytest.mark.parametrize("channels", [1, 3])
def test_pnm_roundtrip(rng, channels):
    raw = rng.integers(0, 256, size=(5, 7, channels), dtype=np.uint8)
    img = Image(raw / 255.0)
    back = parse_pnm(write_pnm(img, comment="round trip"))
    assert back == img
    assert back.to_bytes() == raw.tobytes()


def test_pnm_errors():
    with pytest.raises(PnmMagicError):
        parse_pnm(b"P2 1 1 255\n0")
    with pytest.raises(PnmMaxvalError):
        parse_pnm(b"P5 1 1 65535\n\x00\x00")
    with pytest.raises(PnmHeaderError):
        parse_pnm(b"P5 x 1 255\n\x00")
    with pytest.raises(PnmHeaderError):
        parse_pnm(b"P5 0 1 255\n")
    with pytest.raises(PnmTruncatedError):
        parse_pnm(b"P5 2 2 255\n\x00")


def test_pnm_random_mutation_fuzz():
    rng = np.random.default_rng(11)
    base = b"P6\n3 1\n255\n" + bytes(range(9))
    for _ in range(10_000):
        data = bytearray(base)
        for _ in range(rng.integers(1, 4)):
            pos = int(rng.integers(len(data)))
            if rng.random() < 0.5:
                data[pos] = int(rng.integers(256))
            else:
                del data[pos]
        try:
            img = parse_pnm(bytes(data))
        except IngestError:
            continue
        assert img.channels in (1, 3)


@given(st.binary(max_size=64))
def test_parsers_never_crash(data):
    for parser in (parse_idx, parse_pnm):
        try:
            parser(data)
        except IngestError:
            pass


def test_normalization_is_exact():
    raw = bytes(range(256))
    img = Image.from_bytes(raw, 16, 16)
    assert np.array_equal(img.pixels.ravel(), np.arange(256) / 255.0)
    assert img.to_bytes() == raw
