from pathlib import Path

import numpy as np
import pytest

from tlime.ingest import read_idx
from tlime.models.forest import rf_train

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def mnist():
    images = read_idx(DATA / "mnist5k-images.idx3-ubyte.gz").pixel_array()
    labels = read_idx(DATA / "mnist5k-labels.idx1-ubyte.gz").labels()
    perm = np.random.default_rng(0).permutation(len(labels))
    return images, labels, perm[:2000], perm[2000:3000]


@pytest.fixture(scope="session")
def small_forest(mnist):
    images, labels, train, _ = mnist
    return rf_train(images[train[:600]], labels[train[:600]], trees=8, max_depth=8, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
