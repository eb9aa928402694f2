import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import grid_tiling, voronoi
from tlime.errors import ConfigError
from tlime.representation import Image, SegmentMap
from tlime.segmentation import (
    SegmentationConfig,
    enforce_connectivity,
    grid_shape,
    segment,
    segment_grid,
    segment_slic,
    slic_centers,
)


def blank(h, w, c=1, value=0.3):
    return Image(np.full((h, w, c), value))


def test_grid_4x4_four_blocks():
    seg = segment_grid(blank(4, 4), 4)
    assert seg.labels.tolist() == [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]]


def test_grid_mnist_sixteen_blocks():
    seg = segment_grid(blank(28, 28), 16)
    assert seg.num_segments == 16
    assert np.all(seg.sizes() == 49)
    assert seg.labels[0, 7] == 1 and seg.labels[7, 0] == 4


def test_grid_uneven_matches_tiling_oracle():
    x = blank(4, 5)  # 5 wide, 4 high
    seg = segment_grid(x, 4)
    assert seg.labels.tolist() == grid_tiling(5, 4, 2, 2)
    widths = {int(np.sum(seg.labels[0] == k)) for k in (0, 1)}
    heights = {int(np.sum(seg.labels[:, 0] == k)) for k in (0, 2)}
    assert widths == {3, 2} and heights == {2}


@pytest.mark.parametrize("h,w,k", [(28, 28, 7), (10, 30, 6), (30, 10, 6), (9, 9, 9), (3, 8, 24)])
def test_grid_exact_cover(h, w, k):
    rows, cols = grid_shape(h, w, k)
    seg = segment_grid(blank(h, w), k)
    assert seg.num_segments == k == rows * cols
    assert seg.labels.tolist() == grid_tiling(w, h, rows, cols)
    assert seg.is_connected()


def test_grid_prefers_near_square_blocks():
    # rows start at round(sqrt(6 * H / W)) and move to the nearest divisor
    assert grid_shape(10, 30, 6) == (1, 6)
    assert grid_shape(30, 10, 6) == (3, 2)
    assert grid_shape(28, 28, 7) == (1, 7)
    assert grid_shape(28, 28, 16) == (4, 4)


def test_grid_errors():
    with pytest.raises(ConfigError):
        segment_grid(blank(2, 2), 5)
    with pytest.raises(ConfigError):
        segment_grid(blank(5, 5), 7)
    with pytest.raises(ConfigError):
        segment_grid(blank(2, 2), 0)


def test_slic_uniform_image_is_voronoi_of_initial_centers():
    x = blank(10, 10, 3)
    seg = segment_slic(x, SegmentationConfig("slic", 4, compactness=10))
    centers, _ = slic_centers(10, 10, 4)
    expected = np.array(voronoi(10, 10, centers.tolist()))
    assert seg.num_segments == 4
    assert np.array_equal(seg.labels, expected)


def test_slic_follows_color_boundary():
    px = np.zeros((8, 8, 3))
    px[:, 3:] = 1.0  # boundary between columns 2 and 3, off the spatial midline
    seg = segment_slic(Image(px), SegmentationConfig("slic", 2, compactness=10))
    assert seg.num_segments == 2
    for yy in range(8):
        for xx in range(8):
            same = seg.labels[yy, xx] == seg.labels[0, 0]
            assert same == (xx < 3)


def test_slic_single_segment():
    rng = np.random.default_rng(3)
    seg = segment_slic(Image(rng.random((9, 7, 1))), SegmentationConfig("slic", 1))
    assert seg.num_segments == 1 and np.all(seg.labels == 0)


def test_slic_deterministic_and_seed_independent_cover():
    rng = np.random.default_rng(5)
    x = Image(rng.random((20, 24, 3)))
    a = segment_slic(x, SegmentationConfig("slic", 12, seed=1))
    b = segment_slic(x, SegmentationConfig("slic", 12, seed=1))
    c = segment_slic(x, SegmentationConfig("slic", 12, seed=99))
    assert a == b
    assert c.num_segments <= 12 and c.is_connected()


def test_connectivity_absorbs_orphans():
    labels = np.array([
        [0, 0, 0, 1],
        [0, 1, 0, 1],
        [0, 0, 0, 1],
        [1, 1, 1, 1],
    ])
    seg = enforce_connectivity(labels)
    assert seg.is_connected()
    # the enclosed pixel of label 1 joins label 0
    assert seg.labels[1, 1] == seg.labels[0, 0]
    assert seg.num_segments == 2


def test_connectivity_drops_empty_ids():
    seg = enforce_connectivity(np.array([[3, 3, 7, 7]]))
    assert seg.labels.tolist() == [[0, 0, 1, 1]]


def test_config_validation():
    with pytest.raises(ConfigError):
        segment(blank(2, 2), SegmentationConfig("grid", 0))
    with pytest.raises(ConfigError):
        segment(blank(2, 2), SegmentationConfig("felzenszwalb", 2))
    with pytest.raises(ConfigError):
        segment(blank(2, 2), SegmentationConfig("slic", 5))


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(4, 16), st.integers(4, 16), st.sampled_from([1, 3])),
           elements=st.floats(0, 1)),
    st.integers(1, 12),
    st.floats(0.5, 40),
)
def test_slic_output_invariants(px, k, m):
    x = Image(px)
    seg = segment_slic(x, SegmentationConfig("slic", k, compactness=m, iterations=5))
    assert isinstance(seg, SegmentMap)
    assert 1 <= seg.num_segments <= k
    assert set(np.unique(seg.labels)) == set(range(seg.num_segments))
    assert seg.is_connected()
