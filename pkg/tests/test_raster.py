import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from entroboot.raster import (BBox, as_grid, compact_labels, component_bboxes, connected_components,
                              disk, distance_transform, gaussian_blur, gaussian_kernel, morph, opening)

from oracles import brute_edt, flood_fill_labels

masks = arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12)))


def brute_erode(mask, radius):
    foot = disk(radius)
    r = radius
    padded = np.pad(mask, r, constant_values=False)
    out = np.zeros_like(mask)
    for y in range(mask.shape[0]):
        for x in range(mask.shape[1]):
            out[y, x] = padded[y:y + 2 * r + 1, x:x + 2 * r + 1][foot].all()
    return out


# -- blur --------------------------------------------------------------------

def test_kernel_is_normalized_and_truncated_at_three_sigma():
    k = gaussian_kernel(1.7)
    assert len(k) == 2 * math.ceil(3 * 1.7) + 1
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(k, k[::-1])


def test_blur_keeps_constant_grid():
    assert np.allclose(gaussian_blur(np.full((20, 30), 0.5), 2.0), 0.5, atol=1e-15)


def test_blur_impulse_peak_and_mass():
    grid = np.zeros((33, 33))
    grid[16, 16] = 1.0
    out = gaussian_blur(grid, 1.0)
    # independent 2-D kernel built by direct summation
    r = 3
    ax = np.arange(-r, r + 1)
    w = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / 2.0)
    w /= w.sum()
    assert out[16, 16] == pytest.approx(w[r, r], rel=1e-12)
    assert out.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(out[16 - r:16 + r + 1, 16 - r:16 + r + 1], w, atol=1e-15)


def test_blur_rejects_non_finite_and_bad_sigma():
    grid = np.zeros((4, 4))
    grid[1, 1] = np.nan
    with pytest.raises(ValueError):
        gaussian_blur(grid, 1.0)
    with pytest.raises(ValueError):
        gaussian_blur(np.zeros((4, 4)), 0.0)
    with pytest.raises(ValueError):
        as_grid(np.zeros(5))


@given(arrays(np.float64, (9, 11), elements=st.floats(-5, 5)),
       arrays(np.float64, (9, 11), elements=st.floats(-5, 5)),
       st.floats(-3, 3), st.floats(-3, 3))
def test_blur_is_linear(x, y, a, b):
    lhs = gaussian_blur(a * x + b * y, 1.3)
    rhs = a * gaussian_blur(x, 1.3) + b * gaussian_blur(y, 1.3)
    assert np.allclose(lhs, rhs, atol=1e-9, rtol=0)


@given(arrays(np.float64, (8, 8), elements=st.floats(0, 1)))
def test_blur_stays_within_input_range(grid):
    out = gaussian_blur(grid, 0.5)
    assert out.min() >= grid.min() - 1e-12 and out.max() <= grid.max() + 1e-12


# -- connected components ----------------------------------------------------

def test_components_connectivity():
    mask = np.zeros((3, 3), dtype=bool)
    mask[0, 0] = mask[1, 1] = True
    assert connected_components(mask, 4).max() == 2
    assert connected_components(mask, 8).max() == 1
    assert connected_components(np.zeros((4, 4), dtype=bool)).max() == 0


def test_components_raster_order_of_rectangles():
    mask = np.zeros((12, 12), dtype=bool)
    mask[6:9, 1:3] = True   # third by scan position
    mask[0:2, 7:11] = True  # first
    mask[3:5, 0:2] = True   # second
    lab = connected_components(mask, 8)
    assert lab[0, 7] == 1 and lab[3, 0] == 2 and lab[6, 1] == 3


@pytest.mark.parametrize("connectivity", [4, 8])
@pytest.mark.parametrize("seed", range(25))
def test_components_match_flood_fill(seed, connectivity):
    mask = np.random.default_rng(seed).random((14, 17)) < 0.45
    assert np.array_equal(connected_components(mask, connectivity), flood_fill_labels(mask, connectivity))


@given(masks)
def test_components_partition_foreground(mask):
    lab = connected_components(mask, 8)
    assert np.array_equal(lab > 0, mask)
    assert set(np.unique(lab[lab > 0])) == set(range(1, lab.max() + 1))


# -- distance transform ------------------------------------------------------

def test_edt_examples():
    single = np.zeros((5, 5), dtype=bool)
    single[2, 2] = True
    assert distance_transform(single)[2, 2] == 1.0
    square = np.zeros((11, 11), dtype=bool)
    square[2:9, 2:9] = True
    assert distance_transform(square)[5, 5] == 4.0
    full = np.ones((6, 6), dtype=bool)
    dt = distance_transform(full)
    assert dt[0, :].tolist() == [1.0] * 6 and dt[2, 2] == 3.0


@pytest.mark.parametrize("seed", range(100))
def test_edt_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 33, size=2)
    mask = rng.random((h, w)) < rng.uniform(0.3, 0.95)
    assert np.allclose(distance_transform(mask), brute_edt(mask), atol=1e-12)


# -- morphology --------------------------------------------------------------

def test_disk_lattice_counts():
    assert disk(1).sum() == 5
    assert disk(3).sum() == 29
    assert disk(0).sum() == 1


def test_erosion_examples():
    blob = np.zeros((5, 5), dtype=bool)
    blob[2, 2] = True
    assert not morph(blob, "erode", 1).any()
    sq = np.zeros((9, 9), dtype=bool)
    sq[2:7, 2:7] = True
    expected = np.zeros_like(sq)
    expected[3:6, 3:6] = True
    assert np.array_equal(morph(sq, "erode", 1), expected)
    with pytest.raises(ValueError):
        morph(sq, "close", 1)
    with pytest.raises(ValueError):
        morph(sq, "erode", 0)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("radius", [1, 2, 3])
def test_erosion_matches_structuring_sweep(seed, radius):
    mask = np.random.default_rng(seed).random((15, 13)) < 0.8
    assert np.array_equal(morph(mask, "erode", radius), brute_erode(mask, radius))


@given(masks, st.integers(1, 3))
def test_opening_is_anti_extensive_and_idempotent(mask, radius):
    once = opening(mask, radius)
    assert not (once & ~mask).any()
    assert np.array_equal(opening(once, radius), once)


# -- boxes -------------------------------------------------------------------

def test_bbox_of_rectangle_and_empty():
    lab = np.zeros((12, 12), dtype=np.int32)
    lab[5:8, 4:6] = 1
    assert component_bboxes(lab) == [(1, BBox(4, 5, 6, 8))]
    assert component_bboxes(np.zeros((3, 3), dtype=np.int32)) == []


@given(masks)
def test_bbox_matches_extremes(mask):
    lab = mask.astype(np.int32)
    boxes = component_bboxes(lab)
    if not mask.any():
        assert boxes == []
        return
    ys, xs = np.nonzero(mask)
    (_, b), = boxes
    assert b == BBox(xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
    assert b.area >= mask.sum()


def test_bbox_helpers():
    b = BBox(2, 3, 5, 9)
    assert (b.width, b.height, b.area) == (3, 6, 18)
    assert b.to_xywh() == [2, 3, 3, 6]
    assert b.expand(4, (10, 6)) == BBox(0, 0, 6, 10)


def test_compact_labels_removes_gaps():
    lab = np.array([[0, 5, 5], [9, 0, 2]])
    out = compact_labels(lab)
    assert sorted(np.unique(out)) == [0, 1, 2, 3]
    assert np.array_equal(out > 0, lab > 0)
