import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from entroboot.instancer import (Instance, InstanceSet, InstancerConfig, StageDump, adaptive_threshold,
                                 extract_rois, instance_from_mask, instances_from_labels, match_to_points,
                                 run_instancing, suppress_edges, voronoi_edges, voronoi_regions,
                                 watershed_roi)
from entroboot.raster import BBox, connected_components
from entroboot.sparsify import PointAnnotation, SparsifyConfig, interior_points, sample_points
from entroboot.synth import SceneConfig, generate_scene
from oracles import flood_fill_labels

P = PointAnnotation


def disk_mask(shape, cy, cx, r):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


# -- Voronoi -----------------------------------------------------------------

def test_voronoi_single_point_and_no_seeds():
    assert not voronoi_regions([P(3, 4, None)], (10, 12)).any()
    with pytest.raises(ValueError, match="no seeds"):
        voronoi_regions([], (5, 5))


def test_voronoi_bisector_column():
    reg = voronoi_regions([P(0, 3, None), P(10, 3, None)], (7, 11))
    assert (reg[:, :5] == 0).all() and (reg[:, 6:] == 1).all()
    assert (reg[:, 5] == 0).all()  # equidistant column goes to the lower index


@pytest.mark.parametrize("seed", range(20))
def test_voronoi_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 65, size=2)
    pts = [P(int(rng.integers(w)), int(rng.integers(h)), None) for _ in range(rng.integers(1, 12))]
    reg = voronoi_regions(pts, (h, w))
    for y in range(0, h, 3):
        for x in range(0, w, 3):
            d = [(p.x - x) ** 2 + (p.y - y) ** 2 for p in pts]
            assert reg[y, x] == d.index(min(d))


def test_edges_examples():
    assert not voronoi_edges(np.zeros((5, 5), dtype=int)).any()
    halves = np.zeros((4, 6), dtype=int)
    halves[:, 3:] = 1
    edges = voronoi_edges(halves)
    assert edges[:, 2:4].all() and edges.sum() == 8


@pytest.mark.parametrize("seed", range(10))
def test_edges_separate_regions(seed):
    rng = np.random.default_rng(seed)
    pts = [P(int(rng.integers(40)), int(rng.integers(30)), None) for _ in range(6)]
    reg = voronoi_regions(pts, (30, 40))
    edges = voronoi_edges(reg)
    comps = connected_components(~edges, 4)
    for c in range(1, comps.max() + 1):
        assert len(np.unique(reg[comps == c])) == 1


def test_suppress_edges():
    grid = np.random.default_rng(0).random((6, 6))
    assert np.array_equal(suppress_edges(grid, np.zeros((6, 6), bool)), grid)
    assert not suppress_edges(grid, np.ones((6, 6), bool)).any()
    edges = np.zeros((6, 6), bool)
    edges[2] = True
    assert not suppress_edges(np.where(edges, grid, 0.0), edges).any()
    with pytest.raises(ValueError):
        suppress_edges(grid, np.zeros((5, 6), bool))


# -- thresholding and regions ------------------------------------------------

def gaussian_local_mean(grid, window):
    """Direct 2-D weighted sum over the window with reflected (edge-inclusive) padding."""
    r = window // 2
    ax = np.arange(-r, r + 1)
    k1 = np.exp(-ax ** 2 / (2 * (window / 6.0) ** 2))
    k1 /= k1.sum()
    k2 = np.outer(k1, k1)
    padded = np.pad(grid, r, mode="symmetric")
    out = np.empty_like(grid)
    for y in range(grid.shape[0]):
        for x in range(grid.shape[1]):
            out[y, x] = (padded[y:y + window, x:x + window] * k2).sum()
    return out


def test_adaptive_threshold_constant_grid_is_background():
    assert not adaptive_threshold(np.full((20, 20), 0.4), 21, 0.02).any()


def test_adaptive_threshold_bright_disk():
    grid = np.where(disk_mask((41, 41), 20, 20, 5), 1.0, 0.0)
    fg = adaptive_threshold(grid, 21, 0.02)
    assert fg[disk_mask((41, 41), 20, 20, 3)].all()
    assert not fg[~disk_mask((41, 41), 20, 20, 5)].any()


@pytest.mark.parametrize("seed", range(5))
def test_adaptive_threshold_matches_direct_sum(seed):
    grid = np.random.default_rng(seed).random((17, 19))
    expected = grid - gaussian_local_mean(grid, 9) > 0.05
    assert np.array_equal(adaptive_threshold(grid, 9, 0.05), expected)


@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5))
def test_adaptive_threshold_affine_invariance(seed, scale, shift):
    grid = np.random.default_rng(seed).random((16, 16))
    base = adaptive_threshold(grid, 7, 0.05)
    moved = adaptive_threshold(scale * grid + shift, 7, 0.05 * scale)
    # only pixels sitting on the decision boundary may flip through rounding
    margin = np.abs(grid - gaussian_local_mean(grid, 7) - 0.05)
    assert np.array_equal(base[margin > 1e-9], moved[margin > 1e-9])


def test_adaptive_threshold_rejects_even_window():
    with pytest.raises(ValueError):
        adaptive_threshold(np.zeros((5, 5)), 4, 0.0)


def test_extract_rois():
    assert extract_rois(np.zeros((10, 10), bool)) == []
    mask = np.zeros((20, 20), bool)
    mask[0:3, 0:3] = True
    mask[10:12, 14:20] = True
    assert extract_rois(mask) == [BBox(0, 0, 5, 5), BBox(12, 8, 20, 14)]


@pytest.mark.parametrize("seed", range(5))
def test_roi_count_equals_component_count(seed):
    mask = np.random.default_rng(seed).random((25, 25)) < 0.3
    assert len(extract_rois(mask)) == flood_fill_labels(mask, 8).max()


# -- watershed ---------------------------------------------------------------

def test_watershed_convex_blob_is_one_instance():
    mask = disk_mask((30, 30), 15, 15, 8)
    roi = BBox(5, 5, 26, 26)
    out = watershed_roi(np.zeros((30, 30)), mask, roi)
    assert out.max() == 1
    assert np.array_equal(out > 0, mask[roi.slices])


def test_watershed_splits_two_disks_at_neck():
    shape = (30, 50)
    mask = disk_mask(shape, 15, 13, 9) | disk_mask(shape, 15, 36, 9)
    mask[15, 13:37] = True  # one-pixel neck
    roi = BBox(0, 0, 50, 30)
    out = watershed_roi(np.zeros(shape), mask, roi)
    assert out.max() == 2
    left, right = out[15, 13], out[15, 36]
    assert left != right
    assert (out[disk_mask(shape, 15, 13, 8)] == left).all()
    assert (out[disk_mask(shape, 15, 36, 8)] == right).all()


@given(arrays(bool, (14, 14)))
def test_watershed_partitions_mask(mask):
    if not mask.any():
        with pytest.raises(ValueError):
            watershed_roi(np.zeros((14, 14)), mask, BBox(0, 0, 14, 14))
        return
    roi = BBox(1, 2, 13, 14)
    sub = mask[roi.slices]
    if not sub.any():
        return
    out = watershed_roi(np.random.default_rng(0).random((14, 14)), mask, roi)
    assert out.shape == sub.shape
    assert np.array_equal(out > 0, sub)


# -- matching ----------------------------------------------------------------

def square_instance(inst_id, x0, y0, size, shape=(40, 40)):
    m = np.zeros(shape, bool)
    m[y0:y0 + size, x0:x0 + size] = True
    return instance_from_mask(inst_id, m)


def test_match_point_inside_mask():
    inst = InstanceSet([square_instance(1, 5, 5, 6), square_instance(2, 25, 25, 6)], (40, 40))
    out = match_to_points(inst, [P(7, 7, None)], 20)
    assert [(i.id, i.matched_point) for i in out] == [(1, 0)]


def test_match_two_points_one_mask():
    inst = InstanceSet([square_instance(1, 5, 5, 10)], (40, 40))
    out = match_to_points(inst, [P(3, 8, None), P(8, 8, None), P(9, 9, None)], 20)
    assert [(i.id, i.matched_point) for i in out] == [(1, 1)]


def test_match_drops_far_artifact():
    inst = InstanceSet([square_instance(1, 0, 0, 3), square_instance(2, 30, 30, 3)], (40, 40))
    out = match_to_points(inst, [P(1, 1, None)], 20)
    assert [i.id for i in out] == [1]
    assert len(match_to_points(inst, [P(10, 10, None)], 5)) == 0


@given(st.lists(st.tuples(st.integers(0, 39), st.integers(0, 39)), min_size=1, max_size=10),
       st.integers(0, 1000))
def test_match_never_double_counts(coords, seed):
    rng = np.random.default_rng(seed)
    insts = [square_instance(k + 1, int(rng.integers(35)), int(rng.integers(35)), 4) for k in range(6)]
    out = match_to_points(InstanceSet(insts, (40, 40)), [P(x, y, None) for x, y in coords], 15)
    used = [i.matched_point for i in out]
    assert len(used) == len(set(used)) and len(out) <= len(coords)


def test_instance_helpers():
    lab = np.zeros((10, 10), np.int32)
    lab[2:4, 3:7] = 1
    lab[6:9, 1:2] = 2
    s = instances_from_labels(lab)
    assert [i.area for i in s] == [8, 3]
    assert np.array_equal(s.to_label_map(), lab)
    ys, xs = s.instances[1].coords()
    assert set(zip(ys.tolist(), xs.tolist())) == {(6, 1), (7, 1), (8, 1)}


# -- end to end --------------------------------------------------------------

@pytest.fixture(scope="module")
def scene():
    image, gt = generate_scene(SceneConfig(seed=5))
    return image, gt


def test_zero_entropy_gives_nothing(scene):
    image, gt = scene
    pts = interior_points(gt)
    assert len(run_instancing(np.zeros(gt.shape), pts, image)) == 0
    with pytest.raises(ValueError, match="no seeds"):
        run_instancing(np.zeros(gt.shape), [], image)


def test_ideal_entropy_recovers_every_nucleus(scene):
    image, gt = scene
    pts = interior_points(gt)
    out = run_instancing((gt > 0).astype(float), pts, image)
    lm = out.to_label_map()
    for i in range(1, gt.max() + 1):
        g = gt == i
        best = max(((g & (lm == j)).sum() / (g | (lm == j)).sum() for j in np.unique(lm[g]) if j), default=0)
        assert best >= 0.5


def test_instances_respect_invariants(scene):
    image, gt = scene
    pts = sample_points(gt, SparsifyConfig(seed=5))
    cfg = InstancerConfig()
    stages = StageDump()
    out = run_instancing((gt > 0).astype(float), pts, image, cfg, stages)
    assert set(stages.arrays) == {"a_entropy", "b_threshold", "b_separated", "c_watershed",
                                  "d_checked", "e_matched"}
    regions = voronoi_regions(sorted(pts, key=lambda p: (p.y, p.x)), gt.shape)
    band = voronoi_edges(regions)
    for inst in out:
        assert inst.area >= cfg.min_area
        full = inst.full_mask(gt.shape)
        ys, xs = np.nonzero(inst.mask)
        assert (ys.min(), xs.min(), ys.max() + 1, xs.max() + 1) == (0, 0, inst.bbox.height, inst.bbox.width)
        assert len(np.unique(regions[full & ~band])) == 1
    matched = [i.matched_point for i in out]
    assert len(set(matched)) == len(matched) <= len(pts)


def test_determinism_and_point_order(scene):
    image, gt = scene
    pts = sample_points(gt, SparsifyConfig(seed=8))
    ent = np.clip((gt > 0) * 0.8 + np.random.default_rng(0).random(gt.shape) * 0.3, 0, 1)
    a = run_instancing(ent, pts, image)
    b = run_instancing(ent, pts, image)
    assert a.to_label_map().tobytes() == b.to_label_map().tobytes()
    assert [i.matched_point for i in a] == [i.matched_point for i in b]
    perm = np.random.default_rng(1).permutation(len(pts))
    c = run_instancing(ent, [pts[k] for k in perm], image)
    masks = lambda s: sorted(i.full_mask(gt.shape).tobytes() for i in s)
    assert masks(a) == masks(c)


def test_config_validation():
    for kw in [dict(threshold_window=20), dict(threshold_window=1), dict(min_area=0),
               dict(marker_dt_fraction=1.0), dict(blur_sigma=0.0)]:
        with pytest.raises(ValueError):
            InstancerConfig(**kw).validate()
