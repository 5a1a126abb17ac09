from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import disk
from lesionkit.imgproc import Region, connected_components, largest_component
from lesionkit.segment import (
    EDGE_DIRECTIONS,
    NoLesionFound,
    SegConfig,
    SegmentationError,
    StageResult,
    coarse_localize,
    filter_and_score_rois,
    fuse_masks,
    mst_segment,
    otsu_level,
    otsu_threshold,
    refine_border,
    roi_score,
    segment_lesion,
    segment_variants,
    stable_argsort,
    tdr,
)


# ---------------------------------------------------------------- Otsu


def otsu_oracle(hist):
    """Exhaustive sweep of the between-class variance w0 w1 (mu0 - mu1)^2."""
    n = sum(int(c) for c in hist)
    best, best_t = None, None
    for t in range(len(hist)):
        lo = [(i, int(c)) for i, c in enumerate(hist) if i < t]
        hi = [(i, int(c)) for i, c in enumerate(hist) if i >= t]
        n0, n1 = sum(c for _, c in lo), sum(c for _, c in hi)
        if n0 == 0 or n1 == 0:
            continue
        mu0 = Fraction(sum(i * c for i, c in lo), n0)
        mu1 = Fraction(sum(i * c for i, c in hi), n1)
        var = Fraction(n0, n) * Fraction(n1, n) * (mu0 - mu1) ** 2
        if best is None or var > best:
            best, best_t = var, t
    return best_t


def test_otsu_matches_oracle_on_sparse_histograms(rng):
    for _ in range(20):
        hist = np.zeros(256, int)
        idx = rng.choice(256, size=rng.integers(2, 12), replace=False)
        hist[idx] = rng.integers(1, 50, len(idx))
        assert otsu_level(hist) == otsu_oracle(hist)


def test_otsu_bimodal_spikes():
    g = np.full((10, 10), 50.0)
    g[:, 5:] = 200
    t, seg = otsu_threshold(g)
    assert 50 < t <= 200
    assert np.array_equal(seg, g == 50)


def test_otsu_constant_plane_errors():
    with pytest.raises(SegmentationError):
        otsu_threshold(np.full((8, 8), 77.0))


def test_otsu_respects_mask_and_polarity():
    g = np.zeros((6, 6))
    g[:, 3:] = 100
    g[0, 0] = 255  # outside the mask, must not matter
    m = np.ones_like(g, bool)
    m[0, 0] = False
    t, seg = otsu_threshold(g, m, dark=False)
    assert not seg[0, 0]
    assert np.array_equal(seg[m], (g >= t)[m])


# ---------------------------------------------------------------- MST


def mst_reference(values, mask, k, min_size):
    """Plain-Python graph merging: same rule, edges listed explicitly and sorted stably."""
    h, w = values.shape
    ids = {}
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                ids[(y, x)] = len(ids)
    edges = []
    for dy, dx in EDGE_DIRECTIONS:
        for y in range(h):
            for x in range(w):
                y2, x2 = y + dy, x + dx
                if (y, x) in ids and (y2, x2) in ids:
                    edges.append((abs(values[y, x] - values[y2, x2]), ids[(y, x)], ids[(y2, x2)]))
    edges = sorted(edges, key=lambda e: e[0])
    parent = list(range(len(ids)))
    size = [1] * len(ids)
    internal = [0.0] * len(ids)

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    def join(a, b):
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
        return a

    for wgt, a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb and wgt <= internal[ra] + k / size[ra] and wgt <= internal[rb] + k / size[rb]:
            internal[join(ra, rb)] = wgt
    for _, a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb and (size[ra] < min_size or size[rb] < min_size):
            join(ra, rb)
    labels = np.full((h, w), -1)
    names = {}
    for (y, x), i in sorted(ids.items(), key=lambda kv: kv[1]):
        root = find(i)
        names.setdefault(root, len(names))
        labels[y, x] = names[root]
    return labels


def test_mst_two_halves():
    g = np.zeros((12, 12))
    g[:, 6:] = 255
    lab = mst_segment(g, None, k=1.0, min_size=1)
    assert lab.max() == 1
    assert len(np.unique(lab[:, :6])) == 1 and len(np.unique(lab[:, 6:])) == 1


@given(st.floats(0.1, 1e4))
def test_mst_constant_single_component(k):
    lab = mst_segment(np.full((9, 11), 42.0), None, k, 1)
    assert (lab == 0).all()


def test_mst_matches_reference(rng):
    for trial in range(6):
        g = rng.integers(0, 6, (16, 16)).astype(float) * 40 + rng.normal(0, 3, (16, 16)).round()
        mask = rng.random((16, 16)) < 0.9 if trial % 2 else np.ones((16, 16), bool)
        for min_size in (1, 5):
            got = mst_segment(g, mask, 50.0, min_size)
            assert np.array_equal(got, mst_reference(g, mask, 50.0, min_size))


@given(arrays(np.int64, st.integers(0, 400), elements=st.integers(0, 20)))
def test_stable_argsort(keys):
    keys = keys.astype(float)
    assert np.array_equal(stable_argsort(keys), np.argsort(keys, kind="stable"))


# ---------------------------------------------------------------- ROI scoring


def test_roi_score_values():
    assert roi_score(321, 50, 50, 100, 100) == 321
    assert roi_score(500, 60, 60, 100, 100) == pytest.approx(500 * (1 - 2 * np.sqrt(0.02)) ** 4)
    assert roi_score(500, 60, 60, 100, 100) == pytest.approx(132.3, abs=0.05)
    assert roi_score(10, 0, 0, 100, 100) == 0


@given(st.floats(1, 1e4), st.floats(0, 1), st.floats(0, 1), st.floats(0.1, 10))
def test_roi_score_scale_invariance(area, u, v, s):
    # weight depends only on the normalised centroid
    a = roi_score(area, u * 100, v * 80, 100, 80)
    b = roi_score(area, u * 100 * s, v * 80 * s, 100 * s, 80 * s)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def _square(shape, x0, y0, side):
    m = np.zeros(shape, bool)
    m[y0 : y0 + side, x0 : x0 + side] = True
    return m


def test_filter_prefers_central_and_drops_border():
    shape = (100, 100)
    central = _square(shape, 45, 45, 10)
    off = _square(shape, 55, 55, 10)
    edge = _square(shape, 0, 30, 30)
    regs = connected_components(central | edge) + connected_components(off)
    best = filter_and_score_rois(regs, 100, 100)
    assert np.array_equal(best.mask, central)
    with pytest.raises(NoLesionFound):
        filter_and_score_rois(connected_components(edge), 100, 100)
    corner = _square(shape, 2, 2, 6)  # inside, but outside the valid box
    with pytest.raises(NoLesionFound):
        filter_and_score_rois(connected_components(corner), 100, 100)
    with pytest.raises(NoLesionFound):
        filter_and_score_rois([], 100, 100)


# ---------------------------------------------------------------- fusion


def test_fuse_masks_examples():
    d = disk((60, 60), 30, 30, 12)
    empty = np.zeros_like(d)
    assert np.array_equal(fuse_masks(empty, d), fuse_masks(d, d))
    assert fuse_masks(empty, d)[30, 30]
    big = _square((60, 60), 5, 5, 10)
    small = _square((60, 60), 40, 40, 6)
    out = fuse_masks(big, small)
    assert out[10, 10] and not out[43, 43]
    with pytest.raises(NoLesionFound):
        fuse_masks(empty, empty)


@given(arrays(bool, (24, 24)), arrays(bool, (24, 24)))
def test_fused_mask_single_component_no_holes(a, b):
    if not (a | b).any():
        return
    out = fuse_masks(a, b, 3)
    assert len(connected_components(out, 8)) == 1
    for r in connected_components(~out, 4):
        assert r.touches_border()


# ---------------------------------------------------------------- stages


def _lesion_image(size=200, r=40, center=None, skin=(215, 170, 140), lesion=(90, 60, 45)):
    c = center or (size / 2, size / 2)
    img = np.empty((size, size, 3), np.uint8)
    img[:] = skin
    gt = disk((size, size), c[0], c[1], r)
    img[gt] = lesion
    return img, gt


def test_coarse_localize_iou():
    img, gt = _lesion_image(400, 70)
    st_ = coarse_localize(img, np.ones(gt.shape, bool))
    from lesionkit.imgproc import resize_mask

    up = resize_mask(st_.fused, gt.shape)
    iou = (up & gt).sum() / (up | gt).sum()
    assert iou >= 0.8


def test_blank_skin_no_lesion():
    img = np.full((128, 128, 3), (215, 170, 140), np.uint8)
    with pytest.raises(NoLesionFound):
        segment_lesion(img)
    with pytest.raises(NoLesionFound):
        coarse_localize(img, np.zeros((128, 128), bool))


def test_single_method_variant_equals_filtered_region():
    img, gt = _lesion_image(160, 30)
    res = segment_variants(img, None, SegConfig(), variants=(("otsu", "mst"), ("otsu",), ("mst",)))
    for name, methods in (("otsu", ("otsu",)), ("mst", ("mst",)), ("otsu+mst", ("otsu", "mst"))):
        direct = segment_lesion(img, None, SegConfig(), methods)
        assert np.array_equal(res[name].mask, direct.mask)
    only = coarse_localize(img, np.ones(gt.shape, bool), methods=("mst",))
    assert np.array_equal(only.fused, fuse_masks(np.zeros_like(only.mst), only.mst))


def test_segment_lesion_fine_mask_properties():
    img, gt = _lesion_image(300, 50, center=(140, 160))
    seg = segment_lesion(img)
    x0, y0, x1, y1 = seg.crop
    assert not seg.mask[:y0].any() and not seg.mask[y1:].any()
    assert not seg.mask[:, :x0].any() and not seg.mask[:, x1:].any()
    assert len(connected_components(seg.mask, 8)) == 1
    assert tdr(gt, seg.mask) > 97
    assert tdr(gt, seg.mask) >= tdr(gt, seg.coarse_upsampled) - 1e-9


def test_degenerate_crop():
    img = np.full((40, 40, 3), 200, np.uint8)
    m = np.zeros((40, 40), bool)
    m[20:22, 20:22] = True
    coarse = StageResult(Region.from_mask(m), m, m, m)
    with pytest.raises(SegmentationError, match="degenerate crop"):
        refine_border(img, coarse, None, SegConfig(crop_padding=0.25))


def test_fine_fallback_keeps_coarse():
    # nothing separable inside the crop: fine stage falls back to the coarse mask
    img = np.full((100, 100, 3), 180, np.uint8)
    m = disk((100, 100), 50, 50, 20)
    coarse = StageResult(Region.from_mask(m), m, m, m)
    seg = refine_border(img, coarse, None, SegConfig())
    assert seg.fine_fallback
    assert np.array_equal(seg.mask, largest_component(m))


def test_tdr_values():
    gt = np.zeros((4, 4), bool)
    gt[:2] = True
    assert tdr(gt, gt) == 100
    assert tdr(gt, ~gt) == 0
    half = np.zeros_like(gt)
    half[0] = True
    assert tdr(gt, half) == 50
    with pytest.raises(ValueError):
        tdr(np.zeros_like(gt), gt)


def test_config_validation():
    with pytest.raises(ValueError):
        SegConfig(valid_fraction=0)
    with pytest.raises(ValueError):
        SegConfig(k_coarse=-1)
    assert SegConfig().k_fine_value == 200
