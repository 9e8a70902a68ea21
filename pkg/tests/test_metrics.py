import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treevos.core import Mask
from treevos.metrics import (
    FrameScore,
    boundary_pixels,
    contour_f,
    default_boundary_tolerance,
    mask_to_bbox,
    region_j,
    segment_slices,
    series_and_summary,
)

from conftest import make_mask


def rect_mask(width, height, x0, y0, x1, y1):
    """Inclusive rectangle on a width x height canvas."""
    grid = np.zeros((height, width), dtype=bool)
    grid[y0 : y1 + 1, x0 : x1 + 1] = True
    return Mask.from_array(grid)


def reference_boundary(mask):
    """Independent 4-adjacency boundary: mask pixels touching background/edge."""
    g = mask.to_array()
    h, w = g.shape
    out = set()
    for y in range(h):
        for x in range(w):
            if not g[y, x]:
                continue
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if not (0 <= ny < h and 0 <= nx < w) or not g[ny, nx]:
                    out.add((y, x))
                    break
    return out


def reference_contour_f(pred, gt, tol):
    """O(B^2) double-loop boundary F-measure."""
    pb = reference_boundary(pred)
    gb = reference_boundary(gt)
    if not pb and not gb:
        return 1.0
    if not pb or not gb:
        return 0.0

    def within(p, others):
        return any(max(abs(p[0] - q[0]), abs(p[1] - q[1])) <= tol for q in others)

    precision = sum(within(p, gb) for p in pb) / len(pb)
    recall = sum(within(q, pb) for q in gb) / len(gb)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


class TestRegionJ:
    def test_identical_masks(self):
        m = make_mask(9, 7, seed=2)
        assert region_j(m, m) == 1.0

    def test_disjoint_masks(self):
        a = rect_mask(8, 8, 0, 0, 2, 2)
        b = rect_mask(8, 8, 5, 5, 7, 7)
        assert region_j(a, b) == 0.0

    def test_overlap_thirds(self):
        # 4-wide strips: pred rows 0-1, gt rows 1-2; intersection 4, union 12.
        pred = rect_mask(4, 4, 0, 0, 3, 1)
        gt = rect_mask(4, 4, 0, 1, 3, 2)
        expected_inter = sum(
            1 for y in range(4) for x in range(4)
            if pred.to_array()[y, x] and gt.to_array()[y, x]
        )
        expected_union = sum(
            1 for y in range(4) for x in range(4)
            if pred.to_array()[y, x] or gt.to_array()[y, x]
        )
        assert (expected_inter, expected_union) == (4, 12)
        assert region_j(pred, gt) == pytest.approx(1 / 3)

    def test_empty_conventions(self):
        empty = Mask.empty(5, 5)
        assert region_j(empty, empty) == 1.0
        assert region_j(empty, rect_mask(5, 5, 0, 0, 1, 1)) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            region_j(Mask.empty(4, 4), Mask.empty(5, 4))


class TestContourF:
    def test_identical(self):
        m = rect_mask(12, 12, 3, 3, 8, 8)
        assert contour_f(m, m, 1) == 1.0

    def test_both_empty(self):
        assert contour_f(Mask.empty(6, 6), Mask.empty(6, 6), 1) == 1.0

    def test_one_empty(self):
        assert contour_f(Mask.empty(6, 6), rect_mask(6, 6, 1, 1, 4, 4), 1) == 0.0

    def test_shift_at_tolerance_scores_one(self):
        # Boundaries offset by exactly the tolerance on all sides.
        inner = rect_mask(16, 16, 5, 5, 10, 10)
        grown = rect_mask(16, 16, 4, 4, 11, 11)
        assert contour_f(grown, inner, 1) == 1.0

    def test_shift_beyond_tolerance_scores_zero(self):
        inner = rect_mask(16, 16, 5, 5, 10, 10)
        grown = rect_mask(16, 16, 3, 3, 12, 12)
        assert contour_f(grown, inner, 1) == 0.0

    def test_matches_reference_on_fixture(self):
        pred = rect_mask(8, 8, 1, 1, 4, 4)
        gt = rect_mask(8, 8, 2, 2, 6, 6)
        for tol in (0, 1, 2):
            assert contour_f(pred, gt, tol) == pytest.approx(
                reference_contour_f(pred, gt, tol)
            )

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 2))
    def test_matches_reference_on_random_masks(self, seed, tol):
        rng = np.random.default_rng(seed)
        pred = Mask(10, 8, rng.random(80) < 0.4)
        gt = Mask(10, 8, rng.random(80) < 0.4)
        assert contour_f(pred, gt, tol) == pytest.approx(
            reference_contour_f(pred, gt, tol)
        )

    def test_default_tolerance_follows_diagonal(self):
        assert default_boundary_tolerance(64, 48) == 1
        assert default_boundary_tolerance(640, 480) == 7

    def test_boundary_includes_canvas_edge(self):
        m = Mask.full(4, 4)
        assert boundary_pixels(m).sum() == 12  # ring of the 4x4 block


class TestBbox:
    def test_two_pixels(self):
        grid = np.zeros((8, 10), dtype=bool)
        grid[2, 3] = True
        grid[5, 7] = True
        assert mask_to_bbox(Mask.from_array(grid)) == (3, 2, 7, 5)

    def test_single_pixel_origin(self):
        grid = np.zeros((4, 4), dtype=bool)
        grid[0, 0] = True
        assert mask_to_bbox(Mask.from_array(grid)) == (0, 0, 0, 0)

    def test_empty_is_none(self):
        assert mask_to_bbox(Mask.empty(4, 4)) is None


class TestSeries:
    def test_constant_series(self):
        scores = [FrameScore(t, 0.8, 0.8) for t in range(6)]
        rows, summary = series_and_summary(scores, 3)
        assert summary.mean_j == pytest.approx(0.8)
        assert summary.mean_jf == pytest.approx(0.8)
        assert summary.segment_jf == pytest.approx((0.8, 0.8, 0.8))
        assert rows[0] == "time,j,f,jf"
        assert rows[1] == "0,0.800000,0.800000,0.800000"

    def test_two_segments(self):
        scores = [FrameScore(0, 1.0, 1.0), FrameScore(1, 0.0, 0.0)]
        _, summary = series_and_summary(scores, 2)
        assert summary.segment_jf == pytest.approx((1.0, 0.0))
        assert summary.mean_jf == pytest.approx(0.5)

    def test_ten_frame_fixture_hand_recomputed(self):
        j = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
        f = [1.0, 0.8, 0.6, 0.4, 0.2, 0.0, 0.2, 0.4, 0.6, 0.8]
        scores = [FrameScore(t, j[t], f[t]) for t in range(10)]
        _, summary = series_and_summary(scores, 4)
        jf = [(a + b) / 2 for a, b in zip(j, f)]
        assert summary.mean_j == pytest.approx(sum(j) / 10)
        assert summary.mean_f == pytest.approx(sum(f) / 10)
        assert summary.mean_jf == pytest.approx(sum(jf) / 10)
        # floor width 2, last segment absorbs the remainder of 4 frames
        assert summary.segment_jf == pytest.approx(
            (
                sum(jf[0:2]) / 2,
                sum(jf[2:4]) / 2,
                sum(jf[4:6]) / 2,
                sum(jf[6:10]) / 4,
            )
        )

    def test_segment_slices_absorb_remainder(self):
        assert segment_slices(10, 4) == [
            slice(0, 2),
            slice(2, 4),
            slice(4, 6),
            slice(6, 10),
        ]

    def test_empty_series_rejected(self):
        with pytest.raises(ValueError):
            series_and_summary([], 2)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = Mask(9, 9, rng.random(81) < 0.5)
        b = Mask(9, 9, rng.random(81) < 0.5)
        assert region_j(a, b) == region_j(b, a)
        assert contour_f(a, b, 1) == pytest.approx(contour_f(b, a, 1))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        a = Mask(7, 11, rng.random(77) < 0.3)
        b = Mask(7, 11, rng.random(77) < 0.7)
        assert 0.0 <= region_j(a, b) <= 1.0
        assert 0.0 <= contour_f(a, b, 1) <= 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.integers(0, 3))
    def test_translation_consistency(self, seed, dx, dy):
        rng = np.random.default_rng(seed)
        core = rng.random((6, 6)) < 0.5

        def place(offset_y, offset_x):
            grid = np.zeros((12, 12), dtype=bool)
            grid[offset_y : offset_y + 6, offset_x : offset_x + 6] = core
            return Mask.from_array(grid)

        a0, b0 = place(1, 1), place(2, 2)
        a1, b1 = place(1 + dy, 1 + dx), place(2 + dy, 2 + dx)
        assert region_j(a0, b0) == pytest.approx(region_j(a1, b1))
        assert contour_f(a0, b0, 1) == pytest.approx(contour_f(a1, b1, 1))
