"""Tests for woody-mask production: height/NDVI thresholding and fusion."""

import json
import math
from datetime import date

import numpy as np
import pytest

from linwood.maskproc import (
    DEFAULT_HEIGHT_THRESHOLD,
    LEAF_ON_WINDOWS,
    N_BINS,
    NDVI_CLIP,
    VEG_BOUNDARY_NDVI,
    Histogram,
    PeakSet,
    ThresholdDecision,
    TileMeta,
    build_woody_mask,
    chm_mask,
    detect_threshold,
    find_peaks,
    height_mask,
    histogram_ndvi,
    leaf_on,
    ndsm,
    ndvi,
)
from linwood.maskproc import _attempt_decision
from linwood.raster import RasterGrid

from oracles import find_peaks_reference

BIN_WIDTH = (NDVI_CLIP[1] - NDVI_CLIP[0]) / N_BINS


def fgrid(a, band="height_f32", **kw):
    return RasterGrid(np.asarray(a, dtype=np.float32), band=band, **kw)


def mgrid(a, **kw):
    return RasterGrid(np.asarray(a, dtype=np.uint8), band="mask8", **kw)


def make_hist(counts):
    edges = np.linspace(*NDVI_CLIP, N_BINS + 1)
    c = np.zeros(N_BINS, dtype=np.int64)
    c[: len(counts)] = counts
    return Histogram(bin_edges=edges, counts=c)


# ---------------------------------------------------------------------------
# elementary raster operations


class TestNdsm:
    def test_subtraction(self):
        out = ndsm(fgrid([[10.5]]), fgrid([[8.0]]))
        assert out.data[0, 0] == pytest.approx(2.5)
        assert out.band == "height_f32"

    def test_identical_surfaces_give_zero(self):
        g = fgrid(np.random.default_rng(0).uniform(0, 50, (16, 16)))
        assert not ndsm(g, g).data.any()

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0, 300, (9, 7)).astype(np.float32)
        b = rng.uniform(0, 300, (9, 7)).astype(np.float32)
        out = ndsm(fgrid(a), fgrid(b)).data
        for i in range(9):
            for j in range(7):
                assert out[i, j] == np.float32(a[i, j]) - np.float32(b[i, j])

    def test_rejects_misaligned_grids(self):
        with pytest.raises(ValueError, match="shape"):
            ndsm(fgrid(np.zeros((4, 4))), fgrid(np.zeros((4, 5))))
        with pytest.raises(ValueError, match="origin"):
            ndsm(fgrid(np.zeros((4, 4))), fgrid(np.zeros((4, 4)), origin_x=1.0))


class TestHeightMask:
    def test_boundary_is_inclusive(self):
        out = height_mask(fgrid([[1.99, 2.0, 2.01]]))
        assert out.data.tolist() == [[0, 1, 1]]

    def test_all_zero_surface_gives_empty_mask(self):
        assert not height_mask(fgrid(np.zeros((8, 8)))).data.any()

    def test_minus_infinity_threshold_gives_full_mask(self):
        out = height_mask(fgrid(np.zeros((5, 5))), threshold=-math.inf)
        assert out.data.all()

    def test_default_threshold_is_two_meters(self):
        assert DEFAULT_HEIGHT_THRESHOLD == 2.0


class TestChmMask:
    def test_boundary_behavior_per_threshold(self):
        chm = fgrid([[0.99, 1.0, 1.99, 2.0]])
        assert chm_mask(chm, 1.0).data.tolist() == [[0, 1, 1, 1]]
        assert chm_mask(chm, 2.0).data.tolist() == [[0, 0, 0, 1]]


class TestNdvi:
    def test_equal_bands_give_zero(self):
        out = ndvi(fgrid([[0.4]], "index_f32"), fgrid([[0.4]], "index_f32"))
        assert out.data[0, 0] == 0.0

    def test_zero_red_gives_one(self):
        out = ndvi(fgrid([[0.0]], "index_f32"), fgrid([[0.8]], "index_f32"))
        assert out.data[0, 0] == pytest.approx(1.0)

    def test_worked_value(self):
        out = ndvi(fgrid([[0.6]], "index_f32"), fgrid([[0.2]], "index_f32"))
        assert out.data[0, 0] == pytest.approx(-0.5)

    def test_zero_denominator_yields_zero(self):
        out = ndvi(fgrid([[0.0]], "index_f32"), fgrid([[0.0]], "index_f32"))
        assert out.data[0, 0] == 0.0
        assert np.isfinite(out.data).all()


# ---------------------------------------------------------------------------
# histogramming


class TestHistogram:
    def test_bin_width(self):
        hist = histogram_ndvi(np.array([0.0]))
        widths = np.diff(hist.bin_edges)
        assert widths == pytest.approx(np.full(N_BINS, 1.5 / 255))

    def test_empty_sample_mask_gives_zero_counts(self):
        vals = fgrid(np.random.default_rng(0).uniform(-1, 1, (8, 8)), "index_f32")
        hist = histogram_ndvi(vals, mgrid(np.zeros((8, 8))))
        assert hist.n_samples == 0
        assert not hist.counts.any()

    def test_counts_sum_to_sample_size_despite_clipping(self):
        rng = np.random.default_rng(2)
        vals = rng.uniform(-3.0, 3.0, 10_000)  # many values outside the clip range
        hist = histogram_ndvi(vals)
        assert hist.n_samples == 10_000

    def test_out_of_range_values_land_in_end_bins(self):
        hist = histogram_ndvi(np.array([-2.0, -0.5, 1.0, 3.5]))
        assert hist.counts[0] == 2
        assert hist.counts[-1] == 2

    def test_mask_sampling_selects_exactly_masked_pixels(self):
        vals = np.arange(16, dtype=np.float32).reshape(4, 4) / 16.0
        mask = np.zeros((4, 4), dtype=np.uint8)
        mask[1, 2] = mask[3, 3] = 1
        hist = histogram_ndvi(fgrid(vals, "index_f32"), mgrid(mask))
        assert hist.n_samples == 2
        direct = histogram_ndvi(np.array([vals[1, 2], vals[3, 3]]))
        assert np.array_equal(hist.counts, direct.counts)

    def test_uniform_values_are_flat_within_multinomial_tolerance(self):
        rng = np.random.default_rng(3)
        n = 500_000
        hist = histogram_ndvi(rng.uniform(*NDVI_CLIP, n))
        expected = n / N_BINS
        sigma = math.sqrt(n * (1 / N_BINS) * (1 - 1 / N_BINS))
        assert np.abs(hist.counts - expected).max() < 6 * sigma

    def test_rejects_non_finite_values(self):
        with pytest.raises(ValueError, match="finite"):
            histogram_ndvi(np.array([0.1, math.nan]))

    def test_invariant_validation(self):
        with pytest.raises(ValueError, match="counts"):
            Histogram(
                bin_edges=np.linspace(*NDVI_CLIP, N_BINS + 1),
                counts=np.zeros(10, dtype=np.int64),
            )


# ---------------------------------------------------------------------------
# peak finding


class TestFindPeaks:
    def test_worked_example(self):
        counts = [1, 8, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 9, 1]
        ps = find_peaks(make_hist(counts))
        assert [p.index for p in ps.peaks] == [1, 12]
        assert [p.prominence for p in ps.peaks] == [7.0, 8.0]
        assert all(p.prominence >= 1.6 for p in ps.peaks)

    def test_monotone_counts_have_no_peaks(self):
        assert len(find_peaks(make_hist(np.arange(255)))) == 0
        assert len(find_peaks(make_hist(np.arange(255)[::-1]))) == 0

    def test_close_peaks_keep_only_the_taller(self):
        counts = np.ones(255)
        counts[100] = 50
        counts[105] = 80  # 5 bins away: below the 10-bin separation
        ps = find_peaks(make_hist(counts))
        assert [p.index for p in ps.peaks] == [105]

    def test_surviving_peaks_separated_by_ten_bins(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            counts = rng.integers(0, 1000, N_BINS)
            ps = find_peaks(make_hist(counts))
            idx = sorted(p.index for p in ps.peaks)
            assert all(b - a >= 10 for a, b in zip(idx, idx[1:]))

    def test_prominences_reach_relative_floor(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            counts = rng.integers(0, 1000, N_BINS)
            floor = 0.2 * (counts.max() - counts.min())
            for p in find_peaks(make_hist(counts)).peaks:
                assert p.prominence >= floor

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            smooth = rng.integers(0, 60)
            counts = rng.integers(0, 1000, N_BINS).astype(np.float64)
            if smooth:
                k = np.ones(5) / 5
                counts = np.convolve(counts, k, mode="same")
            counts = np.round(counts).astype(np.int64)
            floor = 0.2 * (counts.max() - counts.min())
            want_idx, want_prom = find_peaks_reference(counts, 10, floor)
            got = find_peaks(make_hist(counts)).peaks
            assert [p.index for p in got] == want_idx.tolist()
            assert [p.prominence for p in got] == pytest.approx(want_prom)

    def test_flat_histogram_is_peakless(self):
        assert len(find_peaks(make_hist(np.full(255, 7)))) == 0
        assert len(find_peaks(make_hist(np.zeros(255)))) == 0

    def test_vegetation_partition_boundary(self):
        hist = make_hist(np.ones(255))
        centers = hist.centers
        below = int(np.searchsorted(centers, VEG_BOUNDARY_NDVI) - 1)
        above = below + 2
        from linwood.maskproc import Peak

        ps = PeakSet(
            peaks=(
                Peak(below, float(centers[below]), 5.0, 5.0),
                Peak(above, float(centers[above]), 5.0, 5.0),
            )
        )
        assert [p.index for p in ps.non_vegetation] == [below]
        assert [p.index for p in ps.vegetation] == [above]


# ---------------------------------------------------------------------------
# threshold decisions


def bimodal_sample(rng, lo_mode=-0.1, hi_mode=0.6, n_lo=40_000, n_hi=60_000):
    return np.concatenate(
        [rng.normal(lo_mode, 0.05, n_lo), rng.normal(hi_mode, 0.1, n_hi)]
    )


class TestDetectThreshold:
    def test_bimodal_valley_near_the_true_minimum(self):
        rng = np.random.default_rng(7)
        vals = bimodal_sample(rng)
        d = _attempt_decision(vals, "height-masked")
        assert d.kind == "valley"
        lo, hi = d.bounds
        assert lo < d.threshold < hi
        # true inter-mode minimum of this mixture is near 0.1; the detected
        # valley must fall within 2 bins of the empirical minimum-count bin
        hist = histogram_ndvi(vals)
        lo_bin = int(np.digitize(0.0, hist.bin_edges)) - 1
        hi_bin = int(np.digitize(0.45, hist.bin_edges)) - 1
        region = hist.counts[lo_bin:hi_bin]
        true_bin = lo_bin + int(np.argmin(region))
        got_bin = int(np.digitize(d.threshold, hist.bin_edges)) - 1
        assert abs(got_bin - true_bin) <= 2

    def test_unimodal_gives_exact_third_percentile(self):
        rng = np.random.default_rng(8)
        vals = rng.normal(0.6, 0.1, 50_000)
        d = _attempt_decision(vals, "full-raster")
        assert d.kind == "percentile3"
        want = float(np.percentile(np.clip(vals, *NDVI_CLIP), 3.0))
        assert d.threshold == pytest.approx(want, abs=1e-12)

    def test_degenerate_values_give_none(self):
        vals = fgrid(np.full((32, 32), -0.3), "index_f32")
        hm = mgrid(np.ones((32, 32)))
        d = detect_threshold(vals, hm)
        assert d.kind == "none"
        assert d.threshold is None
        assert d.sample_pass == "full-raster"

    def test_empty_height_mask_falls_through_to_full_pass(self):
        rng = np.random.default_rng(9)
        vals = fgrid(
            bimodal_sample(rng, n_lo=500, n_hi=524).reshape(32, 32), "index_f32"
        )
        d = detect_threshold(vals, mgrid(np.zeros((32, 32))))
        assert d.sample_pass == "full-raster"
        assert d.kind in ("valley", "percentile3")

    def test_masked_pass_takes_precedence(self):
        rng = np.random.default_rng(10)
        data = np.full((64, 64), -0.3, dtype=np.float32)
        tall = rng.normal(0.6, 0.05, 2048)
        data[:32].flat = tall
        vals = fgrid(data, "index_f32")
        hm = np.zeros((64, 64), dtype=np.uint8)
        hm[:32] = 1
        d = detect_threshold(vals, mgrid(hm))
        assert d.sample_pass == "height-masked"
        assert d.kind == "percentile3"

    def test_count_scaling_leaves_peaks_and_kind_unchanged(self):
        rng = np.random.default_rng(11)
        vals = bimodal_sample(rng, n_lo=2_000, n_hi=3_000)
        scaled = np.tile(vals, 5)  # multiplies every histogram count by 5
        base = _attempt_decision(vals, "height-masked")
        big = _attempt_decision(scaled, "height-masked")
        assert base.kind == big.kind == "valley"
        assert base.threshold == big.threshold
        idx = [p.index for p in find_peaks(histogram_ndvi(vals)).peaks]
        idx5 = [p.index for p in find_peaks(histogram_ndvi(scaled)).peaks]
        assert idx == idx5

    def test_valley_tie_breaks_to_leftmost_bin(self):
        counts = np.ones(255, dtype=np.int64) * 2
        counts[40] = 100  # non-vegetation peak (center < 0.13)
        counts[140] = 100  # vegetation peak
        counts[60] = 1
        counts[80] = 1  # tied minimum: the leftmost bin must win
        edges = np.linspace(*NDVI_CLIP, N_BINS + 1)
        hist = Histogram(bin_edges=edges, counts=counts)
        # route through the decision logic by synthesizing matching values
        centers = hist.centers
        vals = np.repeat(centers, counts)
        d = _attempt_decision(vals, "height-masked")
        assert d.kind == "valley"
        assert d.threshold == pytest.approx(centers[60])

    def test_decision_validation(self):
        with pytest.raises(ValueError, match="kind"):
            ThresholdDecision("weird", 0.1, "full-raster")
        with pytest.raises(ValueError, match="threshold"):
            ThresholdDecision("none", 0.1, "full-raster")
        with pytest.raises(ValueError, match="strictly"):
            ThresholdDecision("valley", 0.9, "full-raster", bounds=(0.1, 0.5))

    def test_decision_json_contract(self):
        d = ThresholdDecision("percentile3", 0.25, "height-masked")
        assert d.to_json_dict() == {
            "kind": "percentile3",
            "threshold": 0.25,
            "pass": "height-masked",
        }


# ---------------------------------------------------------------------------
# leaf-on gating


class TestLeafOn:
    def test_single_june_date(self):
        assert leaf_on(TileMeta((date(2021, 6, 1),)))

    def test_two_dates_fail_even_inside_window(self):
        assert not leaf_on(TileMeta((date(2021, 6, 1), date(2021, 6, 20))))

    def test_single_october_date(self):
        assert not leaf_on(TileMeta((date(2021, 10, 1),)))

    def test_window_bounds_inclusive(self):
        assert leaf_on(TileMeta((date(2021, 5, 15),)))
        assert leaf_on(TileMeta((date(2021, 9, 15),)))
        assert not leaf_on(TileMeta((date(2021, 5, 14),)))
        assert not leaf_on(TileMeta((date(2021, 9, 16),)))

    def test_extended_window(self):
        meta = TileMeta((date(2021, 4, 20),), LEAF_ON_WINDOWS["extended"])
        assert leaf_on(meta)
        assert not leaf_on(TileMeta((date(2021, 4, 20),)))

    def test_no_dates(self):
        assert not leaf_on(TileMeta(()))

    def test_meta_validation_and_json(self):
        with pytest.raises(ValueError, match="window"):
            TileMeta((date(2021, 6, 1),), ("09-15", "05-15"))
        with pytest.raises(ValueError, match="month-day"):
            TileMeta((date(2021, 6, 1),), ("2021-05-15", "09-15"))
        with pytest.raises(ValueError, match="date"):
            TileMeta(("2021-06-01",))
        meta = TileMeta((date(2021, 6, 1), date(2020, 8, 2)))
        again = TileMeta.from_json(meta.to_json())
        assert again == meta
        doc = json.loads(meta.to_json())
        assert doc["acquisition_dates"] == ["2021-06-01", "2020-08-02"]


# ---------------------------------------------------------------------------
# mask fusion


class TestBuildWoodyMask:
    NONE = ThresholdDecision("none", None, "full-raster")

    def test_buildings_everywhere_give_empty_mask(self):
        hm = mgrid(np.ones((8, 8)))
        bm = mgrid(np.ones((8, 8)))
        assert not build_woody_mask(hm, bm, self.NONE).data.any()

    def test_none_branch_is_height_and_not_building(self):
        rng = np.random.default_rng(12)
        hm = rng.integers(0, 2, (32, 32)).astype(np.uint8)
        bm = rng.integers(0, 2, (32, 32)).astype(np.uint8)
        out = build_woody_mask(mgrid(hm), mgrid(bm), self.NONE).data
        for i in range(32):
            for j in range(32):
                assert out[i, j] == (1 if hm[i, j] == 1 and bm[i, j] == 0 else 0)

    def test_threshold_branch_excludes_low_ndvi(self):
        d = ThresholdDecision("percentile3", 0.3, "height-masked")
        hm = mgrid(np.ones((1, 3)))
        bm = mgrid(np.zeros((1, 3)))
        nd = fgrid([[0.2, 0.3, 0.8]], "index_f32")
        out = build_woody_mask(hm, bm, d, nd).data
        assert out.tolist() == [[0, 1, 1]]  # >= convention at the threshold

    def test_threshold_branch_requires_ndvi(self):
        d = ThresholdDecision("percentile3", 0.3, "height-masked")
        with pytest.raises(ValueError, match="NDVI"):
            build_woody_mask(mgrid(np.ones((2, 2))), mgrid(np.zeros((2, 2))), d)

    def test_output_subset_and_building_disjoint(self):
        rng = np.random.default_rng(13)
        d = ThresholdDecision("valley", 0.2, "height-masked", bounds=(0.0, 0.5))
        for _ in range(200):
            hm = rng.integers(0, 2, (16, 16)).astype(np.uint8)
            bm = rng.integers(0, 2, (16, 16)).astype(np.uint8)
            nd = fgrid(rng.uniform(-0.5, 1.0, (16, 16)), "index_f32")
            out = build_woody_mask(mgrid(hm), mgrid(bm), d, nd).data
            assert not (out & ~hm).any()  # subset of the height mask
            assert not (out & bm).any()  # disjoint from buildings

    def test_ndvi_masking_never_adds_pixels(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            hm = mgrid(rng.integers(0, 2, (16, 16)).astype(np.uint8))
            bm = mgrid(rng.integers(0, 2, (16, 16)).astype(np.uint8))
            nd = fgrid(rng.uniform(-0.5, 1.0, (16, 16)), "index_f32")
            base = build_woody_mask(hm, bm, self.NONE).data
            d = ThresholdDecision("percentile3", float(rng.uniform(-0.4, 0.9)),
                                  "height-masked")
            tight = build_woody_mask(hm, bm, d, nd).data
            assert not (tight & ~base).any()
