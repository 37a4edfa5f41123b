import json

import numpy as np
import pytest

from thermoreport.detect import (
    AnomalyMask,
    DetectConfig,
    Modality,
    label_regions,
    mask_area_percent,
)
from thermoreport.fusion import (
    MetricsRecord,
    dice,
    fuse_consensus,
    precision_recall,
    select_representative_pc,
    summarize,
)
from thermoreport.preprocess import PulseTiming


CFG = DetectConfig(min_area=1)


def mask_of(bits, source=Modality.TSR_SLOPE):
    return label_regions(AnomalyMask(np.asarray(bits, dtype=bool), source), 8)


def blob(h, w, y0, y1, x0, x1):
    bits = np.zeros((h, w), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return bits


class TestFuseConsensus:
    def test_identical_masks_preserved(self):
        bits = blob(20, 20, 5, 9, 5, 9)
        out = fuse_consensus(mask_of(bits), mask_of(bits, Modality.PPT_PHASE_EDGE), CFG)
        assert np.array_equal(out.mask.bits, bits)
        assert out.region_count == 1

    def test_disjoint_masks_empty(self):
        a = mask_of(blob(20, 20, 2, 4, 2, 4))
        b = mask_of(blob(20, 20, 14, 16, 14, 16), Modality.PPT_PHASE_EDGE)
        out = fuse_consensus(a, b, CFG)
        assert not out.mask.bits.any()
        assert out.region_count == 0

    def test_one_pixel_slop_tolerated(self):
        a = mask_of(blob(20, 20, 5, 8, 5, 8))
        b = mask_of(blob(20, 20, 6, 9, 6, 9), Modality.PPT_PHASE_EDGE)
        out = fuse_consensus(a, b, CFG, dilation_r=1)
        assert out.mask.bits.any()
        strict = fuse_consensus(a, b, CFG, dilation_r=0)
        # r=0 is the plain intersection
        assert np.array_equal(strict.mask.bits, a.bits & b.bits)

    def test_matches_neighborhood_scan_oracle(self, rng):
        for trial in range(15):
            a_bits = rng.random((18, 18)) < 0.2
            b_bits = rng.random((18, 18)) < 0.2
            r = 1
            out = fuse_consensus(
                mask_of(a_bits), mask_of(b_bits, Modality.PPT_PHASE_EDGE), CFG, dilation_r=r
            )
            h, w = a_bits.shape
            expected = np.zeros_like(a_bits)
            for y in range(h):
                for x in range(w):
                    near_a = any(
                        a_bits[yy, xx]
                        for yy in range(max(0, y - r), min(h, y + r + 1))
                        for xx in range(max(0, x - r), min(w, x + r + 1))
                    )
                    near_b = any(
                        b_bits[yy, xx]
                        for yy in range(max(0, y - r), min(h, y + r + 1))
                        for xx in range(max(0, x - r), min(w, x + r + 1))
                    )
                    expected[y, x] = (a_bits[y, x] and near_b) or (b_bits[y, x] and near_a)
            assert np.array_equal(out.mask.bits, expected)

    def test_symmetry(self, rng):
        a_bits = rng.random((16, 16)) < 0.25
        b_bits = rng.random((16, 16)) < 0.25
        ab = fuse_consensus(mask_of(a_bits), mask_of(b_bits, Modality.PPT_PHASE_EDGE), CFG)
        ba = fuse_consensus(mask_of(b_bits, Modality.PPT_PHASE_EDGE), mask_of(a_bits), CFG)
        assert np.array_equal(ab.mask.bits, ba.mask.bits)

    def test_subset_of_union(self, rng):
        a_bits = rng.random((16, 16)) < 0.3
        b_bits = rng.random((16, 16)) < 0.3
        out = fuse_consensus(mask_of(a_bits), mask_of(b_bits, Modality.PPT_PHASE_EDGE), CFG)
        assert np.all(~out.mask.bits | (a_bits | b_bits))

    def test_within_dilation_of_each_input(self, rng):
        from scipy import ndimage

        a_bits = rng.random((16, 16)) < 0.3
        b_bits = rng.random((16, 16)) < 0.3
        out = fuse_consensus(mask_of(a_bits), mask_of(b_bits, Modality.PPT_PHASE_EDGE),
                             CFG, dilation_r=1)
        structure = np.ones((3, 3), dtype=bool)
        for bits in (a_bits, b_bits):
            dilated = ndimage.binary_dilation(bits, structure=structure)
            assert np.all(~out.mask.bits | dilated)

    def test_dimension_mismatch(self):
        a = mask_of(np.zeros((8, 8), dtype=bool))
        b = mask_of(np.zeros((9, 9), dtype=bool), Modality.PPT_PHASE_EDGE)
        with pytest.raises(Exception):
            fuse_consensus(a, b, CFG)

    def test_min_area_applied(self):
        bits = np.zeros((40, 40), dtype=bool)
        bits[3, 3] = True  # single shared pixel
        bits2 = bits.copy()
        cfg = DetectConfig(min_area=8)
        out = fuse_consensus(mask_of(bits), mask_of(bits2, Modality.PPT_PHASE_EDGE), cfg)
        assert not out.mask.bits.any()


class TestSummarize:
    def test_full_record_serialization(self):
        record = MetricsRecord(
            modality_areas={
                "pct_mag": 1.00,
                "tsr_slope": 5.68,
                "ppt_amp": 1.00,
                "ppt_phase_edge": 5.00,
            },
            consensus_area_percent=8.84,
            consensus_region_count=8,
            t0=56,
            t_peak=124,
            base_median_min=0.18,
            base_median_max=6.55,
            roi_width=100,
            roi_height=100,
        )
        blob_json = json.dumps(record.to_json_dict())
        assert '"area_percent": 8.84' in blob_json
        assert '"region_count": 8' in blob_json
        assert '"t0": 56' in blob_json
        assert '"t_peak": 124' in blob_json
        md = record.to_markdown()
        assert "| tsr_slope | 5.68 |" in md
        assert "8.84 (8 regions)" in md

    def test_pulse_and_range_serialization(self):
        record = MetricsRecord(
            modality_areas={"pct_mag": 1.00},
            consensus_area_percent=7.02,
            consensus_region_count=9,
            t0=73,
            t_peak=141,
            base_median_min=0.11,
            base_median_max=6.74,
            roi_width=100,
            roi_height=100,
        )
        d = record.to_json_dict()
        assert d["pulse"] == {"t0": 73, "t_peak": 141}
        assert d["base_median_range"] == [0.11, 6.74]

    def test_empty_masks(self):
        empty = mask_of(np.zeros((20, 20), dtype=bool))
        consensus = fuse_consensus(
            empty, mask_of(np.zeros((20, 20), dtype=bool), Modality.PPT_PHASE_EDGE), CFG
        )
        record = summarize(
            consensus,
            {Modality.PCT_MAG: empty},
            PulseTiming(10, 14),
            (0.0, 0.0),
        )
        assert record.consensus_area_percent == 0.00
        assert record.consensus_region_count == 0
        assert record.modality_areas["pct_mag"] == 0.00

    def test_fields_match_mask_oracles(self, rng):
        a_bits = rng.random((25, 25)) < 0.2
        b_bits = rng.random((25, 25)) < 0.2
        a = mask_of(a_bits)
        b = mask_of(b_bits, Modality.PPT_PHASE_EDGE)
        consensus = fuse_consensus(a, b, CFG)
        record = summarize(
            consensus,
            {Modality.TSR_SLOPE: a, Modality.PPT_PHASE_EDGE: b},
            PulseTiming(9, 12),
            (-1.5, 2.5),
        )
        assert record.modality_areas["tsr_slope"] == mask_area_percent(a)
        assert record.modality_areas["ppt_phase_edge"] == mask_area_percent(b)
        assert record.consensus_area_percent == mask_area_percent(consensus.mask)
        assert record.consensus_region_count == len(consensus.mask.regions)
        assert (record.roi_width, record.roi_height) == (25, 25)


class TestDiceHelpers:
    def test_dice_identity(self, rng):
        bits = rng.random((10, 10)) < 0.5
        assert dice(bits, bits) == 1.0

    def test_dice_disjoint(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, 0] = True
        b[3, 3] = True
        assert dice(a, b) == 0.0

    def test_precision_recall(self):
        truth = np.zeros((4, 4), dtype=bool)
        truth[:2, :2] = True
        pred = np.zeros((4, 4), dtype=bool)
        pred[:2, 0] = True
        p, r = precision_recall(pred, truth)
        assert p == 1.0
        assert r == 0.5


def pct_from_components(component_maps):
    """Assemble a PctResult-like via a rank-synthesized cube decomposition."""
    from thermoreport.detect import FeatureMap
    from thermoreport.pct import PctResult

    comps = tuple(FeatureMap(c, Modality.PCT_COMPONENT) for c in component_maps)
    return PctResult(comps, tuple(float(len(component_maps) - i) for i in range(len(component_maps))))


class TestSelectRepresentativePc:
    def consensus_blob(self, h=20, w=20):
        bits = blob(h, w, 4, 8, 4, 8)
        return fuse_consensus(
            mask_of(bits), mask_of(bits, Modality.PPT_PHASE_EDGE), CFG
        )

    def test_singleton(self, rng):
        comp = rng.normal(size=(20, 20))
        rep = select_representative_pc(pct_from_components([comp]), self.consensus_blob())
        assert rep.component == 1

    def test_perfect_overlap_wins(self, rng):
        # consensus blob sized exactly 1% of the ROI so the top-1% magnitude
        # mask of the aligned component can match it pixel for pixel
        bits = blob(20, 20, 4, 6, 4, 6)
        consensus = fuse_consensus(
            mask_of(bits), mask_of(bits, Modality.PPT_PHASE_EDGE), CFG
        )
        aligned = np.where(bits, 10.0, 0.0) + rng.normal(0, 0.01, size=bits.shape)
        elsewhere = np.roll(aligned, (9, 9), axis=(0, 1))
        rep = select_representative_pc(
            pct_from_components([elsewhere, aligned]), consensus
        )
        assert rep.component == 2
        assert rep.overlap == pytest.approx(1.0)

    def test_matches_score_table_oracle(self, rng):
        consensus = self.consensus_blob()
        comps = [rng.normal(size=(20, 20)) for _ in range(4)]
        rep = select_representative_pc(pct_from_components(comps), consensus)
        inside = consensus.mask.bits
        cnrs, overlaps = [], []
        for c in comps:
            mag = np.abs(c)
            cnr = abs(mag[inside].mean() - mag[~inside].mean()) / (mag[~inside].std() + 1e-12)
            cnrs.append(cnr)
            cut = np.percentile(mag, 99.0)
            top = mag > cut
            inter = (top & inside).sum()
            overlaps.append(2.0 * inter / (top.sum() + inside.sum()))
        scores = [0.5 * c / max(cnrs) + 0.5 * o for c, o in zip(cnrs, overlaps)]
        assert rep.component == int(np.argmax(scores)) + 1
        assert rep.score == pytest.approx(max(scores), rel=1e-12)

    def test_scale_invariance(self, rng):
        consensus = self.consensus_blob()
        comps = [rng.normal(size=(20, 20)) for _ in range(3)]
        rep1 = select_representative_pc(pct_from_components(comps), consensus)
        scaled = [c * s for c, s in zip(comps, (11.0, 0.3, 95.0))]
        rep2 = select_representative_pc(pct_from_components(scaled), consensus)
        assert rep1.component == rep2.component

    def test_sign_flip_invariance(self, rng):
        # all selection terms go through |PC|, so per-component sign flips
        # cannot change the outcome
        consensus = self.consensus_blob()
        comps = [rng.normal(size=(20, 20)) for _ in range(4)]
        rep1 = select_representative_pc(pct_from_components(comps), consensus)
        flipped = [c * f for c, f in zip(comps, (-1.0, 1.0, -1.0, -1.0))]
        rep2 = select_representative_pc(pct_from_components(flipped), consensus)
        assert (rep1.component, rep1.score) == (rep2.component, rep2.score)

    def test_empty_consensus_degrades(self, rng):
        empty = fuse_consensus(
            mask_of(np.zeros((20, 20), dtype=bool)),
            mask_of(np.zeros((20, 20), dtype=bool), Modality.PPT_PHASE_EDGE),
            CFG,
        )
        comps = [rng.normal(size=(20, 20)) for _ in range(3)]
        rep = select_representative_pc(pct_from_components(comps), empty)
        assert rep.component == 1  # all scores zero, ties break low
