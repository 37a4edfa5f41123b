"""Consensus fusion of modality masks and quantitative summaries.

The consensus keeps pixels detected by the cooling-slope mask that lie
within a small dilation radius of the phase-edge mask, and vice versa,
so regions supported by both indicators survive while 1-px registration
slop between the modality responses is tolerated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import ndimage

from .detect import (
    AnomalyMask,
    DetectConfig,
    Modality,
    filter_small,
    label_regions,
    mask_area_percent,
    threshold_percentile,
)
from .errors import InputError
from .pct import PctResult, pct_magnitude
from .preprocess import PulseTiming

__all__ = [
    "ConsensusResult",
    "RepresentativePc",
    "MetricsRecord",
    "fuse_consensus",
    "summarize",
    "select_representative_pc",
    "dice",
    "precision_recall",
]

DEFAULT_DILATION_R = 1
CNR_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class ConsensusResult:
    mask: AnomalyMask
    area_percent: float
    region_count: int
    per_modality_areas: Mapping[str, float]
    contributing: tuple[Modality, ...]


@dataclass(frozen=True)
class RepresentativePc:
    component: int
    cnr: float
    overlap: float
    score: float


@dataclass(frozen=True)
class MetricsRecord:
    """The quantitative output surface of one analysis run."""

    modality_areas: Mapping[str, float]
    consensus_area_percent: float
    consensus_region_count: int
    t0: int
    t_peak: int
    base_median_min: float
    base_median_max: float
    roi_width: int
    roi_height: int

    def to_json_dict(self) -> dict:
        return {
            "mask_area_percent": {k: round(v, 2) for k, v in sorted(self.modality_areas.items())},
            "consensus": {
                "area_percent": round(self.consensus_area_percent, 2),
                "region_count": self.consensus_region_count,
            },
            "pulse": {"t0": self.t0, "t_peak": self.t_peak},
            "base_median_range": [
                round(self.base_median_min, 2),
                round(self.base_median_max, 2),
            ],
            "roi": {"width": self.roi_width, "height": self.roi_height},
        }

    def to_markdown(self) -> str:
        lines = [
            "| Mask / Map | Area (%) |",
            "| --- | --- |",
        ]
        for key, area in sorted(self.modality_areas.items()):
            lines.append(f"| {key} | {area:.2f} |")
        lines.append(
            f"| consensus | {self.consensus_area_percent:.2f} "
            f"({self.consensus_region_count} regions) |"
        )
        lines.append("")
        lines.append(f"Pulse onset frame: {self.t0}; peak-response frame: {self.t_peak}.")
        lines.append(
            f"Base-median range: {self.base_median_min:.2f} to {self.base_median_max:.2f}."
        )
        return "\n".join(lines) + "\n"


def _dilate(bits: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return bits
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_dilation(bits, structure=structure)


def fuse_consensus(
    tsr_mask: AnomalyMask,
    phase_edge_mask: AnomalyMask,
    cfg: DetectConfig,
    dilation_r: int = DEFAULT_DILATION_R,
) -> ConsensusResult:
    """Symmetric dilated intersection of the two complementary masks.

    A pixel is consensus-true when it is true in one input and within
    `dilation_r` (Chebyshev) of a true pixel in the other, in both
    directions; r=0 degenerates to the strict intersection.  The fused
    bits are then min-area filtered and relabeled.
    """
    if tsr_mask.bits.shape != phase_edge_mask.bits.shape:
        raise InputError("consensus inputs must share dimensions")
    if dilation_r < 0:
        raise InputError("dilation radius must be >= 0")
    a, b = tsr_mask.bits, phase_edge_mask.bits
    bits = (a & _dilate(b, dilation_r)) | (b & _dilate(a, dilation_r))
    h, w = bits.shape
    fused = AnomalyMask(bits, Modality.CONSENSUS)
    fused = label_regions(fused, cfg.connectivity)
    fused = filter_small(fused, cfg.min_area_for(h, w), cfg.connectivity)
    return ConsensusResult(
        mask=fused,
        area_percent=mask_area_percent(fused),
        region_count=len(fused.regions),
        per_modality_areas={
            tsr_mask.source.value: mask_area_percent(tsr_mask),
            phase_edge_mask.source.value: mask_area_percent(phase_edge_mask),
        },
        contributing=(tsr_mask.source, phase_edge_mask.source),
    )


def summarize(
    consensus: ConsensusResult,
    all_masks: Mapping[Modality, AnomalyMask],
    timing: PulseTiming,
    base_range: tuple[float, float],
) -> MetricsRecord:
    """Collect per-modality areas, consensus stats, and pulse metadata."""
    areas = {m.value: mask_area_percent(mask) for m, mask in all_masks.items()}
    return MetricsRecord(
        modality_areas=areas,
        consensus_area_percent=consensus.area_percent,
        consensus_region_count=consensus.region_count,
        t0=timing.t0,
        t_peak=timing.t_peak,
        base_median_min=base_range[0],
        base_median_max=base_range[1],
        roi_width=consensus.mask.width,
        roi_height=consensus.mask.height,
    )


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice coefficient 2|A^B| / (|A|+|B|); 1.0 when both sets are empty."""
    na, nb = int(np.count_nonzero(a)), int(np.count_nonzero(b))
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a & b))
    return 2.0 * inter / (na + nb)


def precision_recall(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Pixel precision and recall of a predicted mask against ground truth."""
    np_pred = int(np.count_nonzero(pred))
    np_truth = int(np.count_nonzero(truth))
    inter = int(np.count_nonzero(pred & truth))
    precision = inter / np_pred if np_pred else 0.0
    recall = inter / np_truth if np_truth else 0.0
    return precision, recall


def select_representative_pc(pct: PctResult, consensus: ConsensusResult) -> RepresentativePc:
    """Pick the component combining contrast-to-noise and consensus overlap.

    Per component: CNR is the inside/outside difference of mean |PC|
    over the outside deviation; overlap is the Dice coefficient between
    the top-1% magnitude mask and the consensus mask.  The score weighs
    the max-normalized CNR and the overlap equally; ties break toward
    the lowest component index.
    """
    if pct.k < 1:
        raise InputError("need at least one component to select from")
    inside = consensus.mask.bits
    outside = ~inside
    cnrs = []
    overlaps = []
    for idx, comp in enumerate(pct.components, start=1):
        mag = np.abs(comp.values)
        if inside.any() and outside.any():
            mu_in = float(mag[inside].mean())
            mu_out = float(mag[outside].mean())
            sigma_out = float(mag[outside].std())
            cnrs.append(abs(mu_in - mu_out) / (sigma_out + CNR_EPS))
        else:
            cnrs.append(0.0)
        mag_mask = threshold_percentile(pct_magnitude(pct, idx), 99.0)
        overlaps.append(dice(mag_mask.bits, inside))
    max_cnr = max(cnrs)
    best_i, best = 0, None
    for i in range(pct.k):
        cnr_term = cnrs[i] / max_cnr if max_cnr > 0 else 0.0
        score = 0.5 * cnr_term + 0.5 * overlaps[i]
        if best is None or score > best:
            best_i, best = i, score
    return RepresentativePc(
        component=best_i + 1,
        cnr=cnrs[best_i],
        overlap=overlaps[best_i],
        score=float(best),
    )
