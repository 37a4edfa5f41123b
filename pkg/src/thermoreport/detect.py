"""Feature-map standardization, thresholding, and region labeling.

Each modality map is standardized to z-scores over the ROI, thresholded
into a binary mask (percentile thresholds for magnitude-like maps,
z-score thresholds for the cooling-slope map), cleaned of small
components and border artifacts, and labeled into connected regions
with per-region statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import InputError, ZeroVarianceError

__all__ = [
    "Modality",
    "FeatureMap",
    "Region",
    "AnomalyMask",
    "DetectConfig",
    "standardize",
    "threshold_percentile",
    "threshold_z",
    "label_regions",
    "filter_small",
    "suppress_border",
    "mask_area_percent",
    "mask_to_rle",
    "rle_to_mask",
]


class Modality(str, Enum):
    """Tags identifying which transform produced a map or mask."""

    PCT_COMPONENT = "pct_component"
    PCT_MAG = "pct_mag"
    TSR_SLOPE = "tsr_slope"
    TSR_LOGAMP = "tsr_logamp"
    TSR_RESIDUAL = "tsr_residual"
    PPT_AMP = "ppt_amp"
    PPT_PHASE = "ppt_phase"
    PPT_PHASE_EDGE = "ppt_phase_edge"
    CONSENSUS_SCORE = "consensus_score"
    CONSENSUS = "consensus"
    GROUND_TRUTH = "ground_truth"


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Single-channel 2-D map with a modality tag and validity flags.

    ``values`` holds finite reals except at flagged-invalid pixels;
    ``standardized`` records whether values are z-scores over the
    valid pixels.
    """

    values: np.ndarray
    modality: Modality
    standardized: bool = False
    valid: np.ndarray | None = None

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InputError(f"feature map must be 2-D, got shape {v.shape}")
        object.__setattr__(self, "values", _freeze(v))
        if self.valid is None:
            object.__setattr__(self, "valid", _freeze(np.ones(v.shape, dtype=bool)))
        else:
            m = np.array(self.valid, dtype=bool)
            if m.shape != v.shape:
                raise InputError("valid mask shape does not match values")
            object.__setattr__(self, "valid", _freeze(m))
        if not np.all(np.isfinite(v[self.valid])):
            raise InputError("feature map has non-finite values at valid pixels")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Region:
    """Connected component of an anomaly mask with summary statistics."""

    label: int
    area: int
    bbox: tuple[int, int, int, int]  # (x0, y0, w, h)
    centroid: tuple[float, float]  # (x, y), sub-pixel
    mean_z: float


@dataclass(frozen=True, eq=False)
class AnomalyMask:
    """Binary anomaly mask with optional labeled regions.

    ``zmap`` carries the (standardized) map the mask was thresholded
    from so region statistics can report mean z-scores; ``n_valid`` is
    the valid-pixel count used as the denominator for area percentages.
    """

    bits: np.ndarray
    source: Modality
    regions: tuple[Region, ...] = ()
    labeled: bool = False
    zmap: np.ndarray | None = None
    n_valid: int | None = None

    def __post_init__(self) -> None:
        b = np.array(self.bits, dtype=bool)
        if b.ndim != 2:
            raise InputError(f"mask must be 2-D, got shape {b.shape}")
        object.__setattr__(self, "bits", _freeze(b))
        if self.zmap is not None:
            z = np.array(self.zmap, dtype=np.float64)
            if z.shape != b.shape:
                raise InputError("zmap shape does not match mask")
            object.__setattr__(self, "zmap", _freeze(z))
        if self.n_valid is None:
            object.__setattr__(self, "n_valid", int(b.size))
        elif not (1 <= self.n_valid <= b.size):
            raise InputError("n_valid out of range")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class DetectConfig:
    """Thresholding and cleanup parameters.

    ``min_area`` and ``border_margin`` default to None, meaning they are
    resolved from the ROI shape: 0.05% of the ROI area (floor 8 px) and
    2% of the smaller ROI dimension (floor 2 px) respectively.
    """

    pct_percentile: float = 99.0
    ppt_amp_percentile: float = 99.0
    phase_edge_percentile: float = 95.0
    tsr_slope_z: float = 2.0
    min_area: int | None = None
    border_margin: int | None = None
    connectivity: int = 8

    def __post_init__(self) -> None:
        for name in ("pct_percentile", "ppt_amp_percentile", "phase_edge_percentile"):
            p = getattr(self, name)
            if not 50.0 < p < 100.0:
                raise InputError(f"{name} must be in (50, 100), got {p}")
        if self.tsr_slope_z <= 0:
            raise InputError("tsr_slope_z must be positive")
        if self.min_area is not None and self.min_area < 1:
            raise InputError("min_area must be >= 1")
        if self.border_margin is not None and self.border_margin < 0:
            raise InputError("border_margin must be >= 0")
        if self.connectivity not in (4, 8):
            raise InputError("connectivity must be 4 or 8")

    def min_area_for(self, height: int, width: int) -> int:
        if self.min_area is not None:
            return self.min_area
        return max(8, round(0.0005 * height * width))

    def border_margin_for(self, height: int, width: int) -> int:
        if self.border_margin is not None:
            return self.border_margin
        return max(2, round(0.02 * min(height, width)))


# ---------------------------------------------------------------------------
# standardization and thresholding
# ---------------------------------------------------------------------------

def standardize(fmap: FeatureMap) -> FeatureMap:
    """Center and scale a map to zero mean, unit (population) deviation.

    Statistics are taken over valid pixels only; invalid pixels keep
    their values and stay invalid.  Raises ZeroVarianceError for a
    constant map (the pipeline treats that modality as anomaly-free).
    """
    vals = fmap.values[fmap.valid]
    if vals.size < 2:
        raise InputError("standardize needs at least 2 valid pixels")
    mu = float(vals.mean())
    sigma = float(vals.std())
    if sigma == 0.0 or not np.isfinite(sigma):
        raise ZeroVarianceError(
            f"map {fmap.modality.value} has zero variance over valid pixels"
        )
    out = np.where(fmap.valid, (fmap.values - mu) / sigma, fmap.values)
    return FeatureMap(out, fmap.modality, standardized=True, valid=fmap.valid)


def threshold_percentile(fmap: FeatureMap, p: float, side: str = "upper") -> AnomalyMask:
    """Mask pixels in the (100 - p)% tail of the valid-pixel distribution.

    The cut point is the p-th percentile computed by linear interpolation
    on the sorted valid sample; exceedance is strict, so a constant map
    yields an empty mask.
    """
    if not 50.0 < p < 100.0:
        raise InputError(f"percentile must be in (50, 100), got {p}")
    if side not in ("upper", "lower"):
        raise InputError(f"side must be 'upper' or 'lower', got {side!r}")
    vals = fmap.values[fmap.valid]
    if vals.size < 10:
        raise InputError("threshold_percentile needs at least 10 valid pixels")
    if side == "upper":
        cut = np.percentile(vals, p)
        bits = (fmap.values > cut) & fmap.valid
    else:
        cut = np.percentile(vals, 100.0 - p)
        bits = (fmap.values < cut) & fmap.valid
    return AnomalyMask(
        bits, fmap.modality, zmap=fmap.values, n_valid=int(np.count_nonzero(fmap.valid))
    )


def threshold_z(fmap: FeatureMap, z: float, mode: str = "two_sided") -> AnomalyMask:
    """Mask pixels whose z-score exceeds ``z`` (|v| >= z for two_sided)."""
    if not fmap.standardized:
        raise InputError("threshold_z requires a standardized map")
    if mode == "two_sided":
        bits = np.abs(fmap.values) >= z
    elif mode == "upper":
        bits = fmap.values >= z
    elif mode == "lower":
        bits = fmap.values <= -z
    else:
        raise InputError(f"unknown threshold mode {mode!r}")
    bits = bits & fmap.valid
    return AnomalyMask(
        bits, fmap.modality, zmap=fmap.values, n_valid=int(np.count_nonzero(fmap.valid))
    )


# ---------------------------------------------------------------------------
# connected components
# ---------------------------------------------------------------------------

_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


def _region_stats(
    labels: np.ndarray, n_labels: int, zmap: np.ndarray | None
) -> tuple[Region, ...]:
    """Build Region records, relabeled in raster order of first pixel."""
    if n_labels == 0:
        return ()
    flat = labels.ravel()
    # first raster index per label fixes the deterministic ordering
    first_idx = np.full(n_labels + 1, flat.size, dtype=np.int64)
    occupied = np.flatnonzero(flat)
    np.minimum.at(first_idx, flat[occupied], occupied)
    order = np.argsort(first_idx[1:], kind="stable")  # old label - 1, raster order
    regions = []
    ys, xs = np.nonzero(labels)
    lab_at = labels[ys, xs]
    for new_label, old_minus1 in enumerate(order, start=1):
        old = int(old_minus1) + 1
        sel = lab_at == old
        rys, rxs = ys[sel], xs[sel]
        x0, y0 = int(rxs.min()), int(rys.min())
        w = int(rxs.max()) - x0 + 1
        h = int(rys.max()) - y0 + 1
        mean_z = float(zmap[rys, rxs].mean()) if zmap is not None else 0.0
        regions.append(
            Region(
                label=new_label,
                area=int(sel.sum()),
                bbox=(x0, y0, w, h),
                centroid=(float(rxs.mean()), float(rys.mean())),
                mean_z=mean_z,
            )
        )
    return tuple(regions)


def label_regions(mask: AnomalyMask, connectivity: int = 8) -> AnomalyMask:
    """Populate ``regions`` with connected components of the true set.

    Labels are assigned in raster-scan order of each region's first
    pixel, so outputs are deterministic and stable across runs.
    """
    if connectivity not in (4, 8):
        raise InputError("connectivity must be 4 or 8")
    structure = _STRUCTURE_8 if connectivity == 8 else _STRUCTURE_4
    labels, n = ndimage.label(mask.bits, structure=structure)
    regions = _region_stats(labels, n, mask.zmap)
    return replace(mask, regions=regions, labeled=True)


def filter_small(mask: AnomalyMask, min_area: int, connectivity: int = 8) -> AnomalyMask:
    """Drop regions with area < min_area; clears their bits and relabels."""
    if not mask.labeled:
        raise InputError("filter_small requires a labeled mask")
    if min_area <= 1:
        return mask
    structure = _STRUCTURE_8 if connectivity == 8 else _STRUCTURE_4
    labels, n = ndimage.label(mask.bits, structure=structure)
    if n == 0:
        return mask
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    good = areas >= min_area
    good[0] = False
    if good[1:].all():
        return mask
    out = AnomalyMask(good[labels], mask.source, zmap=mask.zmap, n_valid=mask.n_valid)
    return label_regions(out, connectivity)


def suppress_border(
    mask: AnomalyMask, margin: int, min_area: int = 1, connectivity: int = 8
) -> AnomalyMask:
    """Clear true pixels within ``margin`` of any ROI edge, then relabel
    and re-apply the minimum-area filter."""
    h, w = mask.bits.shape
    if margin < 0 or margin >= min(h, w) / 2:
        raise InputError(f"border margin {margin} too large for {w}x{h} mask")
    if margin == 0 and min_area <= 1 and mask.labeled:
        return mask
    bits = mask.bits.copy()
    if margin > 0:
        bits[:margin, :] = False
        bits[-margin:, :] = False
        bits[:, :margin] = False
        bits[:, -margin:] = False
    out = AnomalyMask(bits, mask.source, zmap=mask.zmap, n_valid=mask.n_valid)
    out = label_regions(out, connectivity)
    return filter_small(out, min_area, connectivity)


def mask_area_percent(mask: AnomalyMask) -> float:
    """True-pixel percentage of the valid ROI, rounded to 2 decimals."""
    return round(100.0 * int(np.count_nonzero(mask.bits)) / mask.n_valid, 2)


# ---------------------------------------------------------------------------
# run-length mask serialization
# ---------------------------------------------------------------------------

def mask_to_rle(mask: AnomalyMask) -> dict:
    """Encode mask bits as row-major run lengths, first run counts zeros."""
    flat = mask.bits.ravel().astype(np.int8)
    if flat.size == 0:
        return {"w": mask.width, "h": mask.height, "rle": []}
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:  # encoding always starts with the zero-run (may be 0)
        runs = [0] + runs
    return {"w": mask.width, "h": mask.height, "rle": [int(r) for r in runs]}


def rle_to_mask(payload: dict, source: Modality = Modality.CONSENSUS) -> AnomalyMask:
    """Inverse of mask_to_rle."""
    w, h = int(payload["w"]), int(payload["h"])
    runs = payload["rle"]
    if sum(runs) != w * h and not (w * h == 0 and not runs):
        raise InputError("run lengths do not cover the mask")
    flat = np.zeros(w * h, dtype=bool)
    pos = 0
    val = False
    for run in runs:
        if val:
            flat[pos : pos + run] = True
        pos += run
        val = not val
    return AnomalyMask(flat.reshape(h, w), source)
