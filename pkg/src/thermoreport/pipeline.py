"""End-to-end analysis: preprocess, transforms, detection, fusion.

This module carries the pipeline configuration, the pure analysis pass
used by both `analyze` and `eval`, and the artifact writers.  Every
output (PNGs, JSON, cached intermediates) is byte-deterministic for
fixed inputs and configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .cube_io import OpticalImage, Roi, ThermalCube, export_map_png, png_bytes
from .detect import (
    AnomalyMask,
    DetectConfig,
    FeatureMap,
    Modality,
    filter_small,
    label_regions,
    mask_to_rle,
    standardize,
    suppress_border,
    threshold_percentile,
    threshold_z,
)
from .errors import InputError, ZeroVarianceError
from .fusion import (
    ConsensusResult,
    MetricsRecord,
    RepresentativePc,
    fuse_consensus,
    select_representative_pc,
    summarize,
)
from .pct import PctResult, pct_decompose, pct_magnitude
from .ppt import PptResult, ppt_transform
from .preprocess import (
    PreprocessConfig,
    PulseTiming,
    base_median_range,
    detect_pulse,
    repair_nonfinite,
    smooth_sg,
    subtract_baseline,
)
from .report import EndpointConfig, VlmInputSet
from .tsr import TsrResult, tsr_fit

__all__ = ["PipelineConfig", "AnalysisProducts", "load_config", "run_analysis",
           "write_products", "build_vlm_inputs"]


@dataclass(frozen=True)
class PipelineConfig:
    roi: Roi | None  # None means the full frame
    preprocess: PreprocessConfig
    pct_k: int
    tsr_degree: int
    tsr_eval_time: int | None
    ppt_bin: int
    detect: DetectConfig
    dilation_r: int
    endpoint: EndpointConfig
    output_dir: str

    def to_json_dict(self) -> dict:
        return {
            "roi": "full" if self.roi is None else {
                "x0": self.roi.x0, "y0": self.roi.y0, "w": self.roi.w, "h": self.roi.h,
            },
            "preprocess": {
                "sg_enabled": self.preprocess.sg_enabled,
                "sg_window": self.preprocess.sg_window,
                "sg_polyorder": self.preprocess.sg_polyorder,
                "mean_smooth_window": self.preprocess.mean_smooth_window,
                "onset_fraction": self.preprocess.onset_fraction,
            },
            "pct_k": self.pct_k,
            "tsr": {"degree": self.tsr_degree, "eval_time": self.tsr_eval_time},
            "ppt_bin": self.ppt_bin,
            "detect": {
                "pct_percentile": self.detect.pct_percentile,
                "ppt_amp_percentile": self.detect.ppt_amp_percentile,
                "phase_edge_percentile": self.detect.phase_edge_percentile,
                "tsr_slope_z": self.detect.tsr_slope_z,
                "min_area": self.detect.min_area,
                "border_margin": self.detect.border_margin,
                "connectivity": self.detect.connectivity,
            },
            "fusion": {"dilation_r": self.dilation_r},
            "report": {
                "base_url": self.endpoint.base_url,
                "model": self.endpoint.model,
                "api_key_required": self.endpoint.api_key_required,
                "timeout_s": self.endpoint.timeout_s,
                "max_retries": self.endpoint.max_retries,
                "retry_base_delay_s": self.endpoint.retry_base_delay_s,
                "offline": self.endpoint.offline,
            },
            "output_dir": self.output_dir,
        }


def _merge(base: dict, extra: Mapping[str, Any]) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def default_config_dict() -> dict:
    return PipelineConfig(
        roi=None,
        preprocess=PreprocessConfig(),
        pct_k=6,
        tsr_degree=4,
        tsr_eval_time=None,
        ppt_bin=1,
        detect=DetectConfig(),
        dilation_r=1,
        endpoint=EndpointConfig(),
        output_dir="thermoreport_out",
    ).to_json_dict()


def config_from_dict(merged: Mapping[str, Any]) -> PipelineConfig:
    try:
        roi_raw = merged["roi"]
        roi = None if roi_raw in (None, "full") else Roi(
            int(roi_raw["x0"]), int(roi_raw["y0"]), int(roi_raw["w"]), int(roi_raw["h"])
        )
        pre = merged["preprocess"]
        det = merged["detect"]
        rep = merged["report"]
        return PipelineConfig(
            roi=roi,
            preprocess=PreprocessConfig(
                sg_enabled=bool(pre["sg_enabled"]),
                sg_window=int(pre["sg_window"]),
                sg_polyorder=int(pre["sg_polyorder"]),
                mean_smooth_window=int(pre["mean_smooth_window"]),
                onset_fraction=float(pre["onset_fraction"]),
            ),
            pct_k=int(merged["pct_k"]),
            tsr_degree=int(merged["tsr"]["degree"]),
            tsr_eval_time=(
                None if merged["tsr"]["eval_time"] is None else int(merged["tsr"]["eval_time"])
            ),
            ppt_bin=int(merged["ppt_bin"]),
            detect=DetectConfig(
                pct_percentile=float(det["pct_percentile"]),
                ppt_amp_percentile=float(det["ppt_amp_percentile"]),
                phase_edge_percentile=float(det["phase_edge_percentile"]),
                tsr_slope_z=float(det["tsr_slope_z"]),
                min_area=None if det["min_area"] is None else int(det["min_area"]),
                border_margin=(
                    None if det["border_margin"] is None else int(det["border_margin"])
                ),
                connectivity=int(det["connectivity"]),
            ),
            dilation_r=int(merged["fusion"]["dilation_r"]),
            endpoint=EndpointConfig(
                base_url=str(rep["base_url"]),
                model=str(rep["model"]),
                api_key_required=bool(rep["api_key_required"]),
                timeout_s=float(rep["timeout_s"]),
                max_retries=int(rep["max_retries"]),
                retry_base_delay_s=float(rep["retry_base_delay_s"]),
                offline=bool(rep["offline"]),
            ),
            output_dir=str(merged["output_dir"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad pipeline config: {exc!r}") from exc


def load_config(path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Defaults, then the config file, then CLI overrides, in that order."""
    merged = default_config_dict()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise InputError(f"missing config file: {path}")
        try:
            file_dict = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed config {path}: {exc}") from exc
        if not isinstance(file_dict, dict):
            raise InputError(f"config {path} must hold a JSON object")
        merged = _merge(merged, file_dict)
    if overrides:
        merged = _merge(merged, overrides)
    return config_from_dict(merged)


# ---------------------------------------------------------------------------
# analysis pass
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AnalysisProducts:
    cube: ThermalCube  # preprocessed (repaired, baseline-corrected, smoothed)
    timing: PulseTiming
    base_range: tuple[float, float]
    pct: PctResult
    tsr: TsrResult
    ppt: PptResult
    masks: Mapping[Modality, AnomalyMask]
    consensus: ConsensusResult
    representative_pc: RepresentativePc
    metrics: MetricsRecord


def _empty_mask(fmap: FeatureMap, connectivity: int) -> AnomalyMask:
    mask = AnomalyMask(
        np.zeros(fmap.values.shape, dtype=bool),
        fmap.modality,
        zmap=fmap.values,
        n_valid=int(np.count_nonzero(fmap.valid)),
    )
    return label_regions(mask, connectivity)


def _mask_from_map(
    fmap: FeatureMap,
    cfg: DetectConfig,
    *,
    percentile: float | None = None,
    z: float | None = None,
) -> tuple[AnomalyMask, AnomalyMask]:
    """Standardize, threshold, clean.  A constant map means nothing stands
    out, so the zero-variance path degrades to an empty mask.

    Returns (raw, cleaned): the raw threshold mask carries the
    by-construction area fraction reported in the metrics table, while
    the min-area-filtered, border-suppressed mask is what detection and
    fusion actually operate on.
    """
    h, w = fmap.values.shape
    try:
        std = standardize(fmap)
    except ZeroVarianceError:
        empty = _empty_mask(fmap, cfg.connectivity)
        return empty, empty
    if percentile is not None:
        raw = threshold_percentile(std, percentile)
    else:
        raw = threshold_z(std, z, mode="two_sided")
    mask = label_regions(raw, cfg.connectivity)
    min_area = cfg.min_area_for(h, w)
    mask = filter_small(mask, min_area, cfg.connectivity)
    margin = cfg.border_margin_for(h, w)
    return raw, suppress_border(mask, margin, min_area, cfg.connectivity)


def run_analysis(cube: ThermalCube, cfg: PipelineConfig) -> AnalysisProducts:
    """Preprocess the (already cropped) cube, run all transforms, detect,
    fuse, and summarize."""
    repaired = repair_nonfinite(cube)
    timing = detect_pulse(repaired, cfg.preprocess)
    base_range = base_median_range(repaired, timing)
    corrected = subtract_baseline(repaired, timing)
    smoothed = smooth_sg(corrected, cfg.preprocess)

    pct_res = pct_decompose(smoothed, timing, cfg.pct_k)
    tsr_res = tsr_fit(smoothed, timing, cfg.tsr_degree, cfg.tsr_eval_time)
    ppt_res = ppt_transform(smoothed, timing, cfg.ppt_bin)

    det = cfg.detect
    tsr_raw, tsr_mask = _mask_from_map(tsr_res.slope, det, z=det.tsr_slope_z)
    edge_raw, edge_mask = _mask_from_map(
        ppt_res.phase_gradient, det, percentile=det.phase_edge_percentile
    )
    amp_raw, amp_mask = _mask_from_map(
        ppt_res.amplitude, det, percentile=det.ppt_amp_percentile
    )

    consensus = fuse_consensus(tsr_mask, edge_mask, det, cfg.dilation_r)
    rep = select_representative_pc(pct_res, consensus)
    pct_raw, pct_mask = _mask_from_map(
        pct_magnitude(pct_res, rep.component), det, percentile=det.pct_percentile
    )

    masks = {
        Modality.PCT_MAG: pct_mask,
        Modality.TSR_SLOPE: tsr_mask,
        Modality.PPT_AMP: amp_mask,
        Modality.PPT_PHASE_EDGE: edge_mask,
    }
    # per-modality table areas are the raw threshold fractions (fixed by
    # construction for percentile thresholds); cleanup only gates fusion
    raw_masks = {
        Modality.PCT_MAG: pct_raw,
        Modality.TSR_SLOPE: tsr_raw,
        Modality.PPT_AMP: amp_raw,
        Modality.PPT_PHASE_EDGE: edge_raw,
    }
    metrics = summarize(consensus, raw_masks, timing, base_range)
    return AnalysisProducts(
        cube=smoothed,
        timing=timing,
        base_range=base_range,
        pct=pct_res,
        tsr=tsr_res,
        ppt=ppt_res,
        masks=masks,
        consensus=consensus,
        representative_pc=rep,
        metrics=metrics,
    )


# ---------------------------------------------------------------------------
# artifact writing
# ---------------------------------------------------------------------------

def _feature_maps_for_export(products: AnalysisProducts) -> dict[str, FeatureMap]:
    maps: dict[str, FeatureMap] = {}
    for i, comp in enumerate(products.pct.components, start=1):
        maps[f"pct_component_{i:02d}"] = comp
    maps["tsr_slope"] = products.tsr.slope
    maps["tsr_logamp"] = products.tsr.log_amplitude
    maps["tsr_residual_rms"] = products.tsr.fit_residual_rms
    maps["ppt_amplitude"] = products.ppt.amplitude
    maps["ppt_phase"] = products.ppt.phase
    maps["ppt_phase_edge"] = products.ppt.phase_gradient
    return maps


def _all_masks(products: AnalysisProducts) -> dict[str, AnomalyMask]:
    out = {m.value: mask for m, mask in products.masks.items()}
    out["consensus"] = products.consensus.mask
    return out


def write_products(
    products: AnalysisProducts, outdir: str | Path, optical: OpticalImage | None = None
) -> None:
    """Write map PNGs, mask PNGs + RLE JSON, metrics, and the cached
    intermediates used by the `export` subcommand."""
    outdir = Path(outdir)
    (outdir / "maps").mkdir(parents=True, exist_ok=True)
    (outdir / "masks").mkdir(parents=True, exist_ok=True)
    inter = outdir / "intermediates"
    inter.mkdir(parents=True, exist_ok=True)

    maps = _feature_maps_for_export(products)
    for name, fmap in maps.items():
        export_map_png(fmap, outdir / "maps" / f"{name}.png")
    for name, mask in _all_masks(products).items():
        export_map_png(mask, outdir / "masks" / f"{name}.png", overlay=optical)
        rle = mask_to_rle(mask)
        (outdir / "masks" / f"{name}.rle.json").write_text(
            json.dumps(rle, sort_keys=True) + "\n"
        )

    (outdir / "metrics.json").write_text(
        json.dumps(products.metrics.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )
    (outdir / "metrics.md").write_text(products.metrics.to_markdown())

    meta: dict[str, Any] = {
        "maps": {},
        "masks": sorted(_all_masks(products)),
        "timing": {"t0": products.timing.t0, "t_peak": products.timing.t_peak},
        "representative_pc": products.representative_pc.component,
        "singular_values": list(products.pct.singular_values),
    }
    for name, fmap in maps.items():
        np.save(inter / f"map_{name}.npy", fmap.values)
        if not fmap.valid.all():
            np.save(inter / f"map_{name}.valid.npy", fmap.valid)
        meta["maps"][name] = {
            "modality": fmap.modality.value,
            "standardized": fmap.standardized,
            "has_valid": not bool(fmap.valid.all()),
        }
    for name, mask in _all_masks(products).items():
        np.save(inter / f"mask_{name}.npy", mask.bits)
    (inter / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def rerender_from_intermediates(
    outdir: str | Path, optical: OpticalImage | None = None
) -> int:
    """Re-render PNGs from the cached arrays; returns the render count."""
    outdir = Path(outdir)
    inter = outdir / "intermediates"
    meta_path = inter / "meta.json"
    if not meta_path.exists():
        raise InputError(f"no cached intermediates found under {inter}")
    meta = json.loads(meta_path.read_text())
    count = 0
    for name, info in sorted(meta["maps"].items()):
        values = np.load(inter / f"map_{name}.npy")
        valid = (
            np.load(inter / f"map_{name}.valid.npy") if info["has_valid"] else None
        )
        fmap = FeatureMap(
            values, Modality(info["modality"]), standardized=info["standardized"], valid=valid
        )
        export_map_png(fmap, outdir / "maps" / f"{name}.png")
        count += 1
    for name in meta["masks"]:
        bits = np.load(inter / f"mask_{name}.npy")
        source = Modality.CONSENSUS if name == "consensus" else Modality(name)
        mask = AnomalyMask(bits, source)
        export_map_png(mask, outdir / "masks" / f"{name}.png", overlay=optical)
        count += 1
    return count


def build_vlm_inputs(
    products: AnalysisProducts, optical: OpticalImage | None = None
) -> VlmInputSet:
    """Encode the fixed, ordered evidence set for the report stage."""
    rep = products.pct.components[products.representative_pc.component - 1]
    return VlmInputSet(
        pct_map_png=png_bytes(rep),
        tsr_map_png=png_bytes(products.tsr.slope),
        ppt_map_png=png_bytes(products.ppt.phase),
        consensus_png=png_bytes(products.consensus.mask, overlay=optical),
        metrics=products.metrics,
        optical_png=png_bytes(optical) if optical is not None else None,
        regions=products.consensus.mask.regions,
    )
