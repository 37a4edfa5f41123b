"""Command-line interface: analyze, synth, eval, export.

Exit codes: 0 success, 2 input errors, 3 pipeline errors, 4 report-stage
(transport/schema) errors.  A report-stage failure never removes the
pipeline artifacts already written to the output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import pipeline, synth
from .cube_io import crop, read_cube, read_optical_png, write_cube
from .detect import Modality, mask_to_rle, rle_to_mask
from .errors import (
    InputError,
    PipelineError,
    ReportSchemaError,
    ThermoError,
    TransportError,
)
from .fusion import dice, precision_recall
from .ppt import ppt_full_spectrum, write_spectrum
from .report import build_prompt, call_vlm, parse_report, report_to_dict

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PIPELINE = 3
EXIT_REPORT = 4


def _config_overrides(args: argparse.Namespace) -> dict:
    """Collect `--flag` overrides into the nested config layout."""
    over: dict = {}

    def put(path: tuple[str, ...], value) -> None:
        node = over
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    if getattr(args, "roi", None):
        if args.roi == "full":
            put(("roi",), "full")
        else:
            try:
                x0, y0, w, h = (int(v) for v in args.roi.split(","))
            except ValueError as exc:
                raise InputError(f"--roi expects x0,y0,w,h or 'full': {exc}") from exc
            put(("roi",), {"x0": x0, "y0": y0, "w": w, "h": h})
    mapping = [
        ("pct_k", ("pct_k",)),
        ("tsr_degree", ("tsr", "degree")),
        ("tsr_eval_time", ("tsr", "eval_time")),
        ("ppt_bin", ("ppt_bin",)),
        ("sg_window", ("preprocess", "sg_window")),
        ("sg_polyorder", ("preprocess", "sg_polyorder")),
        ("mean_smooth_window", ("preprocess", "mean_smooth_window")),
        ("onset_fraction", ("preprocess", "onset_fraction")),
        ("pct_percentile", ("detect", "pct_percentile")),
        ("ppt_amp_percentile", ("detect", "ppt_amp_percentile")),
        ("phase_edge_percentile", ("detect", "phase_edge_percentile")),
        ("tsr_slope_z", ("detect", "tsr_slope_z")),
        ("min_area", ("detect", "min_area")),
        ("border_margin", ("detect", "border_margin")),
        ("connectivity", ("detect", "connectivity")),
        ("dilation_r", ("fusion", "dilation_r")),
        ("endpoint_url", ("report", "base_url")),
        ("model", ("report", "model")),
        ("timeout", ("report", "timeout_s")),
        ("max_retries", ("report", "max_retries")),
        ("output_dir", ("output_dir",)),
    ]
    for attr, path in mapping:
        value = getattr(args, attr, None)
        if value is not None:
            put(path, value)
    if getattr(args, "no_sg", False):
        put(("preprocess", "sg_enabled"), False)
    if getattr(args, "offline", False):
        put(("report", "offline"), True)
    return over


def _load_merged_config(args: argparse.Namespace) -> pipeline.PipelineConfig:
    return pipeline.load_config(getattr(args, "config", None), _config_overrides(args))


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _load_merged_config(args)
    if args.print_config:
        print(json.dumps(cfg.to_json_dict(), indent=2, sort_keys=True))
        return EXIT_OK

    cube = read_cube(args.cube)
    if cfg.roi is not None:
        cube = crop(cube, cfg.roi)
    optical = None
    if args.optical:
        optical = read_optical_png(args.optical)
        if (optical.height, optical.width) != (cube.height, cube.width):
            raise InputError(
                f"optical image is {optical.width}x{optical.height} but the ROI is "
                f"{cube.width}x{cube.height}; it must be pre-registered to the ROI"
            )

    outdir = Path(cfg.output_dir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {outdir}: {exc}") from exc
    (outdir / "effective_config.json").write_text(
        json.dumps(cfg.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )

    products = pipeline.run_analysis(cube, cfg)
    pipeline.write_products(products, outdir, optical)
    if args.dump_spectrum:
        spectrum = ppt_full_spectrum(products.cube, products.timing)
        write_spectrum(spectrum, outdir / "intermediates" / "ppt_spectrum.bin")

    prompt = build_prompt(products.metrics)
    (outdir / "prompt.txt").write_text(prompt)

    # the report stage runs last so its failure leaves everything above intact
    inputs = pipeline.build_vlm_inputs(products, optical)
    raw = call_vlm(inputs, prompt, cfg.endpoint)
    (outdir / "report.md").write_text(raw)
    parsed = parse_report(raw)
    (outdir / "report.json").write_text(
        json.dumps(report_to_dict(parsed), indent=2, sort_keys=True) + "\n"
    )
    print(f"analysis complete: {outdir}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = synth.load_spec(args.spec)
    cube, truth = synth.generate(spec)
    out = Path(args.out)
    write_cube(cube, out)
    gt = {
        "mask": mask_to_rle(truth),
        "regions": [
            {
                "label": r.label,
                "area": r.area,
                "bbox": list(r.bbox),
                "centroid": list(r.centroid),
            }
            for r in truth.regions
        ],
    }
    out.with_suffix(".gt.json").write_text(json.dumps(gt, sort_keys=True) + "\n")
    print(f"wrote {out} and {out.with_suffix('.gt.json')}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_merged_config(args)
    cube = read_cube(args.cube)
    if cfg.roi is not None:
        cube = crop(cube, cfg.roi)
    gt_path = Path(args.ground_truth)
    if not gt_path.exists():
        raise InputError(f"missing ground truth: {gt_path}")
    payload = json.loads(gt_path.read_text())
    truth = rle_to_mask(payload["mask"], source=Modality.GROUND_TRUTH)
    if truth.bits.shape != (cube.height, cube.width):
        raise InputError(
            f"ground truth is {truth.width}x{truth.height} but the cube ROI is "
            f"{cube.width}x{cube.height}"
        )
    products = pipeline.run_analysis(cube, cfg)
    pred = products.consensus.mask.bits
    structure = np.ones((3, 3), dtype=bool) if cfg.detect.connectivity == 8 else None
    labels, n_truth = ndimage.label(truth.bits, structure=structure)
    hits = sum(1 for lab in range(1, n_truth + 1) if pred[labels == lab].any())
    precision, recall = precision_recall(pred, truth.bits)
    result = {
        "dice": round(dice(pred, truth.bits), 4),
        "precision": round(precision, 4),
        "recall": round(recall, 4),
        "consensus_regions": products.consensus.region_count,
        "gt_regions": int(n_truth),
        "gt_regions_hit": hits,
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    optical = read_optical_png(args.optical) if args.optical else None
    count = pipeline.rerender_from_intermediates(args.output_dir, optical)
    print(f"re-rendered {count} images under {args.output_dir}")
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON (flags override file values)")
    p.add_argument("--roi", help="ROI as x0,y0,w,h or 'full'")
    p.add_argument("--pct-k", dest="pct_k", type=int)
    p.add_argument("--tsr-degree", dest="tsr_degree", type=int)
    p.add_argument("--tsr-eval-time", dest="tsr_eval_time", type=int)
    p.add_argument("--ppt-bin", dest="ppt_bin", type=int)
    p.add_argument("--sg-window", dest="sg_window", type=int)
    p.add_argument("--sg-polyorder", dest="sg_polyorder", type=int)
    p.add_argument("--no-sg", dest="no_sg", action="store_true",
                   help="disable Savitzky-Golay smoothing")
    p.add_argument("--mean-smooth-window", dest="mean_smooth_window", type=int)
    p.add_argument("--onset-fraction", dest="onset_fraction", type=float)
    p.add_argument("--pct-percentile", dest="pct_percentile", type=float)
    p.add_argument("--ppt-amp-percentile", dest="ppt_amp_percentile", type=float)
    p.add_argument("--phase-edge-percentile", dest="phase_edge_percentile", type=float)
    p.add_argument("--tsr-slope-z", dest="tsr_slope_z", type=float)
    p.add_argument("--min-area", dest="min_area", type=int)
    p.add_argument("--border-margin", dest="border_margin", type=int)
    p.add_argument("--connectivity", dest="connectivity", type=int, choices=(4, 8))
    p.add_argument("--dilation-r", dest="dilation_r", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--offline", action="store_true",
                   help="generate the report offline instead of calling the endpoint")
    p.add_argument("--endpoint-url", dest="endpoint_url")
    p.add_argument("--model", dest="model")
    p.add_argument("--timeout", dest="timeout", type=float)
    p.add_argument("--max-retries", dest="max_retries", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermoreport",
        description=(
            "Pulsed-thermography analysis: PCT/TSR/PPT feature maps, consensus "
            "anomaly masks, and structured conservation reports."
        ),
        epilog="API key for hosted endpoints is read from THERMO_VLM_API_KEY.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_an = sub.add_parser("analyze", help="run the full pipeline on a .tcube sequence")
    p_an.add_argument("cube", help="path to the .tcube payload (JSON sidecar alongside)")
    p_an.add_argument("--optical", help="optical PNG registered to the ROI")
    p_an.add_argument("--print-config", action="store_true",
                      help="print the effective merged config and exit")
    p_an.add_argument("--dump-spectrum", dest="dump_spectrum", action="store_true",
                      help="dump the full per-pixel DFT spectrum for debugging")
    _add_config_flags(p_an)
    p_an.set_defaults(func=cmd_analyze)

    p_sy = sub.add_parser("synth", help="generate a synthetic cube with ground truth")
    p_sy.add_argument("spec", help="SynthSpec JSON file")
    p_sy.add_argument("out", help="output .tcube path (ground truth lands at *.gt.json)")
    p_sy.set_defaults(func=cmd_synth)

    p_ev = sub.add_parser("eval", help="score consensus detection against ground truth")
    p_ev.add_argument("cube", help="path to the .tcube payload")
    p_ev.add_argument("ground_truth", help="ground-truth mask JSON (from synth)")
    _add_config_flags(p_ev)
    p_ev.set_defaults(func=cmd_eval)

    p_ex = sub.add_parser("export", help="re-render PNGs from cached intermediates")
    p_ex.add_argument("output_dir", help="an analyze output directory")
    p_ex.add_argument("--optical", help="optical PNG for mask overlays")
    p_ex.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (TransportError, ReportSchemaError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_REPORT
    except ThermoError as exc:  # any remaining domain failure is a pipeline fault
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
