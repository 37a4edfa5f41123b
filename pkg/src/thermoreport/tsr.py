"""Thermographic Signal Reconstruction: per-pixel log-log polynomial fits.

Each pixel's baseline-corrected decay is fit as a low-degree polynomial
in ln(tau), tau being frames since pulse onset.  Two scalar maps come
out of the fit: the reconstructed log-amplitude and the local log-log
slope, both evaluated at a single time.  Ideal semi-infinite diffusion
decays as tau^(-1/2), so defect-free slope maps sit near -0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube_io import ThermalCube
from .detect import FeatureMap, Modality
from .errors import InputError
from .preprocess import PulseTiming

__all__ = ["TsrResult", "tsr_fit", "tsr_slope_map", "default_eval_time"]

DEFAULT_DEGREE = 4
LOG_FLOOR_SCALE = 1e-6
# pixels with more than this fraction of floored samples carry no usable decay
MAX_FLOORED_FRACTION = 0.5


@dataclass(frozen=True, eq=False)
class TsrResult:
    log_amplitude: FeatureMap
    slope: FeatureMap
    fit_residual_rms: FeatureMap
    degree: int
    eval_time: int


def default_eval_time(n_post: int) -> int:
    """Midpoint of the post-pulse window in log-time: sqrt(tau_max)."""
    return max(1, int(round(np.sqrt(n_post))))


def tsr_fit(
    cube: ThermalCube,
    timing: PulseTiming,
    degree: int = DEFAULT_DEGREE,
    eval_time: int | None = None,
) -> TsrResult:
    """Least-squares polynomial fit of ln(dT) against ln(tau) per pixel.

    Samples at or below the noise floor are clamped to
    LOG_FLOOR_SCALE * max post-pulse value before the log; pixels where
    more than half the samples needed clamping are flagged invalid so
    they stay out of downstream standardization statistics.

    Returns log-amplitude, slope (d ln dT / d ln tau), and residual RMS
    maps, all evaluated/accumulated over the post-pulse window.
    """
    timing.validate_for(cube)
    if not 2 <= degree <= 7:
        raise InputError(f"degree must be in [2, 7], got {degree}")
    n_post = timing.post_pulse_frames(cube)
    if n_post < degree + 3:
        raise InputError(
            f"need at least degree+3={degree + 3} post-pulse frames, got {n_post}"
        )
    if eval_time is None:
        eval_time = default_eval_time(n_post)
    if not 1 <= eval_time <= n_post:
        raise InputError(f"eval_time {eval_time} outside post-pulse range 1..{n_post}")

    h, w = cube.height, cube.width
    post = cube.data[:, :, timing.t0 + 1 :].reshape(h * w, n_post)
    tau = np.arange(1, n_post + 1, dtype=np.float64)
    ln_tau = np.log(tau)
    if np.unique(ln_tau).size < degree + 1:
        raise InputError("fewer distinct log-time values than polynomial coefficients")

    floor = LOG_FLOOR_SCALE * float(post.max())
    if floor <= 0.0:
        raise InputError("post-pulse block has no positive samples to fit")
    floored = post < floor
    y = np.log(np.maximum(post, floor))

    design = np.vander(ln_tau, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(design, y.T, rcond=None)  # (degree+1, pixels)

    lt = np.log(float(eval_time))
    powers = lt ** np.arange(degree + 1)
    log_amp = powers @ coef
    dpowers = np.arange(1, degree + 1) * lt ** np.arange(degree)
    slope = dpowers @ coef[1:]
    residuals = design @ coef - y.T
    rms = np.sqrt(np.mean(residuals**2, axis=0))

    valid = (floored.mean(axis=1) <= MAX_FLOORED_FRACTION).reshape(h, w)
    return TsrResult(
        log_amplitude=FeatureMap(log_amp.reshape(h, w), Modality.TSR_LOGAMP, valid=valid),
        slope=FeatureMap(slope.reshape(h, w), Modality.TSR_SLOPE, valid=valid),
        fit_residual_rms=FeatureMap(rms.reshape(h, w), Modality.TSR_RESIDUAL, valid=valid),
        degree=degree,
        eval_time=int(eval_time),
    )


def tsr_slope_map(result: TsrResult) -> FeatureMap:
    """The slope map, tagged TSR_SLOPE."""
    return result.slope
