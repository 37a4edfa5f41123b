"""Sequence conditioning: NaN repair, pulse timing, baseline, smoothing.

Pulse onset and peak are estimated from the spatially averaged
temperature curve after a centered moving average.  Time in all
downstream transforms is expressed as frames elapsed since the detected
onset; the onset frame itself belongs to neither the baseline window
[0, t0) nor the post-pulse window (t0, frames).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from .cube_io import ThermalCube
from .errors import FlatCurveError, InputError, PipelineError

__all__ = [
    "PulseTiming",
    "PreprocessConfig",
    "repair_nonfinite",
    "detect_pulse",
    "subtract_baseline",
    "smooth_sg",
    "base_median_range",
]

BASELINE_MIN_FRAMES = 4
DECAY_MIN_FRAMES = 8


@dataclass(frozen=True)
class PulseTiming:
    """Pulse onset frame t0 and peak-response frame t_peak."""

    t0: int
    t_peak: int

    def __post_init__(self) -> None:
        if not 0 < self.t0 < self.t_peak:
            raise InputError(f"need 0 < t0 < t_peak, got t0={self.t0}, t_peak={self.t_peak}")
        if self.t0 < BASELINE_MIN_FRAMES:
            raise InputError(f"need at least {BASELINE_MIN_FRAMES} baseline frames before t0")

    def validate_for(self, cube: ThermalCube) -> None:
        if self.t_peak >= cube.frames - 1:
            raise InputError("t_peak must precede the last frame")
        if cube.frames - 1 - self.t_peak < DECAY_MIN_FRAMES:
            raise InputError(
                f"need at least {DECAY_MIN_FRAMES} decay frames after t_peak"
            )

    def post_pulse_frames(self, cube: ThermalCube) -> int:
        return cube.frames - self.t0 - 1


@dataclass(frozen=True)
class PreprocessConfig:
    sg_enabled: bool = True
    sg_window: int = 7
    sg_polyorder: int = 3
    mean_smooth_window: int = 5
    onset_fraction: float = 0.10

    def __post_init__(self) -> None:
        if self.sg_window < 5 or self.sg_window % 2 == 0:
            raise InputError("sg_window must be an odd integer >= 5")
        if not 2 <= self.sg_polyorder < self.sg_window:
            raise InputError("sg_polyorder must be >= 2 and < sg_window")
        if self.mean_smooth_window < 3 or self.mean_smooth_window % 2 == 0:
            raise InputError("mean_smooth_window must be an odd integer >= 3")
        if not 0.0 < self.onset_fraction < 1.0:
            raise InputError("onset_fraction must lie in (0, 1)")


def repair_nonfinite(cube: ThermalCube) -> ThermalCube:
    """Replace NaN/inf samples with the pixel's temporal median.

    Finite samples are left untouched.  A pixel with no finite sample at
    all cannot be repaired and raises PipelineError.
    """
    data = cube.data
    bad = ~np.isfinite(data)
    if not bad.any():
        return cube
    dead = bad.all(axis=2)
    if dead.any():
        ys, xs = np.nonzero(dead)
        raise PipelineError(
            f"pixel (x={xs[0]}, y={ys[0]}) has no finite samples to take a median of"
        )
    work = np.where(bad, np.nan, data)
    medians = np.nanmedian(work, axis=2)
    repaired = np.where(bad, medians[:, :, None], data)
    return ThermalCube(repaired, cube.frame_rate_hz, cube.units)


def _smoothed_mean_curve(cube: ThermalCube, window: int) -> np.ndarray:
    """Spatial mean per frame, then centered moving average.

    Near the ends the window shrinks to the available samples instead of
    padding, so no data is invented at the boundaries.
    """
    m = cube.data.mean(axis=(0, 1))
    kernel = np.ones(window)
    # zero-padded sums over zero-padded counts = mean over in-bounds samples
    sums = np.convolve(m, kernel, mode="same")
    counts = np.convolve(np.ones_like(m), kernel, mode="same")
    return sums / counts


def detect_pulse(cube: ThermalCube, cfg: PreprocessConfig) -> PulseTiming:
    """Locate pulse onset and peak on the smoothed spatial-mean curve.

    t_peak is the argmax of the smoothed curve.  The onset threshold is
    onset_fraction of the rise above the pre-peak minimum; t0 is the
    first frame whose smoothed mean exceeds it, i.e. one past the last
    quiet frame, so the baseline window [0, t0) never touches the pulse.

    The rule is invariant under a*T + b with a > 0.
    """
    smooth = _smoothed_mean_curve(cube, cfg.mean_smooth_window)
    span = float(smooth.max() - smooth.min())
    scale = float(np.abs(smooth).max())
    if span <= 0.0 or span <= 1024.0 * np.finfo(np.float64).eps * scale:
        raise FlatCurveError("mean temperature curve has no detectable pulse")
    t_peak = int(np.argmax(smooth))
    n = smooth.size
    if t_peak == 0 or t_peak == n - 1:
        raise PipelineError(f"mean-curve peak sits at sequence edge (frame {t_peak})")
    baseline_min = float(smooth[:t_peak].min())
    peak = float(smooth[t_peak])
    rise = peak - baseline_min
    if rise <= 0.0 or rise <= 1024.0 * np.finfo(np.float64).eps * scale:
        raise FlatCurveError("mean temperature curve has no detectable pulse")
    threshold = baseline_min + cfg.onset_fraction * rise
    below = np.flatnonzero(smooth[:t_peak] <= threshold)
    if below.size == 0:
        raise PipelineError("no quiet baseline below the onset threshold before the peak")
    t0 = int(below[-1]) + 1
    timing = PulseTiming(t0=t0, t_peak=t_peak)
    timing.validate_for(cube)
    return timing


def subtract_baseline(cube: ThermalCube, timing: PulseTiming) -> ThermalCube:
    """Subtract each pixel's mean over the pre-pulse frames [0, t0)."""
    timing.validate_for(cube)
    baseline = cube.data[:, :, : timing.t0].mean(axis=2, keepdims=True)
    return ThermalCube(cube.data - baseline, cube.frame_rate_hz, cube.units)


def smooth_sg(cube: ThermalCube, cfg: PreprocessConfig) -> ThermalCube:
    """Savitzky-Golay smoothing of every pixel time series.

    Interior frames use the standard centered window; the first and last
    half-window frames are refit on the truncated window that actually
    exists (no padding), with the polynomial order clamped to the sample
    count.  Disabled configs return the input unchanged.
    """
    if not cfg.sg_enabled:
        return cube
    t = cube.frames
    if cfg.sg_window > t:
        raise InputError(f"sg_window {cfg.sg_window} exceeds frame count {t}")
    data = cube.data
    smoothed = savgol_filter(data, cfg.sg_window, cfg.sg_polyorder, axis=2, mode="interp")
    half = cfg.sg_window // 2
    flat = data.reshape(-1, t)
    out = smoothed.reshape(-1, t)
    for i in list(range(half)) + list(range(t - half, t)):
        lo, hi = max(0, i - half), min(t, i + half + 1)
        x = np.arange(lo, hi, dtype=np.float64) - i
        order = min(cfg.sg_polyorder, hi - lo - 1)
        design = np.vander(x, order + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(design, flat[:, lo:hi].T, rcond=None)
        out[:, i] = coef[0]  # polynomial evaluated at x = 0
    return ThermalCube(out.reshape(data.shape), cube.frame_rate_hz, cube.units)


def base_median_range(cube: ThermalCube, timing: PulseTiming) -> tuple[float, float]:
    """Min and max over pixels of the per-pixel pre-pulse median."""
    timing.validate_for(cube)
    med = np.median(cube.data[:, :, : timing.t0], axis=2)
    return float(med.min()), float(med.max())
