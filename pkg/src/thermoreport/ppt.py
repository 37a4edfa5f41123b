"""Pulsed Phase Thermography: temporal DFT amplitude, phase, phase edges.

The discrete Fourier transform runs along each pixel's post-pulse
series.  Phase is insensitive to multiplicative gain, which makes it
robust to non-uniform heating; spatial gradients of the wrapped phase
(the phase-edge map) mark discontinuities at defect boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube_io import ThermalCube
from .detect import FeatureMap, Modality
from .errors import InputError
from .preprocess import PulseTiming

__all__ = [
    "PptResult",
    "ppt_transform",
    "ppt_phase_gradient",
    "ppt_full_spectrum",
    "write_spectrum",
]

DEFAULT_BIN = 1
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class PptResult:
    amplitude: FeatureMap
    phase: FeatureMap
    phase_gradient: FeatureMap
    bin: int
    bin_frequency: float  # cycles per frame; Hz when the cube has a frame rate


def _wrap(delta: np.ndarray) -> np.ndarray:
    """Wrap phase differences into the principal interval (-pi, pi]."""
    out = np.mod(delta + np.pi, TWO_PI) - np.pi
    out[out == -np.pi] = np.pi
    return out


def ppt_transform(cube: ThermalCube, timing: PulseTiming, dft_bin: int = DEFAULT_BIN) -> PptResult:
    """Per-pixel DFT of the post-pulse series at one frequency bin."""
    timing.validate_for(cube)
    n = timing.post_pulse_frames(cube)
    if not 1 <= dft_bin <= n // 2:
        raise InputError(f"bin {dft_bin} outside valid range 1..{n // 2}")
    post = cube.data[:, :, timing.t0 + 1 :]
    spectrum = np.fft.fft(post, axis=2)[:, :, dft_bin]
    amplitude = np.abs(spectrum)
    phase = np.angle(spectrum)
    phase = np.where(phase <= -np.pi, phase + TWO_PI, phase)
    phase_map = FeatureMap(phase, Modality.PPT_PHASE)
    rate = cube.frame_rate_hz
    freq = dft_bin / n if rate is None else dft_bin * rate / n
    return PptResult(
        amplitude=FeatureMap(amplitude, Modality.PPT_AMP),
        phase=phase_map,
        phase_gradient=ppt_phase_gradient(phase_map),
        bin=dft_bin,
        bin_frequency=float(freq),
    )


def ppt_phase_gradient(phase: FeatureMap) -> FeatureMap:
    """Gradient magnitude of a wrapped phase map, in radians per pixel.

    Central differences on interior pixels, one-sided at the borders;
    every pairwise difference is wrapped into (-pi, pi] first, so a
    seam between +pi-d and -pi+d contributes 2d rather than ~2*pi.
    """
    v = phase.values
    gx = np.empty_like(v)
    gx[:, 1:-1] = _wrap(v[:, 2:] - v[:, :-2]) / 2.0
    gx[:, 0] = _wrap(v[:, 1] - v[:, 0])
    gx[:, -1] = _wrap(v[:, -1] - v[:, -2])
    gy = np.empty_like(v)
    gy[1:-1, :] = _wrap(v[2:, :] - v[:-2, :]) / 2.0
    gy[0, :] = _wrap(v[1, :] - v[0, :])
    gy[-1, :] = _wrap(v[-1, :] - v[-2, :])
    return FeatureMap(np.hypot(gx, gy), Modality.PPT_PHASE_EDGE, valid=phase.valid)


def ppt_full_spectrum(cube: ThermalCube, timing: PulseTiming) -> np.ndarray:
    """Complex spectrum of every pixel's post-pulse series (debug path).

    Satisfies Parseval's identity: sum over bins of |F|^2 equals
    N * sum over samples of dT^2.
    """
    timing.validate_for(cube)
    return np.fft.fft(cube.data[:, :, timing.t0 + 1 :], axis=2)


def write_spectrum(spectrum: np.ndarray, path) -> None:
    """Dump a complex spectrum as interleaved (re, im) float32 pairs,
    bin-major with row-major frames, mirroring the .tcube layout."""
    pairs = np.empty(spectrum.shape + (2,), dtype=np.float64)
    pairs[..., 0] = spectrum.real
    pairs[..., 1] = spectrum.imag
    flat = pairs.transpose(2, 0, 1, 3).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(flat.tobytes())
