"""Synthetic pulsed-thermography sequences with planted defects.

The background decays as A * tau^e after the pulse (e = -1/2 mimics
semi-infinite diffusion); each defect multiplies the background by
(1 + c * g(tau)) where g rises smoothly from the contrast onset to 1 at
the contrast peak and then falls off as 1/tau.  Ground truth is the
union of defect footprints.  Generation is a pure function of the spec,
seed included.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cube_io import ThermalCube
from .detect import AnomalyMask, Modality, label_regions
from .errors import InputError

__all__ = ["DefectSpec", "SynthSpec", "generate", "load_spec"]

MIN_ONSET = 8
MIN_DECAY = 32


@dataclass(frozen=True)
class DefectSpec:
    """One planted subsurface defect (disk or axis-aligned rectangle)."""

    shape: str  # "disk" | "rect"
    contrast_amplitude: float
    contrast_onset_frame: int
    contrast_peak_frame: int
    # disk geometry
    cx: int = 0
    cy: int = 0
    radius: int = 0
    # rect geometry
    x0: int = 0
    y0: int = 0
    w: int = 0
    h: int = 0

    def __post_init__(self) -> None:
        if self.shape not in ("disk", "rect"):
            raise InputError(f"defect shape must be 'disk' or 'rect', got {self.shape!r}")
        if not 0.0 < self.contrast_amplitude <= 1.0:
            raise InputError("contrast_amplitude must lie in (0, 1]")
        if not 0 <= self.contrast_onset_frame < self.contrast_peak_frame:
            raise InputError("need 0 <= contrast_onset_frame < contrast_peak_frame")

    def footprint(self, height: int, width: int) -> np.ndarray:
        grid_y, grid_x = np.mgrid[0:height, 0:width]
        if self.shape == "disk":
            return (grid_x - self.cx) ** 2 + (grid_y - self.cy) ** 2 <= self.radius**2
        fp = np.zeros((height, width), dtype=bool)
        fp[self.y0 : self.y0 + self.h, self.x0 : self.x0 + self.w] = True
        return fp

    def extent(self) -> tuple[int, int, int, int]:
        """(x_min, y_min, x_max, y_max) inclusive bounds of the footprint."""
        if self.shape == "disk":
            return (
                self.cx - self.radius,
                self.cy - self.radius,
                self.cx + self.radius,
                self.cy + self.radius,
            )
        return (self.x0, self.y0, self.x0 + self.w - 1, self.y0 + self.h - 1)


@dataclass(frozen=True)
class SynthSpec:
    width: int
    height: int
    frames: int
    t0: int
    peak_amplitude: float
    background_decay_exponent: float = -0.5
    noise_sigma: float = 0.0
    seed: int = 0
    defects: tuple[DefectSpec, ...] = field(default_factory=tuple)
    edge_clearance: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "defects", tuple(self.defects))
        if self.t0 < MIN_ONSET:
            raise InputError(f"t0 must be >= {MIN_ONSET}")
        if self.frames - self.t0 < MIN_DECAY:
            raise InputError(f"need at least {MIN_DECAY} frames after t0")
        if self.peak_amplitude <= 0:
            raise InputError("peak_amplitude must be positive")
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be >= 0")
        if self.edge_clearance < 0:
            raise InputError("edge_clearance must be >= 0")
        n_post = self.frames - self.t0 - 1
        for d in self.defects:
            x_min, y_min, x_max, y_max = d.extent()
            c = self.edge_clearance + 1
            if x_min < c or y_min < c or x_max >= self.width - c or y_max >= self.height - c:
                raise InputError(
                    f"defect footprint {d.extent()} too close to the ROI border "
                    f"(clearance {c} px required)"
                )
            if d.contrast_peak_frame > n_post:
                raise InputError("contrast_peak_frame beyond the post-pulse window")


def _contrast_curve(d: DefectSpec, tau: np.ndarray) -> np.ndarray:
    """Smooth bump: 0 before onset, smoothstep rise to 1 at peak, 1/tau decay."""
    g = np.zeros_like(tau, dtype=np.float64)
    rising = (tau > d.contrast_onset_frame) & (tau <= d.contrast_peak_frame)
    u = (tau[rising] - d.contrast_onset_frame) / (d.contrast_peak_frame - d.contrast_onset_frame)
    g[rising] = u * u * (3.0 - 2.0 * u)
    falling = tau > d.contrast_peak_frame
    g[falling] = d.contrast_peak_frame / tau[falling]
    return g


def generate(spec: SynthSpec) -> tuple[ThermalCube, AnomalyMask]:
    """Render the cube and its ground-truth mask."""
    h, w, t = spec.height, spec.width, spec.frames
    data = np.zeros((h, w, t), dtype=np.float64)
    n_post = t - spec.t0 - 1
    tau = np.arange(1, n_post + 1, dtype=np.float64)
    background = spec.peak_amplitude * tau**spec.background_decay_exponent
    post = np.broadcast_to(background, (h, w, n_post)).copy()
    truth = np.zeros((h, w), dtype=bool)
    for d in spec.defects:
        fp = d.footprint(h, w)
        truth |= fp
        post[fp] *= 1.0 + d.contrast_amplitude * _contrast_curve(d, tau)
    data[:, :, spec.t0 + 1 :] = post
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)
    cube = ThermalCube(data)
    gt = label_regions(AnomalyMask(truth, Modality.GROUND_TRUTH), connectivity=8)
    return cube, gt


def load_spec(path: str | Path) -> SynthSpec:
    """Parse a SynthSpec from its JSON file form."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing synth spec: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed synth spec {path}: {exc}") from exc
    try:
        defects = tuple(DefectSpec(**d) for d in raw.pop("defects", []))
        return SynthSpec(defects=defects, **raw)
    except TypeError as exc:
        raise InputError(f"bad synth spec field: {exc}") from exc
