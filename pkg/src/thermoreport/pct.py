"""Principal Component Thermography via singular value decomposition.

The post-pulse frames are reshaped into a matrix whose rows are pixels
and whose columns are time steps; after per-column mean centering, the
left singular vectors reshape back into orthogonal spatial component
maps ordered by decreasing singular value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube_io import ThermalCube
from .detect import FeatureMap, Modality
from .errors import InputError
from .preprocess import PulseTiming

__all__ = ["PctResult", "pct_decompose", "pct_magnitude"]

DEFAULT_COMPONENTS = 6


@dataclass(frozen=True, eq=False)
class PctResult:
    """Retained component maps and their singular values."""

    components: tuple[FeatureMap, ...]
    singular_values: tuple[float, ...]

    @property
    def k(self) -> int:
        return len(self.components)


def pct_decompose(cube: ThermalCube, timing: PulseTiming, k: int = DEFAULT_COMPONENTS) -> PctResult:
    """Decompose the post-pulse sequence into k spatial component maps.

    Column (per-time-step) means are removed before the SVD so the
    global decay mode does not dominate every component.  Each component
    is sign-flipped so its maximum-magnitude entry is positive, making
    the output deterministic.
    """
    timing.validate_for(cube)
    h, w = cube.height, cube.width
    n_post = timing.post_pulse_frames(cube)
    pixels = h * w
    if k < 1:
        raise InputError(f"component count must be >= 1, got {k}")
    if k > min(pixels, n_post):
        raise InputError(
            f"k={k} exceeds min(pixels={pixels}, post-pulse frames={n_post})"
        )
    a = cube.data[:, :, timing.t0 + 1 :].reshape(pixels, n_post)
    a = a - a.mean(axis=0, keepdims=True)
    try:
        u, s, _ = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise InputError(f"SVD failed to converge: {exc}") from exc
    comps = []
    for i in range(k):
        col = u[:, i]
        peak = np.argmax(np.abs(col))
        if col[peak] < 0:
            col = -col
        comps.append(FeatureMap(col.reshape(h, w), Modality.PCT_COMPONENT))
    return PctResult(tuple(comps), tuple(float(v) for v in s[:k]))


def pct_magnitude(result: PctResult, component: int) -> FeatureMap:
    """Elementwise absolute value of the selected component (1-based)."""
    if not 1 <= component <= result.k:
        raise InputError(f"component {component} out of range 1..{result.k}")
    comp = result.components[component - 1]
    return FeatureMap(np.abs(comp.values), Modality.PCT_MAG, valid=comp.valid)
