"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from thermoreport.cube_io import ThermalCube
from thermoreport.preprocess import PulseTiming


def random_cube(seed: int, h: int = 8, w: int = 8, t: int = 16) -> ThermalCube:
    """Random cube whose samples are exactly float32-representable."""
    rng = np.random.default_rng(seed)
    data = rng.normal(0.0, 1.0, size=(h, w, t)).astype(np.float32)
    return ThermalCube(data.astype(np.float64))


def decay_cube(
    seed: int,
    h: int = 16,
    w: int = 16,
    frames: int = 96,
    t0: int = 12,
    amplitude: float = 10.0,
    exponent: float = -0.5,
    noise: float = 0.0,
) -> tuple[ThermalCube, PulseTiming]:
    """Zero baseline, then amplitude * tau^exponent decay after t0."""
    data = np.zeros((h, w, frames))
    tau = np.arange(1, frames - t0, dtype=np.float64)
    data[:, :, t0 + 1 :] = amplitude * tau**exponent
    if noise > 0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, noise, size=data.shape)
    return ThermalCube(data), PulseTiming(t0=t0, t_peak=t0 + 1)


def flood_fill_regions(bits: np.ndarray, connectivity: int) -> list[frozenset]:
    """BFS flood-fill oracle: member sets in raster order of first pixel."""
    h, w = bits.shape
    if connectivity == 8:
        nbrs = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    seen = np.zeros_like(bits, dtype=bool)
    regions = []
    for y in range(h):
        for x in range(w):
            if bits[y, x] and not seen[y, x]:
                seen[y, x] = True
                queue = [(y, x)]
                members = []
                while queue:
                    cy, cx = queue.pop()
                    members.append((cy, cx))
                    for dy, dx in nbrs:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
                regions.append(frozenset(members))
    return regions


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
