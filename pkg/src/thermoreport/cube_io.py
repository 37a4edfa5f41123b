"""Thermal-cube data model, `.tcube` on-disk format, and PNG export.

A cube is stored as raw little-endian float32, frame-major (frame 0
first, row-major within a frame), next to a JSON sidecar carrying the
dimensions:

    {"width": int, "height": int, "frames": int,
     "frame_rate_hz": number|null, "units": string}

In memory the samples live in an (H, W, T) float64 array so that all
per-pixel time-series math runs at full precision; writing casts back
to float32.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .detect import AnomalyMask, FeatureMap
from .errors import InputError

__all__ = [
    "ThermalCube",
    "Roi",
    "OpticalImage",
    "read_cube",
    "write_cube",
    "crop",
    "export_map_png",
    "png_bytes",
    "read_optical_png",
    "sidecar_path",
]

MIN_DIM = 4
MIN_FRAMES = 8


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ThermalCube:
    """H x W x T temperature sequence; samples may be NaN before repair."""

    data: np.ndarray
    frame_rate_hz: float | None = None
    units: str = "arb"

    def __post_init__(self) -> None:
        d = np.array(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise InputError(f"cube data must be 3-D (H, W, T), got shape {d.shape}")
        h, w, t = d.shape
        if h < MIN_DIM or w < MIN_DIM:
            raise InputError(f"cube must be at least {MIN_DIM}x{MIN_DIM}, got {w}x{h}")
        if t < MIN_FRAMES:
            raise InputError(f"cube needs at least {MIN_FRAMES} frames, got {t}")
        if self.frame_rate_hz is not None and not self.frame_rate_hz > 0:
            raise InputError("frame_rate_hz must be positive when present")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def frames(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Roi:
    """Rectangular region of interest in pixel coordinates."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.x0 < 0 or self.y0 < 0:
            raise InputError("ROI offsets must be non-negative")
        if self.w < MIN_DIM or self.h < MIN_DIM:
            raise InputError(f"ROI extents must be at least {MIN_DIM} px")

    def validate_for(self, cube: ThermalCube) -> None:
        if self.x0 + self.w > cube.width or self.y0 + self.h > cube.height:
            raise InputError(
                f"ROI {self} exceeds cube bounds {cube.width}x{cube.height}"
            )


@dataclass(frozen=True, eq=False)
class OpticalImage:
    """Registered optical photograph, 8-bit gray or RGB."""

    data: np.ndarray

    def __post_init__(self) -> None:
        d = np.array(self.data, dtype=np.uint8)
        if d.ndim == 2:
            pass
        elif d.ndim == 3 and d.shape[2] == 3:
            pass
        else:
            raise InputError(f"optical image must be (H, W) or (H, W, 3), got {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise InputError("optical image dimensions must be positive")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def as_rgb(self) -> np.ndarray:
        if self.data.ndim == 2:
            return np.stack([self.data] * 3, axis=-1)
        return np.array(self.data)


# ---------------------------------------------------------------------------
# .tcube I/O
# ---------------------------------------------------------------------------

def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def read_cube(path: str | Path) -> ThermalCube:
    """Read a `.tcube` payload with its JSON sidecar."""
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise InputError(f"missing sidecar: {side}")
    if not path.exists():
        raise InputError(f"missing cube payload: {path}")
    try:
        meta = json.loads(side.read_text())
        w, h, t = int(meta["width"]), int(meta["height"]), int(meta["frames"])
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"malformed sidecar {side}: {exc}") from exc
    if t < MIN_FRAMES:
        raise InputError(f"sidecar declares {t} frames; at least {MIN_FRAMES} required")
    raw = path.read_bytes()
    expected = w * h * t * 4
    if len(raw) != expected:
        raise InputError(
            f"payload size mismatch for {path}: expected {expected} bytes "
            f"({w}x{h}x{t} float32), got {len(raw)}"
        )
    samples = np.frombuffer(raw, dtype="<f4").reshape(t, h, w)
    data = np.ascontiguousarray(samples.transpose(1, 2, 0), dtype=np.float64)
    rate = meta.get("frame_rate_hz")
    return ThermalCube(data, None if rate is None else float(rate), str(meta.get("units", "arb")))


def write_cube(cube: ThermalCube, path: str | Path) -> None:
    """Write the exact format read_cube consumes (samples cast to float32)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = cube.data.transpose(2, 0, 1).astype("<f4").tobytes()
    path.write_bytes(payload)
    meta = {
        "width": cube.width,
        "height": cube.height,
        "frames": cube.frames,
        "frame_rate_hz": cube.frame_rate_hz,
        "units": cube.units,
    }
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def crop(cube: ThermalCube, roi: Roi) -> ThermalCube:
    """Copy the ROI out of the cube; the result never aliases the input."""
    roi.validate_for(cube)
    block = cube.data[roi.y0 : roi.y0 + roi.h, roi.x0 : roi.x0 + roi.w, :]
    return ThermalCube(np.array(block), cube.frame_rate_hz, cube.units)


# ---------------------------------------------------------------------------
# PNG export
# ---------------------------------------------------------------------------

def _render_feature_map(fmap: FeatureMap) -> np.ndarray:
    vals = fmap.values
    finite = vals[fmap.valid]
    lo = float(finite.min())
    hi = float(finite.max())
    if hi == lo:
        # constant map renders uniform mid-gray rather than failing
        return np.full(vals.shape, 128, dtype=np.uint8)
    norm = (vals - lo) / (hi - lo)
    out = np.rint(np.clip(norm, 0.0, 1.0) * 255.0).astype(np.uint8)
    out[~fmap.valid] = 0
    return out


def _render_mask(mask: AnomalyMask, overlay: OpticalImage | None) -> np.ndarray:
    if overlay is not None:
        base = overlay.as_rgb().astype(np.float64)
    else:
        base = np.zeros((mask.height, mask.width, 3), dtype=np.float64)
    red = np.array([255.0, 0.0, 0.0])
    out = base.copy()
    out[mask.bits] = 0.5 * base[mask.bits] + 0.5 * red
    return np.rint(out).astype(np.uint8)


def _encode(obj, overlay: OpticalImage | None, sink) -> None:
    if isinstance(obj, FeatureMap):
        if overlay is not None and (overlay.height, overlay.width) != obj.values.shape:
            raise InputError("overlay dimensions do not match map")
        Image.fromarray(_render_feature_map(obj), mode="L").save(sink, format="PNG")
    elif isinstance(obj, AnomalyMask):
        if overlay is not None and (overlay.height, overlay.width) != obj.bits.shape:
            raise InputError("overlay dimensions do not match mask")
        Image.fromarray(_render_mask(obj, overlay), mode="RGB").save(sink, format="PNG")
    elif isinstance(obj, OpticalImage):
        mode = "L" if obj.channels == 1 else "RGB"
        Image.fromarray(np.asarray(obj.data), mode=mode).save(sink, format="PNG")
    else:
        raise InputError(f"cannot export object of type {type(obj).__name__}")


def export_map_png(
    obj: FeatureMap | AnomalyMask,
    path: str | Path,
    overlay: OpticalImage | None = None,
) -> None:
    """Render a map (min-max grayscale) or mask (red overlay) to PNG.

    Feature maps are contrast-normalized to 8-bit grayscale; masks are
    blended at 50% alpha over the optical image, or over black when no
    overlay is given.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _encode(obj, overlay, path)


def png_bytes(
    obj: FeatureMap | AnomalyMask | OpticalImage,
    overlay: OpticalImage | None = None,
) -> bytes:
    """In-memory PNG with the same rendering rules as export_map_png."""
    buf = io.BytesIO()
    _encode(obj, overlay, buf)
    return buf.getvalue()


def read_optical_png(path: str | Path) -> OpticalImage:
    """Load a grayscale or RGB PNG as an OpticalImage."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing optical image: {path}")
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return OpticalImage(np.asarray(img))
