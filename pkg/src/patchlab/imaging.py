"""Patch and frame pixel buffers, printability constraints, and compositing.

Patches hold float64 channels in [0, 255] so that sub-integer optimizer
updates survive between iterations; quantization to 8-bit happens only when
a patch is composited into a frame or exported to PNG. Frames are 8-bit.
All values here are immutable: the backing arrays are frozen and every
operation returns a new object.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidDimensionError, InvalidInputError
from .kernels import bilinear_resize, total_variation_sum


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Patch:
    """An RGB pixel grid, the optimization variable.

    pixels: (height, width, 3) float64, each channel in [0, 255] once
    constraints have been applied (fresh arithmetic may leave the range;
    ``clip_pixels`` restores it).
    """

    pixels: np.ndarray

    def __post_init__(self):
        pix = np.asarray(self.pixels, dtype=np.float64)
        if pix.ndim != 3 or pix.shape[2] != 3:
            raise InvalidInputError(f"patch pixels must be (h, w, 3), got {pix.shape}")
        if pix.shape[0] < 1 or pix.shape[1] < 1:
            raise InvalidDimensionError(f"patch dimensions must be >= 1, got {pix.shape[:2]}")
        object.__setattr__(self, "pixels", _frozen(pix))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Frame:
    """An 8-bit RGB scenario frame plus its approach metadata.

    timestamp is seconds from trial start; distance is meters from the
    patch/decision point. The campaign's canonical resolution is 1920x1080
    but every operation accepts arbitrary positive dimensions.
    """

    pixels: np.ndarray
    timestamp: float = 0.0
    distance: float = 0.0

    def __post_init__(self):
        pix = np.asarray(self.pixels)
        if pix.dtype != np.uint8:
            raise InvalidInputError(f"frame pixels must be uint8, got {pix.dtype}")
        if pix.ndim != 3 or pix.shape[2] != 3:
            raise InvalidInputError(f"frame pixels must be (h, w, 3), got {pix.shape}")
        if pix.shape[0] < 1 or pix.shape[1] < 1:
            raise InvalidDimensionError(f"frame dimensions must be >= 1, got {pix.shape[:2]}")
        object.__setattr__(self, "pixels", _frozen(pix))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Placement:
    """Target rectangle for a patch inside a frame, in pixels.

    May extend past the frame edges; compositing clips. Zero area is legal
    and composites to a no-op.
    """

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise InvalidInputError(f"placement extent must be >= 0, got w={self.w} h={self.h}")

    def shifted(self, dx: int, dy: int) -> "Placement":
        return dataclasses.replace(self, x=self.x + dx, y=self.y + dy)


def create_patch(width: int, height: int, seed: int) -> Patch:
    """Random-noise patch, each channel uniform over the RGB range, seeded."""
    if width < 1 or height < 1:
        raise InvalidDimensionError(f"patch dimensions must be >= 1, got {width}x{height}")
    rng = np.random.default_rng(seed)
    return Patch(rng.uniform(0.0, 255.0, size=(height, width, 3)))


def clip_pixels(patch: Patch) -> Patch:
    """Hard-clip every channel to [0, 255]. Idempotent."""
    return Patch(np.clip(patch.pixels, 0.0, 255.0))


def total_variation(patch: Patch) -> float:
    """Anisotropic L1 total variation, normalized by pixel count.

    Sum over all horizontally and vertically adjacent pixel pairs of the
    per-channel absolute differences, divided by width*height, so the
    regularization weight keeps its meaning across patch sizes.
    """
    return total_variation_sum(patch.pixels) / float(patch.width * patch.height)


def quantize_channels(values: np.ndarray) -> np.ndarray:
    """Round float channels half-up to the nearest 8-bit value."""
    return np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)


def composite(frame: Frame, patch: Patch, placement: Placement) -> Frame:
    """Render the patch into the frame.

    The patch is resampled to (placement.w, placement.h) with bilinear
    interpolation, quantized to 8-bit, and written over the placement
    rectangle clipped to the frame bounds. Pixels outside the placement are
    untouched; a zero-area placement returns the frame unchanged.
    """
    if placement.w == 0 or placement.h == 0:
        return frame

    x0 = max(placement.x, 0)
    y0 = max(placement.y, 0)
    x1 = min(placement.x + placement.w, frame.width)
    y1 = min(placement.y + placement.h, frame.height)
    if x0 >= x1 or y0 >= y1:
        return frame

    scaled = bilinear_resize(patch.pixels, placement.h, placement.w)
    region = scaled[y0 - placement.y : y1 - placement.y, x0 - placement.x : x1 - placement.x]

    out = frame.pixels.copy()
    out[y0:y1, x0:x1] = quantize_channels(region)
    return Frame(out, timestamp=frame.timestamp, distance=frame.distance)


def patch_to_png(patch: Patch) -> bytes:
    """Encode as 8-bit RGB PNG (no alpha); channels quantized half-up."""
    img = Image.fromarray(quantize_channels(patch.pixels), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def patch_from_png(data: bytes) -> Patch:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return Patch(np.asarray(img, dtype=np.float64))


def frame_to_png(frame: Frame) -> bytes:
    img = Image.fromarray(frame.pixels, mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def frame_from_png(data: bytes, timestamp: float = 0.0, distance: float = 0.0) -> Frame:
    """Decode PNG or JPEG bytes to an 8-bit RGB frame."""
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return Frame(np.asarray(img, dtype=np.uint8), timestamp=timestamp, distance=distance)
