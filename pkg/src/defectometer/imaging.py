"""Grayscale preprocessing: tile-based local contrast enhancement, Gaussian
blur, 3-channel composite synthesis, dihedral augmentation, padded cropping,
and grayscale image file I/O.

All operations are pure functions on :class:`~defectometer.core.GrayImage`
values and preserve the physical scale of their input.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import BBox, CompositeImage, GrayImage

log = logging.getLogger(__name__)

DEFAULT_CLIP_LIMIT = 0.01
DEFAULT_TILE_GRID = (8, 8)
DEFAULT_BINS = 256
DEFAULT_BLUR_SIGMA = 1.0


class ImageTooSmall(ValueError):
    """Image dimensions are below the tile grid."""


class EmptyCrop(ValueError):
    """The requested crop window misses the image entirely."""


@dataclass(frozen=True)
class ClaheParams:
    """Parameters for contrast-limited adaptive histogram equalization.

    ``clip_limit`` is the per-tile histogram ceiling expressed as a fraction
    of the tile's pixel count; clipped excess is redistributed uniformly
    across all bins.
    """

    clip_limit: float = DEFAULT_CLIP_LIMIT
    tile_grid: tuple[int, int] = DEFAULT_TILE_GRID
    bins: int = DEFAULT_BINS

    def __post_init__(self) -> None:
        if not (0.0 < self.clip_limit <= 1.0):
            raise ValueError(f"clip_limit must lie in (0, 1], got {self.clip_limit}")
        rows, cols = self.tile_grid
        if rows < 1 or cols < 1:
            raise ValueError(f"tile_grid entries must be >= 1, got {self.tile_grid}")
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")


def _tile_edges(extent: int, tiles: int) -> np.ndarray:
    return np.round(np.linspace(0.0, extent, tiles + 1)).astype(int)


def clahe(img: GrayImage, params: ClaheParams | None = None) -> GrayImage:
    """Contrast-limited adaptive histogram equalization.

    The image is divided into a grid of tiles; each tile's intensity
    histogram is clipped at ``clip_limit`` times the tile pixel count with
    the excess redistributed uniformly, and turned into a CDF mapping.
    Every pixel is remapped by bilinear interpolation of the four nearest
    tile mappings, with edge tiles extended past the border.
    """
    params = params or ClaheParams()
    rows, cols = params.tile_grid
    h, w = img.height, img.width
    if h < rows or w < cols:
        raise ImageTooSmall(
            f"image {w}x{h} smaller than tile grid {rows}x{cols}")

    bins = params.bins
    bin_idx = np.minimum((img.pixels * bins).astype(np.int64), bins - 1)

    y_edges = _tile_edges(h, rows)
    x_edges = _tile_edges(w, cols)
    lut = np.empty((rows, cols, bins), dtype=np.float64)
    for i in range(rows):
        for j in range(cols):
            tile = bin_idx[y_edges[i]:y_edges[i + 1], x_edges[j]:x_edges[j + 1]]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=bins).astype(np.float64)
            ceiling = params.clip_limit * n
            excess = np.maximum(hist - ceiling, 0.0).sum()
            hist = np.minimum(hist, ceiling) + excess / bins
            lut[i, j] = np.cumsum(hist) / n

    # Fractional tile coordinates of every pixel centre; interpolation knots
    # are the tile centres, clamped at the edges.
    y_centers = (y_edges[:-1] + y_edges[1:]) / 2.0
    x_centers = (x_edges[:-1] + x_edges[1:]) / 2.0
    fy = np.interp(np.arange(h) + 0.5, y_centers, np.arange(rows, dtype=np.float64))
    fx = np.interp(np.arange(w) + 0.5, x_centers, np.arange(cols, dtype=np.float64))
    y0 = np.floor(fy).astype(int)
    x0 = np.floor(fx).astype(int)
    y1 = np.minimum(y0 + 1, rows - 1)
    x1 = np.minimum(x0 + 1, cols - 1)
    wy = (fy - y0)[:, None]
    wx = (fx - x0)[None, :]

    out = ((1 - wy) * (1 - wx) * lut[y0[:, None], x0[None, :], bin_idx]
           + (1 - wy) * wx * lut[y0[:, None], x1[None, :], bin_idx]
           + wy * (1 - wx) * lut[y1[:, None], x0[None, :], bin_idx]
           + wy * wx * lut[y1[:, None], x1[None, :], bin_idx])
    return GrayImage(np.clip(out, 0.0, 1.0), img.nm_per_pixel)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian truncated at radius ceil(4*sigma), normalized to sum 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian convolution with reflect border padding."""
    k = gaussian_kernel(sigma)
    px = ndimage.correlate1d(img.pixels, k, axis=0, mode="reflect")
    px = ndimage.correlate1d(px, k, axis=1, mode="reflect")
    return GrayImage(np.clip(px, 0.0, 1.0), img.nm_per_pixel)


def synthesize_channels(img: GrayImage,
                        clahe_params: ClaheParams | None = None,
                        sigma: float = DEFAULT_BLUR_SIGMA) -> CompositeImage:
    """Build the 3-channel composite: R = raw, G = contrast-enhanced, B = blurred."""
    return CompositeImage(r=img,
                          g=clahe(img, clahe_params),
                          b=gaussian_blur(img, sigma))


class DihedralTransform(Enum):
    """The eight lossless symmetries of the square (rotations and flips).

    Rotations are counterclockwise in the conventional x-right / y-down
    image frame. ``TRANSPOSE`` flips about the main diagonal,
    ``ANTI_TRANSPOSE`` about the anti-diagonal.
    """

    IDENTITY = "id"
    ROT90 = "r90"
    ROT180 = "r180"
    ROT270 = "r270"
    FLIP_H = "fh"
    FLIP_V = "fv"
    TRANSPOSE = "d1"
    ANTI_TRANSPOSE = "d2"

    @property
    def inverse(self) -> "DihedralTransform":
        if self is DihedralTransform.ROT90:
            return DihedralTransform.ROT270
        if self is DihedralTransform.ROT270:
            return DihedralTransform.ROT90
        return self

    @property
    def swaps_axes(self) -> bool:
        return self in (DihedralTransform.ROT90, DihedralTransform.ROT270,
                        DihedralTransform.TRANSPOSE,
                        DihedralTransform.ANTI_TRANSPOSE)


def _transform_array(a: np.ndarray, t: DihedralTransform) -> np.ndarray:
    if t is DihedralTransform.IDENTITY:
        out = a
    elif t is DihedralTransform.ROT90:
        out = np.rot90(a, 1)
    elif t is DihedralTransform.ROT180:
        out = np.rot90(a, 2)
    elif t is DihedralTransform.ROT270:
        out = np.rot90(a, 3)
    elif t is DihedralTransform.FLIP_H:
        out = a[:, ::-1]
    elif t is DihedralTransform.FLIP_V:
        out = a[::-1, :]
    elif t is DihedralTransform.TRANSPOSE:
        out = a.T
    else:
        out = a[::-1, ::-1].T
    return np.ascontiguousarray(out)


def _transform_point(x: float, y: float, w: float, h: float,
                     t: DihedralTransform) -> tuple[float, float]:
    if t is DihedralTransform.IDENTITY:
        return x, y
    if t is DihedralTransform.ROT90:
        return y, w - x
    if t is DihedralTransform.ROT180:
        return w - x, h - y
    if t is DihedralTransform.ROT270:
        return h - y, x
    if t is DihedralTransform.FLIP_H:
        return w - x, y
    if t is DihedralTransform.FLIP_V:
        return x, h - y
    if t is DihedralTransform.TRANSPOSE:
        return y, x
    return h - y, w - x


def transform_box(box: BBox, width: float, height: float,
                  t: DihedralTransform) -> BBox:
    """Map a box through a dihedral transform of a width x height canvas."""
    xa, ya = _transform_point(box.x_min, box.y_min, width, height, t)
    xb, yb = _transform_point(box.x_max, box.y_max, width, height, t)
    return BBox(min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb))


def augment(img: GrayImage, boxes: list[BBox],
            t: DihedralTransform) -> tuple[GrayImage, list[BBox]]:
    """Apply a dihedral transform to an image and its boxes together."""
    out = GrayImage(_transform_array(img.pixels, t), img.nm_per_pixel)
    w, h = img.width, img.height
    return out, [transform_box(b, w, h, t) for b in boxes]


def crop(img: GrayImage, box: BBox, pad: float = 0.0
         ) -> tuple[GrayImage, tuple[int, int]]:
    """Extract the patch covering ``box`` expanded by ``pad`` on every side.

    The window is intersected with the image; the returned offset is the
    patch's top-left corner in image coordinates, so geometry fitted in
    patch coordinates can be mapped back.
    """
    if pad < 0:
        raise ValueError(f"pad must be non-negative, got {pad}")
    x0 = max(0, math.floor(box.x_min - pad))
    y0 = max(0, math.floor(box.y_min - pad))
    x1 = min(img.width, math.ceil(box.x_max + pad))
    y1 = min(img.height, math.ceil(box.y_max + pad))
    if x0 >= x1 or y0 >= y1:
        raise EmptyCrop(f"crop of {box.as_list()} with pad {pad} misses the "
                        f"{img.width}x{img.height} image")
    return GrayImage(img.pixels[y0:y1, x0:x1], img.nm_per_pixel), (x0, y0)


def read_gray(path: str | Path, nm_per_pixel: float | None = None) -> GrayImage:
    """Read an 8- or 16-bit grayscale PNG/TIFF, normalized to [0, 1].

    Multi-channel inputs are reduced to their first channel with a warning.
    """
    with Image.open(path) as im:
        im.load()
        if im.mode in ("RGB", "RGBA", "RGBX"):
            log.warning("%s: %d-channel image; using the first channel",
                        path, len(im.getbands()))
            im = im.getchannel(0)
        arr = np.asarray(im)
    if arr.ndim == 3:
        log.warning("%s: multi-channel pixel data; using the first channel", path)
        arr = arr[:, :, 0]
    if arr.dtype == np.uint8:
        px = arr.astype(np.float64) / 255.0
    elif arr.dtype == np.uint16:
        px = arr.astype(np.float64) / 65535.0
    elif arr.dtype in (np.int32, np.uint32):
        # 16-bit data in a 32-bit integer container.
        px = arr.astype(np.float64) / 65535.0
    elif np.issubdtype(arr.dtype, np.floating):
        px = arr.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported pixel type {arr.dtype}")
    return GrayImage(np.clip(px, 0.0, 1.0), nm_per_pixel)


def write_gray(img: GrayImage, path: str | Path) -> None:
    """Write a grayscale image as 16-bit PNG/TIFF."""
    arr = np.round(img.pixels * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(path)


def write_composite(comp: CompositeImage, path: str | Path) -> None:
    """Write a composite as an 8-bit 3-channel PNG."""
    stack = np.stack([np.round(c.pixels * 255.0).astype(np.uint8)
                      for c in (comp.r, comp.g, comp.b)], axis=-1)
    Image.fromarray(stack, mode="RGB").save(path)
