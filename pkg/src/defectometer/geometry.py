"""Per-defect geometry extraction: marker-based watershed segmentation of a
bounding-box patch followed by a direct least-squares ellipse fit of the
segment's outer contour.

The segmentation pipeline, applied to a padded crop around each box:

1. polarity normalization: the patch is inverted when the proposal-area
   mean exceeds the border-ring mean, so defects are always dark;
2. Otsu threshold on the intensity histogram;
3. morphological opening (3x3 cross, one iteration);
4. exact Euclidean distance transform; seeds = distance >= 0.5 * max;
5. sure background = complement of the foreground dilated three times;
6. connected-component labeling of the seeds;
7. marker-based watershed flood over the inverted-intensity surface, with
   neighbor-difference priorities so region fronts stall on edges and the
   recovered boundary sits at the half-level of a blurred step edge.

The mask is the union of non-background regions meeting the central
proposal area of the patch.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BBox, DefectClass, GrayImage
from .imaging import crop

#: Crop padding around a box, as a fraction of its larger side.
CROP_PAD_FRACTION = 0.2

#: Boundary pixels are reported at their centres, half a pixel inside the
#: continuous region boundary; fitted semi-axes are corrected outward.
BOUNDARY_CENTER_CORRECTION = 0.5

_CROSS = ndimage.generate_binary_structure(2, 1)
_SQUARE = ndimage.generate_binary_structure(2, 2)

#: A binary mask over a patch; foreground marks defect pixels.
SegmentationMask = np.ndarray


class PatchTooSmall(ValueError):
    """Patch below the 8x8 minimum needed for segmentation."""


class NoForeground(Exception):
    """No defect-like region was found in the patch."""


class DegenerateFit(ValueError):
    """Boundary points do not determine an ellipse."""


@dataclass(frozen=True)
class EllipseFit:
    """Ellipse in image coordinates: centre, semi-axes (a >= b), and the
    major-axis angle from +x in [0, pi)."""

    cx: float
    cy: float
    a: float
    b: float
    theta: float

    def __post_init__(self) -> None:
        if not (self.a >= self.b > 0):
            raise ValueError(f"semi-axes must satisfy a >= b > 0, got "
                             f"a={self.a}, b={self.b}")
        if not (0.0 <= self.theta < math.pi):
            raise ValueError(f"theta must lie in [0, pi), got {self.theta}")


@dataclass(frozen=True)
class DefectGeometry:
    """Fitted physical geometry of one defect.

    ``diameter_nm`` and ``area_nm2`` are in nm / nm^2 when the source image
    carries a physical scale, otherwise in pixels / pixels^2.
    """

    cls: DefectClass
    ellipse: EllipseFit
    diameter_nm: float
    area_nm2: float


def diameter_of(ellipse: EllipseFit, cls: DefectClass,
                nm_per_pixel: float | None = None) -> float:
    """Class-specific defect diameter.

    Loops are measured by their major axis (2a); black dots by the
    geometric-mean diameter 2*sqrt(a*b). Scaled to nm when a physical
    scale is given, else returned in pixels.
    """
    if cls is DefectClass.BLACK_DOT:
        d = 2.0 * math.sqrt(ellipse.a * ellipse.b)
    else:
        d = 2.0 * ellipse.a
    return d * (nm_per_pixel if nm_per_pixel is not None else 1.0)


def _proposal_region(h: int, w: int) -> tuple[slice, slice]:
    # Central rectangle matching the un-padded proposal box: the crop adds
    # CROP_PAD_FRACTION on each side, so the box spans 1/(1+2*pad) of the patch.
    frac = 1.0 / (1.0 + 2.0 * CROP_PAD_FRACTION)
    ch = max(1, round(h * frac))
    cw = max(1, round(w * frac))
    y0 = (h - ch) // 2
    x0 = (w - cw) // 2
    return slice(y0, y0 + ch), slice(x0, x0 + cw)


def _normalize_polarity(px: np.ndarray) -> np.ndarray:
    """Invert the patch when the defect region is brighter than the border.

    Compares the central proposal-area mean against a border-ring mean with
    a small hysteresis margin so near-flat patches are not flipped by noise.
    """
    h, w = px.shape
    bw = max(1, min(h, w) // 10)
    ring = np.ones((h, w), dtype=bool)
    ring[bw:h - bw, bw:w - bw] = False
    ys, xs = _proposal_region(h, w)
    margin = 0.02 * (float(px.max()) - float(px.min()))
    if float(px[ys, xs].mean()) > float(px[ring].mean()) + margin:
        return 1.0 - px
    return px


def _otsu_threshold(px: np.ndarray, bins: int = 256) -> float | None:
    """Otsu's threshold over a [0, 1] histogram; None when degenerate."""
    hist, edges = np.histogram(px, bins=bins, range=(0.0, 1.0))
    hist = hist.astype(np.float64)
    total = hist.sum()
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(hist)
    w1 = total - w0
    mass0 = np.cumsum(hist * centers)
    mass_total = mass0[-1]
    valid = (w0[:-1] > 0) & (w1[:-1] > 0)
    if not valid.any():
        return None
    mu0 = np.where(w0[:-1] > 0, mass0[:-1] / np.maximum(w0[:-1], 1e-300), 0.0)
    mu1 = np.where(w1[:-1] > 0,
                   (mass_total - mass0[:-1]) / np.maximum(w1[:-1], 1e-300), 0.0)
    between = np.where(valid, w0[:-1] * w1[:-1] * (mu0 - mu1) ** 2, -1.0)
    k = int(np.argmax(between))
    if between[k] <= 0:
        return None
    return float(edges[k + 1])


def _watershed_flood(surface: np.ndarray, markers: np.ndarray) -> np.ndarray:
    """Marker-based watershed of a 2-D surface.

    Meyer's flooding with a priority queue: an unlabeled pixel is claimed
    by the neighboring region whose frontier reaches it with the smallest
    intensity step, FIFO on ties, so the result is deterministic and
    region boundaries settle on the steepest part of an edge.
    """
    h, w = surface.shape
    labels = markers.copy()
    counter = itertools.count()
    heap: list[tuple[float, int, int, int, int]] = []

    seeds_y, seeds_x = np.nonzero(labels)
    for y, x in zip(seeds_y.tolist(), seeds_x.tolist()):
        lab = int(labels[y, x])
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and labels[ny, nx] == 0:
                pri = abs(float(surface[ny, nx]) - float(surface[y, x]))
                heapq.heappush(heap, (pri, next(counter), ny, nx, lab))

    while heap:
        _, _, y, x, lab = heapq.heappop(heap)
        if labels[y, x] != 0:
            continue
        labels[y, x] = lab
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and labels[ny, nx] == 0:
                pri = abs(float(surface[ny, nx]) - float(surface[y, x]))
                heapq.heappush(heap, (pri, next(counter), ny, nx, lab))
    return labels


def segment_defect(patch: GrayImage) -> SegmentationMask:
    """Segment the defect in a padded box patch; returns a boolean mask.

    Raises :class:`NoForeground` when the patch has no contrast, thresholds
    to nothing, or no watershed region meets the central proposal area:
    the signature of an empty or false-positive box.
    """
    h, w = patch.height, patch.width
    if h < 8 or w < 8:
        raise PatchTooSmall(f"patch {w}x{h} below the 8x8 minimum")
    px = _normalize_polarity(patch.pixels)

    thr = _otsu_threshold(px)
    if thr is None:
        raise NoForeground("patch intensity histogram is degenerate")
    fg = px < thr
    fg = ndimage.binary_opening(fg, structure=_CROSS)
    if not fg.any():
        raise NoForeground("no foreground survives thresholding and opening")

    dist = ndimage.distance_transform_edt(fg)
    sure_fg = dist >= 0.5 * float(dist.max())
    sure_bg = ~ndimage.binary_dilation(fg, structure=_CROSS, iterations=3)

    markers, n_seeds = ndimage.label(sure_fg, structure=_SQUARE)
    if n_seeds == 0:
        raise NoForeground("no watershed seeds")
    bg_label = n_seeds + 1
    markers[sure_bg] = bg_label

    labels = _watershed_flood(1.0 - px, markers)

    ys, xs = _proposal_region(h, w)
    central = np.unique(labels[ys, xs])
    keep = [int(v) for v in central if 0 < v < bg_label]
    if not keep:
        raise NoForeground("no region meets the patch centre")
    mask = np.isin(labels, keep)
    return mask


def mask_outer_boundary(mask: SegmentationMask) -> np.ndarray:
    """Outer-contour pixel centres of the mask's largest 8-connected component.

    Returns an (n, 2) array of (x, y). Interior holes (ring morphologies) do
    not contribute: only pixels 8-adjacent to background reachable from the
    patch border are kept, so the fit measures the defect's outer extent.
    """
    labels, n = ndimage.label(mask, structure=_SQUARE)
    if n == 0:
        return np.empty((0, 2), dtype=np.float64)
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, n + 1))
    comp = labels == (int(np.argmax(sizes)) + 1)

    bg_labels, _ = ndimage.label(~comp, structure=_CROSS)
    border_ids = np.unique(np.concatenate([
        bg_labels[0, :], bg_labels[-1, :], bg_labels[:, 0], bg_labels[:, -1]]))
    border_ids = border_ids[border_ids > 0]
    if border_ids.size:
        exterior = np.isin(bg_labels, border_ids)
        boundary = comp & ndimage.binary_dilation(exterior, structure=_SQUARE)
    else:
        # Component touches every border pixel; its outer contour is the frame.
        frame = np.zeros_like(comp)
        frame[0, :] = frame[-1, :] = True
        frame[:, 0] = frame[:, -1] = True
        boundary = comp & frame
    ys_b, xs_b = np.nonzero(boundary)
    return np.column_stack([xs_b + 0.5, ys_b + 0.5]).astype(np.float64)


def fit_ellipse(points: np.ndarray) -> EllipseFit:
    """Direct least-squares conic fit constrained to an ellipse.

    Uses the numerically stable partitioned form of the 4ac - b^2 = 1
    constrained fit; input points are centred first so the result is
    translation invariant to machine precision. Requires at least five
    non-collinear points.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 5:
        raise DegenerateFit(f"need >= 5 (x, y) points, got shape {pts.shape}")
    mean = pts.mean(axis=0)
    x = pts[:, 0] - mean[0]
    y = pts[:, 1] - mean[1]

    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as exc:
        raise DegenerateFit("scatter matrix is singular (collinear points?)") from exc
    m = s1 + s2 @ t
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    try:
        eigval, eigvec = np.linalg.eig(m)
    except np.linalg.LinAlgError as exc:
        raise DegenerateFit("eigen decomposition failed") from exc
    eigvec = np.real(eigvec)
    cond = 4.0 * eigvec[0] * eigvec[2] - eigvec[1] ** 2
    k = int(np.argmax(cond))
    if cond[k] <= 0:
        raise DegenerateFit("no conic with an elliptical discriminant")
    a1 = eigvec[:, k]
    a2 = t @ a1
    return _conic_to_ellipse(np.concatenate([a1, a2]), mean)


def _conic_to_ellipse(coeffs: np.ndarray, shift: np.ndarray) -> EllipseFit:
    """Convert A x^2 + B xy + C y^2 + D x + E y + F = 0 to geometric form."""
    a_, b_, c_, d_, e_, f_ = (float(v) for v in coeffs)
    if a_ + c_ < 0:
        a_, b_, c_, d_, e_, f_ = -a_, -b_, -c_, -d_, -e_, -f_
    m2 = np.array([[a_, b_ / 2.0], [b_ / 2.0, c_]])
    det = a_ * c_ - b_ * b_ / 4.0
    if det <= 0:
        raise DegenerateFit("conic is not an ellipse")
    cx, cy = np.linalg.solve(2.0 * m2, [-d_, -e_])
    k0 = f_ + (d_ * cx + e_ * cy) / 2.0
    if k0 >= 0:
        raise DegenerateFit("conic is degenerate at its centre")
    scaled = m2 / (-k0)
    eigval, eigvec = np.linalg.eigh(scaled)
    if eigval[0] <= 0:
        raise DegenerateFit("conic is not an ellipse")
    a = 1.0 / math.sqrt(float(eigval[0]))
    b = 1.0 / math.sqrt(float(eigval[1]))
    vx, vy = float(eigvec[0, 0]), float(eigvec[1, 0])
    theta = math.atan2(vy, vx) % math.pi
    if theta >= math.pi:  # guard against atan2 returning exactly pi
        theta -= math.pi
    return EllipseFit(cx=float(cx + shift[0]), cy=float(cy + shift[1]),
                      a=a, b=b, theta=theta)


def analyze_defect(img: GrayImage, box: BBox,
                   cls: DefectClass) -> DefectGeometry | None:
    """Measure one boxed defect: crop, segment, fit, and scale.

    Returns ``None`` for unfittable boxes (no segmentable foreground, or a
    contour too degenerate for an ellipse) rather than raising.
    """
    pad = CROP_PAD_FRACTION * max(box.width, box.height)
    patch, (ox, oy) = crop(img, box, pad)
    try:
        mask = segment_defect(patch)
    except (NoForeground, PatchTooSmall):
        return None
    points = mask_outer_boundary(mask)
    try:
        fit = fit_ellipse(points)
    except DegenerateFit:
        return None

    corr = BOUNDARY_CENTER_CORRECTION
    ellipse = EllipseFit(cx=fit.cx + ox, cy=fit.cy + oy,
                         a=fit.a + corr, b=fit.b + corr, theta=fit.theta)
    scale = img.nm_per_pixel if img.nm_per_pixel is not None else 1.0
    return DefectGeometry(
        cls=cls,
        ellipse=ellipse,
        diameter_nm=diameter_of(ellipse, cls, img.nm_per_pixel),
        area_nm2=math.pi * ellipse.a * ellipse.b * scale * scale,
    )
