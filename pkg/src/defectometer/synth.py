"""Synthetic micrograph generation with exact ground truth.

Renders the four defect morphologies seen in bright-field STEM of
irradiated ferritic steel (single-ring open ellipses, double-ring open
ellipses, solid ellipses, and solid circular dots) as dark anti-aliased
structures on a constant background, then blurs and adds noise.  Every
scene returns the generating ellipse parameters as ground-truth geometry,
which is the oracle the measurement pipeline is tested against.

Randomness comes from numpy's PCG64 generator seeded from the scene spec,
so fixtures are bit-reproducible for a given spec. Ring bands extend
*inward* from the generating ellipse, so the outer contour of a rendered
ring coincides with the generating ellipse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import BBox, DefectClass, Detection, GrayImage, GroundTruthLabel
from .evaluation import iou
from .geometry import DefectGeometry, EllipseFit, diameter_of
from .imaging import gaussian_blur

#: Ring band thickness as a fraction of the semi-major axis, with a 2 px floor.
RING_WIDTH_FRACTION = 0.15
RING_WIDTH_MIN_PX = 2.0
#: Second band of a double ring sits at this fraction of the outer radius.
INNER_RING_FRACTION = 0.7
#: Ground-truth boxes add this margin around the ellipse extent.
BOX_MARGIN_PX = 2.0

_SUPERSAMPLE = 4


class SpecViolation(ValueError):
    """A scene spec breaks the bounds or overlap rules."""


class Morphology(Enum):
    SINGLE_RING = "single_ring"
    DOUBLE_RING = "double_ring"
    SOLID_ELLIPSE = "solid_ellipse"
    SOLID_DOT = "solid_dot"


MORPHOLOGY_CLASS: dict[Morphology, DefectClass] = {
    Morphology.SINGLE_RING: DefectClass.LOOP_111,
    Morphology.DOUBLE_RING: DefectClass.LOOP_100,
    Morphology.SOLID_ELLIPSE: DefectClass.LOOP_100,
    Morphology.SOLID_DOT: DefectClass.BLACK_DOT,
}


@dataclass(frozen=True)
class DefectSpec:
    """One defect to render: morphology, generating ellipse, and contrast depth."""

    morphology: Morphology
    cx: float
    cy: float
    a: float
    b: float
    theta: float = 0.0
    depth: float = 0.4

    def __post_init__(self) -> None:
        if not (self.a >= self.b > 0):
            raise SpecViolation(f"semi-axes must satisfy a >= b > 0, got "
                                f"a={self.a}, b={self.b}")
        if self.morphology is Morphology.SOLID_DOT and self.a != self.b:
            raise SpecViolation("solid dots must be circular (a == b)")
        if self.depth <= 0:
            raise SpecViolation(f"contrast depth must be positive, got {self.depth}")

    @property
    def cls(self) -> DefectClass:
        return MORPHOLOGY_CLASS[self.morphology]

    def extent(self) -> tuple[float, float]:
        """Axis-aligned half-extents of the rotated ellipse."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        ex = math.sqrt((self.a * c) ** 2 + (self.b * s) ** 2)
        ey = math.sqrt((self.a * s) ** 2 + (self.b * c) ** 2)
        return ex, ey


@dataclass(frozen=True)
class SceneSpec:
    """A full synthetic scene. Construction validates all placement rules."""

    width: int
    height: int
    nm_per_pixel: float | None = None
    background_level: float = 0.75
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    defects: tuple[DefectSpec, ...] = ()
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise SpecViolation("canvas dimensions must be positive")
        if not (0.0 <= self.background_level <= 1.0):
            raise SpecViolation(f"background_level must lie in [0, 1], got "
                                f"{self.background_level}")
        if not (0.0 <= self.noise_sigma <= 0.5):
            raise SpecViolation(f"noise_sigma must lie in [0, 0.5], got "
                                f"{self.noise_sigma}")
        if self.blur_sigma < 0:
            raise SpecViolation(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        object.__setattr__(self, "defects", tuple(self.defects))
        for k, d in enumerate(self.defects):
            if d.depth > self.background_level:
                raise SpecViolation(
                    f"defects[{k}]: depth {d.depth} exceeds background level "
                    f"{self.background_level}")
            ex, ey = d.extent()
            if (d.cx - ex < 0 or d.cy - ey < 0
                    or d.cx + ex > self.width or d.cy + ey > self.height):
                raise SpecViolation(
                    f"defects[{k}]: ellipse leaves the {self.width}x"
                    f"{self.height} canvas")
        for i in range(len(self.defects)):
            for j in range(i + 1, len(self.defects)):
                di, dj = self.defects[i], self.defects[j]
                dist = math.hypot(di.cx - dj.cx, di.cy - dj.cy)
                if dist < di.a + dj.a:
                    raise SpecViolation(
                        f"defects[{i}] and defects[{j}] are closer ({dist:.1f}px) "
                        f"than half the sum of their major axes")


def _scaled_inside(xs: np.ndarray, ys: np.ndarray, d: DefectSpec,
                   a: float, b: float) -> np.ndarray:
    """Indicator of points inside the (a, b) ellipse concentric with d."""
    if a <= 0 or b <= 0:
        return np.zeros_like(xs, dtype=bool)
    c, s = math.cos(d.theta), math.sin(d.theta)
    dx = xs - d.cx
    dy = ys - d.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _indicator(xs: np.ndarray, ys: np.ndarray, d: DefectSpec) -> np.ndarray:
    if d.morphology is Morphology.SOLID_ELLIPSE or d.morphology is Morphology.SOLID_DOT:
        return _scaled_inside(xs, ys, d, d.a, d.b)
    t = max(RING_WIDTH_FRACTION * d.a, RING_WIDTH_MIN_PX)
    outer = _scaled_inside(xs, ys, d, d.a, d.b) \
        & ~_scaled_inside(xs, ys, d, d.a - t, d.b - t)
    if d.morphology is Morphology.SINGLE_RING:
        return outer
    a2 = INNER_RING_FRACTION * d.a
    b2 = INNER_RING_FRACTION * d.b
    t2 = max(RING_WIDTH_FRACTION * a2, RING_WIDTH_MIN_PX)
    inner = _scaled_inside(xs, ys, d, a2, b2) \
        & ~_scaled_inside(xs, ys, d, a2 - t2, b2 - t2)
    return outer | inner


def _render_defect(depth_map: np.ndarray, d: DefectSpec) -> None:
    h, w = depth_map.shape
    ex, ey = d.extent()
    x0 = max(0, math.floor(d.cx - ex - 2))
    y0 = max(0, math.floor(d.cy - ey - 2))
    x1 = min(w, math.ceil(d.cx + ex + 2))
    y1 = min(h, math.ceil(d.cy + ey + 2))
    ss = _SUPERSAMPLE
    xs = x0 + (np.arange((x1 - x0) * ss) + 0.5) / ss
    ys = y0 + (np.arange((y1 - y0) * ss) + 0.5) / ss
    grid_x, grid_y = np.meshgrid(xs, ys)
    cover = _indicator(grid_x, grid_y, d).astype(np.float64)
    cover = cover.reshape(y1 - y0, ss, x1 - x0, ss).mean(axis=(1, 3))
    window = depth_map[y0:y1, x0:x1]
    np.maximum(window, d.depth * cover, out=window)


def generate_scene(spec: SceneSpec) -> tuple[GrayImage,
                                             list[GroundTruthLabel],
                                             list[DefectGeometry]]:
    """Render a scene; returns the image, labels, and exact geometry.

    The returned geometry is the generating parameters, not a measurement.
    Output is a pure function of the spec (noise is seeded by the spec).
    """
    depth_map = np.zeros((spec.height, spec.width), dtype=np.float64)
    for d in spec.defects:
        _render_defect(depth_map, d)
    canvas = np.clip(spec.background_level - depth_map, 0.0, 1.0)
    img = GrayImage(canvas, spec.nm_per_pixel)
    if spec.blur_sigma > 0:
        img = gaussian_blur(img, spec.blur_sigma)
    if spec.noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(spec.rng_seed))
        noisy = img.pixels + rng.normal(0.0, spec.noise_sigma,
                                        size=img.pixels.shape)
        img = GrayImage(np.clip(noisy, 0.0, 1.0), spec.nm_per_pixel)

    scale = spec.nm_per_pixel if spec.nm_per_pixel is not None else 1.0
    labels: list[GroundTruthLabel] = []
    geoms: list[DefectGeometry] = []
    for d in spec.defects:
        ex, ey = d.extent()
        box = BBox(d.cx - ex - BOX_MARGIN_PX, d.cy - ey - BOX_MARGIN_PX,
                   d.cx + ex + BOX_MARGIN_PX, d.cy + ey + BOX_MARGIN_PX)
        clipped = box.clip(spec.width, spec.height)
        assert clipped is not None  # ellipse inside the canvas by spec invariant
        labels.append(GroundTruthLabel(clipped, d.cls))
        ellipse = EllipseFit(cx=d.cx, cy=d.cy, a=d.a, b=d.b,
                             theta=d.theta % math.pi)
        geoms.append(DefectGeometry(
            cls=d.cls, ellipse=ellipse,
            diameter_nm=diameter_of(ellipse, d.cls, spec.nm_per_pixel),
            area_nm2=math.pi * d.a * d.b * scale * scale))
    return img, labels, geoms


@dataclass(frozen=True)
class PerturbLog:
    """Provenance of a perturbation run, for exact downstream bookkeeping.

    ``kept`` holds (label index, detection index, achieved iou, flipped)
    for every surviving label, in label order; ``dropped`` the missed label
    indices; ``spurious`` the detection indices of invented boxes.
    """

    kept: tuple[tuple[int, int, float, bool], ...]
    dropped: tuple[int, ...]
    spurious: tuple[int, ...]


def _jitter_box(box: BBox, iou_floor: float,
                rng: np.random.Generator) -> tuple[BBox, float]:
    """Shift/scale a box while keeping IoU with the original >= the floor.

    A candidate perturbation is halved until the constraint holds, so the
    draw sequence is fixed regardless of the floor.
    """
    dx, dy = rng.uniform(-0.3, 0.3, size=2)
    sx, sy = rng.uniform(-0.15, 0.15, size=2)
    if iou_floor >= 1.0:
        return box, 1.0
    w, h = box.width, box.height
    for _ in range(24):
        grow_x = sx * w / 2.0
        grow_y = sy * h / 2.0
        cand = BBox(box.x_min + dx * w - grow_x, box.y_min + dy * h - grow_y,
                    box.x_max + dx * w + grow_x, box.y_max + dy * h + grow_y)
        v = iou(box, cand)
        if v >= iou_floor:
            return cand, v
        dx, dy, sx, sy = dx / 2, dy / 2, sx / 2, sy / 2
    return box, 1.0


def _spurious_box(labels: Sequence[GroundTruthLabel], width: float,
                  height: float, rng: np.random.Generator) -> BBox:
    """A box overlapping no label where the canvas allows it."""
    for _ in range(64):
        w = rng.uniform(6.0, min(40.0, width))
        h = rng.uniform(6.0, min(40.0, height))
        x0 = rng.uniform(0.0, width - w)
        y0 = rng.uniform(0.0, height - h)
        cand = BBox(x0, y0, x0 + w, y0 + h)
        if all(iou(cand, lab.bbox) == 0.0 for lab in labels):
            return cand
    return cand


def perturb_detections_logged(
        labels: Sequence[GroundTruthLabel],
        iou_floor: float,
        class_flip_prob: float = 0.0,
        miss_prob: float = 0.0,
        spurious_rate: float = 0.0,
        seed: int = 0,
        *,
        width: float | None = None,
        height: float | None = None,
) -> tuple[list[Detection], PerturbLog]:
    """Like :func:`perturb_detections`, also returning the perturbation log."""
    for name, p in (("iou_floor", iou_floor), ("class_flip_prob", class_flip_prob),
                    ("miss_prob", miss_prob)):
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"{name} must lie in [0, 1], got {p}")
    if spurious_rate < 0:
        raise ValueError(f"spurious_rate must be >= 0, got {spurious_rate}")
    if width is None or height is None:
        width = max((lab.bbox.x_max for lab in labels), default=64.0) + 16.0
        height = max((lab.bbox.y_max for lab in labels), default=64.0) + 16.0

    rng = np.random.Generator(np.random.PCG64(seed))
    others = {cls: [c for c in DefectClass if c is not cls] for cls in DefectClass}
    dets: list[Detection] = []
    kept: list[tuple[int, int, float, bool]] = []
    dropped: list[int] = []
    for idx, lab in enumerate(labels):
        if rng.random() < miss_prob:
            dropped.append(idx)
            continue
        box, achieved = _jitter_box(lab.bbox, iou_floor, rng)
        flipped = rng.random() < class_flip_prob
        cls = lab.cls
        if flipped:
            cls = others[lab.cls][int(rng.integers(0, 2))]
        score = float(np.clip(
            0.95 - 0.4 * (1.0 - achieved) - (0.25 if flipped else 0.0)
            + rng.uniform(-0.05, 0.05), 0.3, 0.999))
        kept.append((idx, len(dets), achieved, flipped))
        dets.append(Detection(bbox=box, cls=cls, score=score))

    spurious: list[int] = []
    n_spurious = int(rng.poisson(spurious_rate)) if spurious_rate > 0 else 0
    for _ in range(n_spurious):
        box = _spurious_box(labels, width, height, rng)
        cls = list(DefectClass)[int(rng.integers(0, 3))]
        score = float(rng.uniform(0.26, 0.55))
        spurious.append(len(dets))
        dets.append(Detection(bbox=box, cls=cls, score=score))
    return dets, PerturbLog(kept=tuple(kept), dropped=tuple(dropped),
                            spurious=tuple(spurious))


def perturb_detections(labels: Sequence[GroundTruthLabel],
                       iou_floor: float,
                       class_flip_prob: float = 0.0,
                       miss_prob: float = 0.0,
                       spurious_rate: float = 0.0,
                       seed: int = 0,
                       *,
                       width: float | None = None,
                       height: float | None = None) -> list[Detection]:
    """Simulate an imperfect detector from ground-truth labels.

    Kept labels get boxes jittered no further than ``iou_floor`` IoU from
    the original, classes flipped with ``class_flip_prob``, and scores that
    decrease with corruption; labels are dropped with ``miss_prob`` and
    spurious non-overlapping boxes are added at ``spurious_rate`` per image.
    Deterministic for a given seed.
    """
    dets, _ = perturb_detections_logged(
        labels, iou_floor, class_flip_prob, miss_prob, spurious_rate, seed,
        width=width, height=height)
    return dets
