"""Domain types shared by every stage of the pipeline, plus the annotation
JSON data model.

Coordinate conventions
----------------------
Pixel coordinates are real-valued, x rightward, y downward, origin at the
top-left corner of the image.  A bounding box covers the half-open region
``[x_min, x_max) x [y_min, y_max)``: on integer corners this makes
pixel-counting and analytic box arithmetic agree exactly.

All types are immutable value objects after construction and safe to share
between concurrent workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

# Physical-scale sanity bounds, nm per pixel.
NM_PER_PIXEL_MIN = 0.01
NM_PER_PIXEL_MAX = 100.0


class DatasetError(Exception):
    """Base class for annotation-dataset validation failures."""


class MalformedFile(DatasetError):
    """The annotation file does not parse or violates the schema."""


class UnknownClass(DatasetError):
    """A class string is outside the three-value defect taxonomy."""


class NonPositiveBox(DatasetError):
    """A bounding box has zero area after clipping to the image bounds."""


class DefectClass(Enum):
    """The three defect categories.

    The four visual morphologies seen in bright-field STEM collapse onto
    these: a single-ring open ellipse is a LOOP_111; double-ring open
    ellipses and closed solid ellipses are LOOP_100; small closed circular
    dots are BLACK_DOT.
    """

    LOOP_111 = "loop111"
    LOOP_100 = "loop100"
    BLACK_DOT = "blackdot"

    @classmethod
    def from_string(cls, value: str) -> "DefectClass":
        for member in cls:
            if member.value == value:
                return member
        raise UnknownClass(f"unknown defect class {value!r}; "
                           f"expected one of {[m.value for m in cls]}")


#: Canonical class ordering used by confusion matrices and reports.
CLASS_ORDER: tuple[DefectClass, ...] = (
    DefectClass.LOOP_111,
    DefectClass.BLACK_DOT,
    DefectClass.LOOP_100,
)


@dataclass(frozen=True)
class GrayImage:
    """A single-channel intensity grid with optional physical scale.

    ``pixels`` is a read-only ``(height, width)`` float64 array with every
    value in [0, 1].  ``nm_per_pixel`` is the physical sampling scale;
    ``None`` means pixel-only analysis downstream.
    """

    pixels: np.ndarray
    nm_per_pixel: float | None = None

    def __post_init__(self) -> None:
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("pixels must be a non-empty 2-D array")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixel intensities must be finite")
        if float(px.min()) < 0.0 or float(px.max()) > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        if self.nm_per_pixel is not None:
            s = float(self.nm_per_pixel)
            if not (NM_PER_PIXEL_MIN <= s <= NM_PER_PIXEL_MAX):
                raise ValueError(
                    f"nm_per_pixel {s} outside sanity bounds "
                    f"[{NM_PER_PIXEL_MIN}, {NM_PER_PIXEL_MAX}]")
            object.__setattr__(self, "nm_per_pixel", s)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


@dataclass(frozen=True)
class CompositeImage:
    """Three co-registered grayscale planes: raw, contrast-enhanced, blurred."""

    r: GrayImage
    g: GrayImage
    b: GrayImage

    def __post_init__(self) -> None:
        dims = {(c.width, c.height) for c in (self.r, self.g, self.b)}
        if len(dims) != 1:
            raise ValueError("composite channels must share dimensions")

    @property
    def width(self) -> int:
        return self.r.width

    @property
    def height(self) -> int:
        return self.r.height


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box over the half-open region [x_min, x_max) x [y_min, y_max)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box coordinates must be finite, got {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"box must have strictly positive area, got {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def area(self) -> float:
        return self.width * self.height

    def clip(self, width: float, height: float) -> "BBox | None":
        """Intersect with the image rectangle; None if the result is empty."""
        x0 = max(0.0, float(self.x_min))
        y0 = max(0.0, float(self.y_min))
        x1 = min(float(width), float(self.x_max))
        y1 = min(float(height), float(self.y_max))
        if x0 >= x1 or y0 >= y1:
            return None
        return BBox(x0, y0, x1, y1)

    def as_list(self) -> list[float]:
        return [float(self.x_min), float(self.y_min),
                float(self.x_max), float(self.y_max)]


@dataclass(frozen=True)
class GroundTruthLabel:
    """A human-assigned box and class."""

    bbox: BBox
    cls: DefectClass


@dataclass(frozen=True)
class Detection:
    """A detector-proposed box, class, and confidence score in [0, 1]."""

    bbox: BBox
    cls: DefectClass
    score: float

    def __post_init__(self) -> None:
        s = float(self.score)
        if not (0.0 <= s <= 1.0):
            raise ValueError(f"detection score must lie in [0, 1], got {s}")
        object.__setattr__(self, "score", s)


@dataclass(frozen=True)
class AnnotatedImage:
    """One micrograph record: image reference, labels, and detections."""

    id: str
    path: str
    width: int
    height: int
    nm_per_pixel: float | None = None
    labels: tuple[GroundTruthLabel, ...] = ()
    detections: tuple[Detection, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("image id must be a non-empty string")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image {self.id!r}: dimensions must be positive")
        if self.nm_per_pixel is not None:
            s = float(self.nm_per_pixel)
            if not (NM_PER_PIXEL_MIN <= s <= NM_PER_PIXEL_MAX):
                raise ValueError(
                    f"image {self.id!r}: nm_per_pixel {s} outside "
                    f"[{NM_PER_PIXEL_MIN}, {NM_PER_PIXEL_MAX}]")
            object.__setattr__(self, "nm_per_pixel", s)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "detections", tuple(self.detections))
        for kind, items in (("labels", self.labels), ("detections", self.detections)):
            for i, item in enumerate(items):
                b = item.bbox
                if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                    raise ValueError(
                        f"image {self.id!r}: {kind}[{i}] box {b.as_list()} "
                        f"exceeds image bounds {self.width}x{self.height}")


@dataclass
class LoadResult:
    """Dataset loaded from annotation JSON, plus ingest warnings."""

    images: list[AnnotatedImage]
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self):
        return iter(self.images)


def _require(record: dict, key: str, context: str):
    if key not in record:
        raise MalformedFile(f"{context}: missing required field {key!r}")
    return record[key]


def _as_number(value, context: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedFile(f"{context}: expected a number, got {value!r}")
    return float(value)


def _parse_bbox(raw, context: str) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise MalformedFile(f"{context}: bbox must be a 4-element array, got {raw!r}")
    x0, y0, x1, y1 = (_as_number(v, context) for v in raw)
    if not (x0 < x1 and y0 < y1):
        raise NonPositiveBox(f"{context}: box {raw!r} has non-positive extent")
    return BBox(x0, y0, x1, y1)


def _clip_box(box: BBox, width: int, height: int, context: str,
              warnings: list[str]) -> BBox:
    clipped = box.clip(width, height)
    if clipped is None:
        raise NonPositiveBox(
            f"{context}: box {box.as_list()} has zero area after clipping to "
            f"{width}x{height}")
    if clipped != box:
        warnings.append(
            f"{context}: box {box.as_list()} clipped to {clipped.as_list()}")
    return clipped


def load_dataset(path: str | Path) -> LoadResult:
    """Load an annotation JSON file.

    Boxes overhanging the image are clipped and reported as warnings; a box
    with no area left after clipping rejects the file.  Image ids must be
    unique.  Record ordering follows the file.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: "
            f"{exc.msg}") from exc

    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise MalformedFile(f"{path}: top level must be an object with an "
                            f"'images' array")

    images: list[AnnotatedImage] = []
    warnings: list[str] = []
    seen_ids: set[str] = set()
    for i, rec in enumerate(doc["images"]):
        ctx = f"{path.name}: images[{i}]"
        if not isinstance(rec, dict):
            raise MalformedFile(f"{ctx}: expected an object")
        image_id = _require(rec, "id", ctx)
        if not isinstance(image_id, str) or not image_id:
            raise MalformedFile(f"{ctx}: 'id' must be a non-empty string")
        ctx = f"{path.name}: images[{i}] id={image_id!r}"
        if image_id in seen_ids:
            raise MalformedFile(f"{ctx}: duplicate image id")
        seen_ids.add(image_id)

        img_path = _require(rec, "path", ctx)
        if not isinstance(img_path, str):
            raise MalformedFile(f"{ctx}: 'path' must be a string")
        width = _require(rec, "width", ctx)
        height = _require(rec, "height", ctx)
        if not isinstance(width, int) or not isinstance(height, int) \
                or isinstance(width, bool) or isinstance(height, bool) \
                or width < 1 or height < 1:
            raise MalformedFile(f"{ctx}: width/height must be positive integers")
        nm = rec.get("nm_per_pixel")
        if nm is not None:
            nm = _as_number(nm, f"{ctx}: nm_per_pixel")
            if not (NM_PER_PIXEL_MIN <= nm <= NM_PER_PIXEL_MAX):
                raise MalformedFile(
                    f"{ctx}: nm_per_pixel {nm} outside "
                    f"[{NM_PER_PIXEL_MIN}, {NM_PER_PIXEL_MAX}]")

        labels: list[GroundTruthLabel] = []
        for j, lab in enumerate(rec.get("labels", [])):
            lctx = f"{ctx} labels[{j}]"
            if not isinstance(lab, dict):
                raise MalformedFile(f"{lctx}: expected an object")
            cls_str = _require(lab, "class", lctx)
            if not isinstance(cls_str, str):
                raise MalformedFile(f"{lctx}: 'class' must be a string")
            try:
                cls = DefectClass.from_string(cls_str)
            except UnknownClass as exc:
                raise UnknownClass(f"{lctx}: {exc}") from None
            box = _parse_bbox(_require(lab, "bbox", lctx), lctx)
            labels.append(GroundTruthLabel(
                _clip_box(box, width, height, lctx, warnings), cls))

        detections: list[Detection] = []
        for j, det in enumerate(rec.get("detections", [])):
            dctx = f"{ctx} detections[{j}]"
            if not isinstance(det, dict):
                raise MalformedFile(f"{dctx}: expected an object")
            cls_str = _require(det, "class", dctx)
            if not isinstance(cls_str, str):
                raise MalformedFile(f"{dctx}: 'class' must be a string")
            try:
                cls = DefectClass.from_string(cls_str)
            except UnknownClass as exc:
                raise UnknownClass(f"{dctx}: {exc}") from None
            box = _parse_bbox(_require(det, "bbox", dctx), dctx)
            score = _as_number(_require(det, "score", dctx), f"{dctx}: score")
            if not (0.0 <= score <= 1.0):
                raise MalformedFile(f"{dctx}: score {score} outside [0, 1]")
            detections.append(Detection(
                _clip_box(box, width, height, dctx, warnings), cls, score))

        images.append(AnnotatedImage(
            id=image_id, path=img_path, width=width, height=height,
            nm_per_pixel=nm, labels=tuple(labels), detections=tuple(detections)))

    return LoadResult(images=images, warnings=warnings)


def save_dataset(images: Iterable[AnnotatedImage]) -> bytes:
    """Serialize a dataset to annotation JSON bytes.

    Round-trip stable: loading the output reproduces every field exactly
    (floats are emitted with shortest round-trip precision, which carries
    at least 9 significant digits when needed).
    """
    doc = {"images": [
        {
            "id": img.id,
            "path": img.path,
            "width": img.width,
            "height": img.height,
            "nm_per_pixel": img.nm_per_pixel,
            "labels": [
                {"class": lab.cls.value, "bbox": lab.bbox.as_list()}
                for lab in img.labels
            ],
            "detections": [
                {"class": det.cls.value, "bbox": det.bbox.as_list(),
                 "score": det.score}
                for det in img.detections
            ],
        }
        for img in images
    ]}
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")
