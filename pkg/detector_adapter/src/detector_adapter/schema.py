"""The annotation JSON wire format shared with the analysis toolkit.

This module implements the schema contract directly: reading, validating,
and writing documents of the form::

    {"images": [{"id": str, "path": str, "width": int, "height": int,
                 "nm_per_pixel": number | null,
                 "labels":     [{"class": ..., "bbox": [x0, y0, x1, y1]}],
                 "detections": [{"class": ..., "bbox": [...], "score": s}]}]}

Boxes are half-open pixel rectangles with the origin at the top-left.
Every document is validated before it is written, so downstream consumers
never see malformed output.
"""

from __future__ import annotations

import json
from pathlib import Path

CLASS_NAMES = ("loop111", "loop100", "blackdot")


class SchemaError(ValueError):
    """The document violates the annotation schema."""


def _check_bbox(raw, width: float, height: float, context: str) -> None:
    if not isinstance(raw, list) or len(raw) != 4:
        raise SchemaError(f"{context}: bbox must be a 4-element array")
    x0, y0, x1, y1 = raw
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{context}: bbox values must be numbers")
    if not (x0 < x1 and y0 < y1):
        raise SchemaError(f"{context}: bbox {raw} has non-positive extent")
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
        raise SchemaError(f"{context}: bbox {raw} exceeds the image bounds")


def _check_record(rec: dict, kind: str, width: float, height: float,
                  context: str, with_score: bool) -> None:
    if not isinstance(rec, dict):
        raise SchemaError(f"{context}: expected an object")
    if rec.get("class") not in CLASS_NAMES:
        raise SchemaError(f"{context}: class must be one of {CLASS_NAMES}, "
                          f"got {rec.get('class')!r}")
    _check_bbox(rec.get("bbox"), width, height, context)
    if with_score:
        score = rec.get("score")
        if isinstance(score, bool) or not isinstance(score, (int, float)) \
                or not (0.0 <= score <= 1.0):
            raise SchemaError(f"{context}: score must be a number in [0, 1]")


def validate_document(doc: dict, context: str = "document") -> None:
    """Raise :class:`SchemaError` unless the document is schema-valid."""
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise SchemaError(f"{context}: top level must be an object with an "
                          f"'images' array")
    seen = set()
    for i, rec in enumerate(doc["images"]):
        ctx = f"{context}: images[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(f"{ctx}: expected an object")
        image_id = rec.get("id")
        if not isinstance(image_id, str) or not image_id:
            raise SchemaError(f"{ctx}: 'id' must be a non-empty string")
        if image_id in seen:
            raise SchemaError(f"{ctx}: duplicate image id {image_id!r}")
        seen.add(image_id)
        if not isinstance(rec.get("path"), str):
            raise SchemaError(f"{ctx}: 'path' must be a string")
        width, height = rec.get("width"), rec.get("height")
        for name, v in (("width", width), ("height", height)):
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise SchemaError(f"{ctx}: '{name}' must be a positive integer")
        nm = rec.get("nm_per_pixel")
        if nm is not None and (isinstance(nm, bool)
                               or not isinstance(nm, (int, float)) or nm <= 0):
            raise SchemaError(f"{ctx}: 'nm_per_pixel' must be null or positive")
        for j, lab in enumerate(rec.get("labels", [])):
            _check_record(lab, "label", width, height,
                          f"{ctx} labels[{j}]", with_score=False)
        for j, det in enumerate(rec.get("detections", [])):
            _check_record(det, "detection", width, height,
                          f"{ctx} detections[{j}]", with_score=True)


def read_document(path: str | Path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    validate_document(doc, context=path.name)
    return doc


def write_document(doc: dict, path: str | Path) -> None:
    """Validate and write; never emits a document the schema rejects."""
    validate_document(doc, context="output")
    Path(path).write_bytes((json.dumps(doc, indent=2) + "\n").encode("utf-8"))
