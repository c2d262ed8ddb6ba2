"""Weight-free stub detector: echoes ground-truth labels with optional
box jitter.

The stub exists so integration tests of the downstream evaluation pipeline
never depend on trained weights.  Output boxes keep at least ``jitter_iou``
IoU with their source label; at 1.0 the echo is exact.  Deterministic for a
given seed (numpy PCG64).
"""

from __future__ import annotations

import numpy as np

STUB_SCORE = 0.9


def _iou(a: list[float], b: list[float]) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _jitter(box: list[float], jitter_iou: float, width: float, height: float,
            rng: np.random.Generator) -> list[float]:
    dx, dy = rng.uniform(-0.25, 0.25, size=2)
    sx, sy = rng.uniform(-0.12, 0.12, size=2)
    if jitter_iou >= 1.0:
        return list(box)
    w = box[2] - box[0]
    h = box[3] - box[1]
    for _ in range(24):
        cand = [box[0] + dx * w - sx * w / 2, box[1] + dy * h - sy * h / 2,
                box[2] + dx * w + sx * w / 2, box[3] + dy * h + sy * h / 2]
        cand = [max(0.0, cand[0]), max(0.0, cand[1]),
                min(float(width), cand[2]), min(float(height), cand[3])]
        if cand[0] < cand[2] and cand[1] < cand[3] \
                and _iou(box, cand) >= jitter_iou:
            return cand
        dx, dy, sx, sy = dx / 2, dy / 2, sx / 2, sy / 2
    return list(box)


def stub_detections(doc: dict, jitter_iou: float = 0.8, seed: int = 0,
                    score_thr: float = 0.25) -> dict:
    """Detections for every image by echoing its labels, jittered.

    Labels are passed through untouched; only the ``detections`` arrays are
    replaced.  The fixed stub confidence is filtered against ``score_thr``
    the same way a real detector's output would be.
    """
    if not (0.0 <= jitter_iou <= 1.0):
        raise ValueError(f"jitter_iou must lie in [0, 1], got {jitter_iou}")
    rng = np.random.Generator(np.random.PCG64(seed))
    out_images = []
    for rec in doc["images"]:
        detections = []
        if STUB_SCORE >= score_thr:
            for lab in rec.get("labels", []):
                box = _jitter([float(v) for v in lab["bbox"]], jitter_iou,
                              rec["width"], rec["height"], rng)
                detections.append({"class": lab["class"], "bbox": box,
                                   "score": STUB_SCORE})
        out = dict(rec)
        out["detections"] = detections
        out_images.append(out)
    return {"images": out_images}
