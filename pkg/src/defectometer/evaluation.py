"""Detection-vs-label evaluation: IoU, greedy matching, precision/recall/F1,
per-class confusion matrices, and the (score, IoU) threshold grid sweep.

Matching is class-blind: localization quality and categorization quality are
assessed separately, with the class entering only the confusion matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .core import CLASS_ORDER, BBox, DefectClass, Detection, GroundTruthLabel

#: Default operating point.
DEFAULT_SCORE_THRESHOLD = 0.25
DEFAULT_IOU_THRESHOLD = 0.4

#: Default grid-search threshold lists.
DEFAULT_SCORE_THRESHOLDS: tuple[float, ...] = (
    0.001, 0.005, 0.01, 0.05, 0.1, 0.15, 0.2, 0.25,
    0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6)
DEFAULT_IOU_THRESHOLDS: tuple[float, ...] = (
    0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area of two boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union


@dataclass(frozen=True)
class MatchResult:
    """A bipartite assignment of detections to labels at an operating point.

    ``pairs`` holds (detection index, label index, iou) triples; indices
    refer to the original input lists. Detections below the score threshold
    are discarded outright and appear in neither ``pairs`` nor
    ``unmatched_detections``.
    """

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_detections: tuple[int, ...]
    unmatched_labels: tuple[int, ...]
    score_threshold: float
    iou_threshold: float


def match_detections(dets: Sequence[Detection],
                     labels: Sequence[GroundTruthLabel],
                     score_thr: float = DEFAULT_SCORE_THRESHOLD,
                     iou_thr: float = DEFAULT_IOU_THRESHOLD) -> MatchResult:
    """Greedy score-ordered matching, class-blind.

    Surviving detections are processed in descending score order (ties by
    ascending detection index); each claims the unclaimed label of highest
    IoU >= ``iou_thr`` (ties by ascending label index).
    """
    if not (0.0 <= score_thr <= 1.0 and 0.0 <= iou_thr <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    order = sorted((i for i, d in enumerate(dets) if d.score >= score_thr),
                   key=lambda i: (-dets[i].score, i))
    claimed: set[int] = set()
    pairs: list[tuple[int, int, float]] = []
    unmatched_dets: list[int] = []
    for i in order:
        best_j = -1
        best_iou = 0.0
        for j, lab in enumerate(labels):
            if j in claimed:
                continue
            v = iou(dets[i].bbox, lab.bbox)
            if v >= iou_thr and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0:
            pairs.append((i, best_j, best_iou))
            claimed.add(best_j)
        else:
            unmatched_dets.append(i)
    unmatched_labels = tuple(j for j in range(len(labels)) if j not in claimed)
    return MatchResult(pairs=tuple(pairs),
                       unmatched_detections=tuple(sorted(unmatched_dets)),
                       unmatched_labels=unmatched_labels,
                       score_threshold=float(score_thr),
                       iou_threshold=float(iou_thr))


@dataclass(frozen=True)
class DetectionMetrics:
    """Precision, recall, and F1 with their TP/FP/FN counts.

    Degenerate ratios (0/0) are defined as 0.
    """

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "DetectionMetrics":
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = f1_score(p, r)
        return cls(tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f1)


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall <= 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def detection_metrics(m: MatchResult) -> DetectionMetrics:
    """Metrics of a single match result: TP = pairs, FP/FN = unmatched."""
    return DetectionMetrics.from_counts(tp=len(m.pairs),
                                        fp=len(m.unmatched_detections),
                                        fn=len(m.unmatched_labels))


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 count grid over matched pairs: rows = predicted class, columns =
    human-labeled class, both ordered as :data:`~defectometer.core.CLASS_ORDER`.
    """

    counts: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        if len(self.counts) != 3 or any(len(r) != 3 for r in self.counts):
            raise ValueError("confusion matrix must be 3x3")
        if any(v < 0 for row in self.counts for v in row):
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def zero(cls) -> "ConfusionMatrix":
        return cls(counts=((0, 0, 0), (0, 0, 0), (0, 0, 0)))

    @classmethod
    def from_counts(cls, grid: Sequence[Sequence[int]]) -> "ConfusionMatrix":
        return cls(counts=tuple(tuple(int(v) for v in row) for row in grid))

    def total(self) -> int:
        return sum(v for row in self.counts for v in row)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(counts=tuple(
            tuple(a + b for a, b in zip(ra, rb))
            for ra, rb in zip(self.counts, other.counts)))

    def row_percentages(self) -> tuple[tuple[float, float, float], ...]:
        """Each cell as a percentage of its predicted-class row total."""
        out = []
        for row in self.counts:
            s = sum(row)
            out.append(tuple(100.0 * v / s if s > 0 else 0.0 for v in row))
        return tuple(out)

    def per_class_metrics(self) -> dict[DefectClass, DetectionMetrics]:
        """Per-class precision/recall/F1 over matched pairs only."""
        out = {}
        for k, cls in enumerate(CLASS_ORDER):
            tp = self.counts[k][k]
            fp = sum(self.counts[k]) - tp
            fn = sum(self.counts[i][k] for i in range(3)) - tp
            out[cls] = DetectionMetrics.from_counts(tp, fp, fn)
        return out


def confusion_matrix(m: MatchResult, dets: Sequence[Detection],
                     labels: Sequence[GroundTruthLabel]) -> ConfusionMatrix:
    """Tally matched pairs into predicted-class x labeled-class cells."""
    index = {cls: k for k, cls in enumerate(CLASS_ORDER)}
    grid = [[0, 0, 0], [0, 0, 0], [0, 0, 0]]
    for det_i, lab_j, _ in m.pairs:
        grid[index[dets[det_i].cls]][index[labels[lab_j].cls]] += 1
    return ConfusionMatrix.from_counts(grid)


@dataclass(frozen=True)
class MetricsGrid:
    """Aggregate metrics for every (score threshold, IoU threshold) cell."""

    cells: Mapping[tuple[float, float], DetectionMetrics]
    score_thresholds: tuple[float, ...]
    iou_thresholds: tuple[float, ...]

    def best(self) -> tuple[float, float, DetectionMetrics]:
        """Operating point with the highest F1 (first in grid order on ties)."""
        best_key = None
        best_m = None
        for s in self.score_thresholds:
            for i in self.iou_thresholds:
                m = self.cells[(s, i)]
                if best_m is None or m.f1 > best_m.f1:
                    best_key, best_m = (s, i), m
        assert best_key is not None and best_m is not None
        return best_key[0], best_key[1], best_m


def sweep(dets_by_image: Sequence[Sequence[Detection]],
          labels_by_image: Sequence[Sequence[GroundTruthLabel]],
          score_list: Iterable[float] = DEFAULT_SCORE_THRESHOLDS,
          iou_list: Iterable[float] = DEFAULT_IOU_THRESHOLDS) -> MetricsGrid:
    """Grid search over operating points, aggregated over all images.

    TP/FP/FN are summed across images for every cell of the Cartesian
    product before computing precision/recall/F1.
    """
    scores = tuple(float(s) for s in score_list)
    ious = tuple(float(i) for i in iou_list)
    if not scores or not ious:
        raise ValueError("threshold lists must be non-empty")
    if len(dets_by_image) != len(labels_by_image):
        raise ValueError("detection and label sequences must align per image")
    cells: dict[tuple[float, float], DetectionMetrics] = {}
    for s in scores:
        for i in ious:
            tp = fp = fn = 0
            for dets, labels in zip(dets_by_image, labels_by_image):
                m = match_detections(dets, labels, score_thr=s, iou_thr=i)
                tp += len(m.pairs)
                fp += len(m.unmatched_detections)
                fn += len(m.unmatched_labels)
            cells[(s, i)] = DetectionMetrics.from_counts(tp, fp, fn)
    return MetricsGrid(cells=cells, score_thresholds=scores, iou_thresholds=ious)
