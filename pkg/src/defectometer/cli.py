"""Command-line front end: preprocess, synth, fit, evaluate, sweep, stats,
and the full pipeline.

Exit codes: 0 success, 1 validation error, 2 I/O error.  Outputs are
byte-identical across repeated runs with the same configuration and inputs,
for any ``--jobs`` degree: images may be processed concurrently, but all
aggregation is order-independent and serialization follows dataset order.
Artifact-producing commands also write a ``run_manifest.json`` recording the
analysis parameters, input digests, and tool version.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .core import (
    CLASS_ORDER,
    AnnotatedImage,
    DatasetError,
    DefectClass,
    Detection,
    GroundTruthLabel,
    load_dataset,
    save_dataset,
)
from .evaluation import (
    DEFAULT_IOU_THRESHOLD,
    DEFAULT_IOU_THRESHOLDS,
    DEFAULT_SCORE_THRESHOLD,
    DEFAULT_SCORE_THRESHOLDS,
    ConfusionMatrix,
    DetectionMetrics,
    confusion_matrix,
    match_detections,
    sweep,
)
from .geometry import DefectGeometry, EllipseFit, analyze_defect
from .imaging import (
    DEFAULT_BLUR_SIGMA,
    ClaheParams,
    DihedralTransform,
    augment,
    read_gray,
    synthesize_channels,
    transform_box,
    write_composite,
    write_gray,
)
from .stats import DensityMode, NM2_TO_M2, class_summary, compare_reports
from .svgchart import line_chart
from .synth import DefectSpec, Morphology, SceneSpec, SpecViolation, generate_scene

log = logging.getLogger("defectometer")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

GEOMETRY_CSV_COLUMNS = ("image_id", "class", "cx", "cy", "a_px", "b_px",
                        "theta_rad", "diameter_nm", "area_nm2", "fit_status")

_IMAGE_SUFFIXES = (".png", ".tif", ".tiff")


def _resolve(path_str: str, base: Path) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else base / p


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, parameters: dict,
                    inputs: dict[str, Path]) -> None:
    """Record analysis configuration and input digests.

    Execution-only settings (--jobs, verbosity, output locations) are
    deliberately excluded so reruns of the same analysis produce identical
    manifests.
    """
    manifest = {
        "tool": "defectometer",
        "version": __version__,
        "command": command,
        "parameters": parameters,
        "input_digests": {name: _sha256(p) for name, p in sorted(inputs.items())},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_bytes(
        (json.dumps(manifest, indent=2) + "\n").encode("utf-8"))


def _map_images(fn: Callable, items: Sequence, jobs: int) -> list:
    """Apply fn to items, optionally with a worker pool; preserves order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _nan_to_none(v: float | None) -> float | None:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return None
    return v


def _fmt_cell(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def _parse_tiles(text: str) -> tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except Exception:
        raise argparse.ArgumentTypeError(
            f"expected ROWSxCOLS (e.g. 8x8), got {text!r}")


# ---------------------------------------------------------------------------
# preprocess

_AUGMENT_ORDER = (
    DihedralTransform.IDENTITY, DihedralTransform.ROT90,
    DihedralTransform.ROT180, DihedralTransform.ROT270,
    DihedralTransform.FLIP_H, DihedralTransform.FLIP_V,
    DihedralTransform.TRANSPOSE, DihedralTransform.ANTI_TRANSPOSE)


def cmd_preprocess(args: argparse.Namespace) -> int:
    in_path = Path(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = ClaheParams(clip_limit=args.clip_limit, tile_grid=args.tiles,
                         bins=args.bins)

    if in_path.is_dir():
        files = sorted(p for p in in_path.iterdir()
                       if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not files:
            log.error("no image files under %s", in_path)
            return EXIT_VALIDATION
        for path in files:
            gray = read_gray(path)
            variants = _AUGMENT_ORDER if args.augment else (DihedralTransform.IDENTITY,)
            for t in variants:
                out_img, _ = augment(gray, [], t)
                name = f"{path.stem}_{t.value}.png" if args.augment else f"{path.stem}.png"
                write_composite(synthesize_channels(out_img, params, args.sigma),
                                out_dir / name)
        _write_manifest(out_dir, "preprocess",
                        {"clip_limit": args.clip_limit, "tiles": list(args.tiles),
                         "bins": args.bins, "sigma": args.sigma,
                         "augment": bool(args.augment)},
                        {p.name: p for p in files})
        log.info("wrote composites for %d images to %s", len(files), out_dir)
        return EXIT_OK

    result = load_dataset(in_path)
    for w in result.warnings:
        log.warning("%s", w)
    base = in_path.parent
    out_images: list[AnnotatedImage] = []

    def process(rec: AnnotatedImage) -> list[AnnotatedImage]:
        gray = read_gray(_resolve(rec.path, base), rec.nm_per_pixel)
        produced = []
        variants = _AUGMENT_ORDER if args.augment else (DihedralTransform.IDENTITY,)
        for t in variants:
            out_img = augment(gray, [], t)[0]
            w, h = gray.width, gray.height
            labels = tuple(
                GroundTruthLabel(transform_box(lab.bbox, w, h, t), lab.cls)
                for lab in rec.labels)
            dets = tuple(
                Detection(transform_box(d.bbox, w, h, t), d.cls, d.score)
                for d in rec.detections)
            name = f"{rec.id}_{t.value}.png" if args.augment else f"{rec.id}.png"
            write_composite(synthesize_channels(out_img, params, args.sigma),
                            out_dir / name)
            new_id = f"{rec.id}_{t.value}" if args.augment else rec.id
            produced.append(AnnotatedImage(
                id=new_id, path=name, width=out_img.width, height=out_img.height,
                nm_per_pixel=rec.nm_per_pixel, labels=labels, detections=dets))
        return produced

    for group in _map_images(process, result.images, args.jobs):
        out_images.extend(group)
    if args.augment:
        (out_dir / "annotations.json").write_bytes(save_dataset(out_images))
    _write_manifest(out_dir, "preprocess",
                    {"clip_limit": args.clip_limit, "tiles": list(args.tiles),
                     "bins": args.bins, "sigma": args.sigma,
                     "augment": bool(args.augment)},
                    {in_path.name: in_path})
    log.info("wrote %d composites to %s", len(out_images), out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth

def _scene_from_json(rec: dict, context: str) -> tuple[str, SceneSpec]:
    try:
        scene_id = rec["id"]
        defects = tuple(
            DefectSpec(
                morphology=Morphology(d["morphology"]),
                cx=float(d["center"][0]), cy=float(d["center"][1]),
                a=float(d["a"]), b=float(d["b"]),
                theta=float(d.get("theta", 0.0)),
                depth=float(d.get("depth", 0.4)))
            for d in rec.get("defects", []))
        spec = SceneSpec(
            width=int(rec["width"]), height=int(rec["height"]),
            nm_per_pixel=rec.get("nm_per_pixel"),
            background_level=float(rec.get("background_level", 0.75)),
            noise_sigma=float(rec.get("noise_sigma", 0.0)),
            blur_sigma=float(rec.get("blur_sigma", 0.0)),
            defects=defects,
            rng_seed=int(rec.get("rng_seed", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecViolation(f"{context}: {exc}") from exc
    return scene_id, spec


def cmd_synth(args: argparse.Namespace) -> int:
    spec_path = Path(args.spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        doc = json.loads(spec_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecViolation(f"{spec_path}: invalid JSON: {exc}") from exc
    scenes = doc.get("scenes")
    if not isinstance(scenes, list) or not scenes:
        raise SpecViolation(f"{spec_path}: expected a non-empty 'scenes' array")

    images = []
    for k, rec in enumerate(scenes):
        scene_id, spec = _scene_from_json(rec, f"{spec_path.name}: scenes[{k}]")
        img, labels, _ = generate_scene(spec)
        name = f"{scene_id}.png"
        write_gray(img, out_dir / name)
        images.append(AnnotatedImage(
            id=scene_id, path=name, width=img.width, height=img.height,
            nm_per_pixel=spec.nm_per_pixel, labels=tuple(labels)))
    (out_dir / "annotations.json").write_bytes(save_dataset(images))
    _write_manifest(out_dir, "synth", {"scenes": len(scenes)},
                    {spec_path.name: spec_path})
    log.info("wrote %d scenes to %s", len(images), out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit

def _geometry_rows(rec: AnnotatedImage, base: Path, boxes: str,
                   score_thr: float) -> list[dict]:
    gray = read_gray(_resolve(rec.path, base), rec.nm_per_pixel)
    if boxes == "labels":
        targets = [(lab.bbox, lab.cls) for lab in rec.labels]
    else:
        targets = [(d.bbox, d.cls) for d in rec.detections if d.score >= score_thr]
    rows = []
    for box, cls in targets:
        geom = analyze_defect(gray, box, cls)
        if geom is None:
            rows.append({"image_id": rec.id, "class": cls.value,
                         "cx": None, "cy": None, "a_px": None, "b_px": None,
                         "theta_rad": None, "diameter_nm": None,
                         "area_nm2": None, "fit_status": "unfittable"})
        else:
            e = geom.ellipse
            rows.append({"image_id": rec.id, "class": cls.value,
                         "cx": e.cx, "cy": e.cy, "a_px": e.a, "b_px": e.b,
                         "theta_rad": e.theta, "diameter_nm": geom.diameter_nm,
                         "area_nm2": geom.area_nm2, "fit_status": "ok"})
    return rows


def _write_geometry_csv(rows: Iterable[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GEOMETRY_CSV_COLUMNS)
        for row in rows:
            writer.writerow([
                row["image_id"], row["class"],
                *(_fmt_cell(row[c]) for c in ("cx", "cy", "a_px", "b_px",
                                              "theta_rad", "diameter_nm",
                                              "area_nm2")),
                row["fit_status"]])


def cmd_fit(args: argparse.Namespace) -> int:
    in_path = Path(args.input)
    result = load_dataset(in_path)
    for w in result.warnings:
        log.warning("%s", w)
    base = in_path.parent

    def process(rec: AnnotatedImage) -> list[dict]:
        return _geometry_rows(rec, base, args.boxes, args.score_thr)

    all_rows: list[dict] = []
    for rows in _map_images(process, result.images, args.jobs):
        all_rows.extend(rows)
    out_path = Path(args.out)
    _write_geometry_csv(all_rows, out_path)
    _write_manifest(out_path.parent, "fit",
                    {"boxes": args.boxes, "score_thr": args.score_thr},
                    {in_path.name: in_path})
    fitted = sum(r["fit_status"] == "ok" for r in all_rows)
    log.info("fitted %d/%d boxes -> %s", fitted, len(all_rows), out_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate

def _evaluate_dataset(images: Sequence[AnnotatedImage], score_thr: float,
                      iou_thr: float, jobs: int
                      ) -> tuple[DetectionMetrics, ConfusionMatrix]:
    def process(rec: AnnotatedImage):
        m = match_detections(rec.detections, rec.labels, score_thr, iou_thr)
        return (len(m.pairs), len(m.unmatched_detections),
                len(m.unmatched_labels),
                confusion_matrix(m, rec.detections, rec.labels))

    tp = fp = fn = 0
    cm = ConfusionMatrix.zero()
    for p_tp, p_fp, p_fn, p_cm in _map_images(process, images, jobs):
        tp += p_tp
        fp += p_fp
        fn += p_fn
        cm = cm + p_cm
    return DetectionMetrics.from_counts(tp, fp, fn), cm


def _metrics_json(metrics: DetectionMetrics, cm: ConfusionMatrix,
                  score_thr: float, iou_thr: float, n_images: int) -> dict:
    per_class = {
        cls.value: {"precision": m.precision, "recall": m.recall, "f1": m.f1,
                    "tp": m.tp, "fp": m.fp, "fn": m.fn}
        for cls, m in cm.per_class_metrics().items()}
    return {
        "score_threshold": score_thr,
        "iou_threshold": iou_thr,
        "images": n_images,
        "tp": metrics.tp, "fp": metrics.fp, "fn": metrics.fn,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "matched_pairs": cm.total(),
        "per_class_over_matched": per_class,
    }


def _write_confusion_csv(cm: ConfusionMatrix, path: Path) -> None:
    names = [c.value for c in CLASS_ORDER]
    pct = cm.row_percentages()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["predicted"] + names + [f"pct_{n}" for n in names])
        for row, counts in enumerate(cm.counts):
            writer.writerow([names[row]] + [str(v) for v in counts]
                            + [f"{p:.4f}" for p in pct[row]])


def cmd_evaluate(args: argparse.Namespace) -> int:
    in_path = Path(args.input)
    result = load_dataset(in_path)
    for w in result.warnings:
        log.warning("%s", w)
    metrics, cm = _evaluate_dataset(result.images, args.score_thr,
                                    args.iou_thr, args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = _metrics_json(metrics, cm, args.score_thr, args.iou_thr,
                        len(result.images))
    (out_dir / "metrics.json").write_bytes(
        (json.dumps(doc, indent=2) + "\n").encode("utf-8"))
    _write_confusion_csv(cm, out_dir / "confusion_matrix.csv")
    _write_manifest(out_dir, "evaluate",
                    {"score_thr": args.score_thr, "iou_thr": args.iou_thr},
                    {in_path.name: in_path})
    log.info("P=%.4f R=%.4f F1=%.4f (tp=%d fp=%d fn=%d) -> %s",
             metrics.precision, metrics.recall, metrics.f1,
             metrics.tp, metrics.fp, metrics.fn, out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def cmd_sweep(args: argparse.Namespace) -> int:
    in_path = Path(args.input)
    result = load_dataset(in_path)
    for w in result.warnings:
        log.warning("%s", w)
    scores = tuple(args.scores) if args.scores else DEFAULT_SCORE_THRESHOLDS
    ious = tuple(args.ious) if args.ious else DEFAULT_IOU_THRESHOLDS
    grid = sweep([rec.detections for rec in result.images],
                 [rec.labels for rec in result.images], scores, ious)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "grid.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["score_thr", "iou_thr", "tp", "fp", "fn",
                         "precision", "recall", "f1"])
        for s in scores:
            for i in ious:
                m = grid.cells[(s, i)]
                writer.writerow([repr(float(s)), repr(float(i)),
                                 m.tp, m.fp, m.fn,
                                 repr(m.precision), repr(m.recall), repr(m.f1)])

    chart_score = min(scores, key=lambda s: (abs(s - args.chart_score), s))
    series = {
        "precision": [grid.cells[(chart_score, i)].precision for i in ious],
        "recall": [grid.cells[(chart_score, i)].recall for i in ious],
        "f1": [grid.cells[(chart_score, i)].f1 for i in ious],
    }
    svg = line_chart(ious, series,
                     title=f"Detection performance vs IoU threshold "
                           f"(score threshold {chart_score})",
                     x_label="IoU threshold", y_label="metric")
    (out_dir / "sweep_chart.svg").write_text(svg, encoding="utf-8")
    _write_manifest(out_dir, "sweep",
                    {"scores": list(scores), "ious": list(ious),
                     "chart_score": chart_score},
                    {in_path.name: in_path})
    s_best, i_best, m_best = grid.best()
    log.info("%d grid cells; best F1=%.4f at score>=%g iou>=%g -> %s",
             len(scores) * len(ious), m_best.f1, s_best, i_best, out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# stats

def _geometries_from_csv(path: Path) -> tuple[list[DefectGeometry], int]:
    geoms: list[DefectGeometry] = []
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(GEOMETRY_CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DatasetError(
                f"{path}: geometry CSV missing columns {sorted(missing)}")
        for row in reader:
            if row["fit_status"] != "ok":
                skipped += 1
                continue
            ellipse = EllipseFit(cx=float(row["cx"]), cy=float(row["cy"]),
                                 a=float(row["a_px"]), b=float(row["b_px"]),
                                 theta=float(row["theta_rad"]))
            geoms.append(DefectGeometry(
                cls=DefectClass.from_string(row["class"]),
                ellipse=ellipse,
                diameter_nm=float(row["diameter_nm"]),
                area_nm2=float(row["area_nm2"])))
    return geoms, skipped


def _summary_json(summary, with_density: bool) -> dict:
    return {
        "count": summary.count,
        "mean_diameter_nm": _nan_to_none(summary.mean_diameter_nm),
        "sample_std_nm": _nan_to_none(summary.sample_std_nm),
        "sem_nm": _nan_to_none(summary.sem_nm),
        "areal_density": (summary.areal_density_per_m2 if with_density else None),
    }


def cmd_stats(args: argparse.Namespace) -> int:
    csv_path = Path(args.geometry)
    geoms, skipped = _geometries_from_csv(csv_path)
    mode = DensityMode(args.density_mode)
    with_density = args.total_area_m2 is not None
    total_area = args.total_area_m2 if with_density else 1.0
    classes = {}
    for cls in CLASS_ORDER:
        s = class_summary(geoms, cls, total_area, mode)
        classes[cls.value] = _summary_json(s, with_density)
    doc = {
        "geometries": len(geoms),
        "unfittable": skipped,
        "density_mode": mode.value,
        "total_area_m2": args.total_area_m2,
        "classes": classes,
    }
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes((json.dumps(doc, indent=2) + "\n").encode("utf-8"))
    _write_manifest(out_path.parent, "stats",
                    {"density_mode": mode.value,
                     "total_area_m2": args.total_area_m2},
                    {csv_path.name: csv_path})
    log.info("summarized %d geometries (%d unfittable) -> %s",
             len(geoms), skipped, out_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline

def cmd_pipeline(args: argparse.Namespace) -> int:
    in_path = Path(args.input)
    result = load_dataset(in_path)
    for w in result.warnings:
        log.warning("%s", w)
    base = in_path.parent
    mode = DensityMode(args.density_mode)

    scaled = all(rec.nm_per_pixel is not None for rec in result.images)
    if scaled:
        total_area = sum(rec.width * rec.height * rec.nm_per_pixel ** 2
                         for rec in result.images) * NM2_TO_M2
        area_units = "m2"
    else:
        total_area = float(sum(rec.width * rec.height for rec in result.images))
        area_units = "px2"
    if total_area <= 0:
        raise DatasetError("dataset has no imaged area")

    def process(rec: AnnotatedImage):
        gray = read_gray(_resolve(rec.path, base), rec.nm_per_pixel)
        gt = [analyze_defect(gray, lab.bbox, lab.cls) for lab in rec.labels]
        pred_by_index = {
            i: analyze_defect(gray, d.bbox, d.cls)
            for i, d in enumerate(rec.detections)
            if d.score >= args.score_thr}
        m = match_detections(rec.detections, rec.labels,
                             args.score_thr, args.iou_thr)
        cm = confusion_matrix(m, rec.detections, rec.labels)
        counts = (len(m.pairs), len(m.unmatched_detections),
                  len(m.unmatched_labels))
        # Per-defect diameter errors over matched pairs where both sides fit.
        errors = []
        for det_i, lab_j, pair_iou in m.pairs:
            g, p = gt[lab_j], pred_by_index[det_i]
            if g is None or p is None:
                continue
            errors.append((rec.id, rec.labels[lab_j].cls.value,
                           rec.detections[det_i].cls.value,
                           g.diameter_nm, p.diameter_nm,
                           p.diameter_nm - g.diameter_nm, pair_iou))
        return gt, list(pred_by_index.values()), counts, cm, errors

    gt_geoms: list[DefectGeometry] = []
    pred_geoms: list[DefectGeometry] = []
    error_rows: list[tuple] = []
    gt_unfit = pred_unfit = 0
    tp = fp = fn = 0
    cm = ConfusionMatrix.zero()
    for gt, pred, counts, part_cm, errors in _map_images(process, result.images,
                                                         args.jobs):
        gt_unfit += sum(g is None for g in gt)
        pred_unfit += sum(g is None for g in pred)
        gt_geoms.extend(g for g in gt if g is not None)
        pred_geoms.extend(g for g in pred if g is not None)
        error_rows.extend(errors)
        tp += counts[0]
        fp += counts[1]
        fn += counts[2]
        cm = cm + part_cm

    metrics = DetectionMetrics.from_counts(tp, fp, fn)
    report = compare_reports(gt_geoms, pred_geoms, total_area, mode)

    classes = {}
    for cls in CLASS_ORDER:
        comp = report.per_class[cls]
        classes[cls.value] = {
            "ground_truth": _summary_json(comp.gt, True),
            "prediction": _summary_json(comp.pred, True),
            "mean_diameter_error_pct": _nan_to_none(comp.mean_diameter_err_pct),
            "density_error_pct": _nan_to_none(comp.density_err_pct),
        }
    doc = {
        "images": len(result.images),
        "score_threshold": args.score_thr,
        "iou_threshold": args.iou_thr,
        "density_mode": mode.value,
        "area_units": area_units,
        "total_area": total_area,
        "detection": {"tp": metrics.tp, "fp": metrics.fp, "fn": metrics.fn,
                      "precision": metrics.precision, "recall": metrics.recall,
                      "f1": metrics.f1},
        "confusion": {"classes": [c.value for c in CLASS_ORDER],
                      "counts": [list(r) for r in cm.counts],
                      "row_percentages": [list(r) for r in cm.row_percentages()]},
        "classes": classes,
        "unfittable": {"ground_truth": gt_unfit, "prediction": pred_unfit},
    }
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes((json.dumps(doc, indent=2) + "\n").encode("utf-8"))
    with open(out_path.parent / "per_defect_errors.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "gt_class", "pred_class",
                         "gt_diameter_nm", "pred_diameter_nm",
                         "diameter_error_nm", "iou"])
        for image_id, gt_cls, pred_cls, g_d, p_d, err, pair_iou in error_rows:
            writer.writerow([image_id, gt_cls, pred_cls, repr(float(g_d)),
                             repr(float(p_d)), repr(float(err)),
                             repr(float(pair_iou))])

    inputs = {in_path.name: in_path}
    for rec in result.images:
        inputs[rec.path] = _resolve(rec.path, base)
    _write_manifest(out_path.parent, "pipeline",
                    {"score_thr": args.score_thr, "iou_thr": args.iou_thr,
                     "density_mode": mode.value},
                    inputs)
    log.info("pipeline over %d images: F1=%.4f, %d GT / %d predicted "
             "geometries -> %s", len(result.images), metrics.f1,
             len(gt_geoms), len(pred_geoms), out_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="defectometer",
        description="STEM micrograph defect analysis: preprocessing, "
                    "detection evaluation, ellipse geometry, and "
                    "microstructure statistics.")
    parser.add_argument("--version", action="version",
                        version=f"defectometer {__version__}")
    parser.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="worker pool size for per-image processing "
                             "(default 1; results are identical for any N)")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true",
                           help="only report errors")
    verbosity.add_argument("--verbose", action="store_true",
                           help="report debug detail")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess",
                       help="build 3-channel composites (raw / "
                            "contrast-enhanced / blurred), optionally with "
                            "8-fold dihedral augmentation")
    p.add_argument("--in", dest="input", required=True,
                   help="image directory or annotation JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clip-limit", type=float, default=0.01,
                   help="histogram clip as a fraction of tile pixels "
                        "(default 0.01)")
    p.add_argument("--tiles", type=_parse_tiles, default=(8, 8),
                   metavar="RxC", help="tile grid (default 8x8)")
    p.add_argument("--bins", type=int, default=256,
                   help="histogram bins (default 256)")
    p.add_argument("--sigma", type=float, default=DEFAULT_BLUR_SIGMA,
                   help="Gaussian blur sigma for the B channel (default 1.0)")
    p.add_argument("--augment", action="store_true",
                   help="emit all 8 dihedral variants per image, with a "
                        "merged annotation JSON when the input is one")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="render synthetic scenes with exact "
                                     "ground truth")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="segment and ellipse-fit every box, "
                                   "emitting a geometry CSV")
    p.add_argument("--in", dest="input", required=True,
                   help="annotation JSON")
    p.add_argument("--out", required=True, help="geometry CSV path")
    p.add_argument("--boxes", choices=("labels", "detections"),
                   default="labels", help="which boxes to fit (default labels)")
    p.add_argument("--score-thr", type=float, default=DEFAULT_SCORE_THRESHOLD,
                   help="score cut when fitting detections (default 0.25)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="match detections against labels and "
                                        "report metrics + confusion matrix")
    p.add_argument("--in", dest="input", required=True, help="annotation JSON")
    p.add_argument("--score-thr", type=float, default=DEFAULT_SCORE_THRESHOLD,
                   help="confidence threshold (default 0.25)")
    p.add_argument("--iou-thr", type=float, default=DEFAULT_IOU_THRESHOLD,
                   help="IoU threshold (default 0.4)")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid-search score and IoU thresholds")
    p.add_argument("--in", dest="input", required=True, help="annotation JSON")
    p.add_argument("--scores", type=float, nargs="+",
                   help="score thresholds (default: the standard 15-value list)")
    p.add_argument("--ious", type=float, nargs="+",
                   help="IoU thresholds (default: 0.1..0.9)")
    p.add_argument("--chart-score", type=float, default=DEFAULT_SCORE_THRESHOLD,
                   help="score threshold for the metrics-vs-IoU chart "
                        "(default 0.25)")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stats", help="summarize a geometry CSV per class")
    p.add_argument("--geometry", required=True, help="geometry CSV from 'fit'")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--total-area-m2", type=float, default=None,
                   help="total imaged area; densities are omitted without it")
    p.add_argument("--density-mode", choices=("count", "area_fraction"),
                   default="count", help="areal density convention")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("pipeline", help="fit + evaluate + compare in one pass")
    p.add_argument("--in", dest="input", required=True, help="annotation JSON")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--score-thr", type=float, default=DEFAULT_SCORE_THRESHOLD,
                   help="confidence threshold (default 0.25)")
    p.add_argument("--iou-thr", type=float, default=DEFAULT_IOU_THRESHOLD,
                   help="IoU threshold (default 0.4)")
    p.add_argument("--density-mode", choices=("count", "area_fraction"),
                   default="count", help="areal density convention")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet else (
        logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s",
                        stream=sys.stderr, force=True)
    if args.jobs < 1:
        log.error("--jobs must be >= 1")
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except (DatasetError, SpecViolation) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
