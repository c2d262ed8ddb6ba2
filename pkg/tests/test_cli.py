import csv
import json
import xml.etree.ElementTree as ET

import pytest

from defectometer.cli import GEOMETRY_CSV_COLUMNS, main
from defectometer.core import AnnotatedImage, Detection, load_dataset, save_dataset
from defectometer.imaging import DihedralTransform, transform_box
from defectometer.synth import generate_scene, perturb_detections
from oracles import build_mixed_scene


def scene_to_json(scene_id, spec):
    return {
        "id": scene_id,
        "width": spec.width,
        "height": spec.height,
        "nm_per_pixel": spec.nm_per_pixel,
        "background_level": spec.background_level,
        "noise_sigma": spec.noise_sigma,
        "blur_sigma": spec.blur_sigma,
        "rng_seed": spec.rng_seed,
        "defects": [
            {"morphology": d.morphology.value, "center": [d.cx, d.cy],
             "a": d.a, "b": d.b, "theta": d.theta, "depth": d.depth}
            for d in spec.defects
        ],
    }


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic fixture rendered through the CLI, with detection variants."""
    root = tmp_path_factory.mktemp("cli")
    specs = {f"scene_{k}": build_mixed_scene(seed=40 + k, n_defects=8, size=280,
                                             noise_sigma=0.03)
             for k in range(2)}
    spec_path = root / "scenes.json"
    spec_path.write_text(json.dumps(
        {"scenes": [scene_to_json(sid, s) for sid, s in specs.items()]}))
    fx = root / "fx"
    assert main(["--quiet", "synth", "--spec", str(spec_path),
                 "--out-dir", str(fx)]) == 0

    loaded = load_dataset(fx / "annotations.json")
    identity = []
    perturbed = []
    for rec in loaded.images:
        echo = tuple(Detection(lab.bbox, lab.cls, 0.9) for lab in rec.labels)
        identity.append(AnnotatedImage(
            id=rec.id, path=rec.path, width=rec.width, height=rec.height,
            nm_per_pixel=rec.nm_per_pixel, labels=rec.labels, detections=echo))
        noisy = perturb_detections(rec.labels, iou_floor=0.85,
                                   class_flip_prob=0.1, miss_prob=0.1,
                                   spurious_rate=1.0, seed=7,
                                   width=rec.width, height=rec.height)
        perturbed.append(AnnotatedImage(
            id=rec.id, path=rec.path, width=rec.width, height=rec.height,
            nm_per_pixel=rec.nm_per_pixel, labels=rec.labels,
            detections=tuple(noisy)))
    (fx / "identity.json").write_bytes(save_dataset(identity))
    (fx / "perturbed.json").write_bytes(save_dataset(perturbed))
    return {"root": root, "fx": fx, "specs": specs}


class TestSynthCommand:
    def test_outputs_exist_and_load(self, workspace):
        fx = workspace["fx"]
        loaded = load_dataset(fx / "annotations.json")
        assert len(loaded.images) == 2
        assert loaded.warnings == []
        for rec in loaded.images:
            assert (fx / rec.path).exists()

    def test_bad_spec_is_validation_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"scenes": [{"id": "x"}]}')
        assert main(["--quiet", "synth", "--spec", str(bad),
                     "--out-dir", str(tmp_path / "o")]) == 1


class TestEvaluateCommand:
    def test_identity_detections_are_perfect(self, workspace, tmp_path):
        fx = workspace["fx"]
        out = tmp_path / "ev"
        assert main(["--quiet", "evaluate", "--in", str(fx / "identity.json"),
                     "--out-dir", str(out)]) == 0
        doc = json.loads((out / "metrics.json").read_text())
        assert doc["precision"] == 1.0
        assert doc["recall"] == 1.0
        assert doc["f1"] == 1.0
        assert (out / "confusion_matrix.csv").exists()
        assert (out / "run_manifest.json").exists()

    def test_missing_input_is_io_error(self, tmp_path):
        assert main(["--quiet", "evaluate", "--in", str(tmp_path / "no.json"),
                     "--out-dir", str(tmp_path)]) == 2

    def test_malformed_input_is_validation_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["--quiet", "evaluate", "--in", str(bad),
                     "--out-dir", str(tmp_path)]) == 1

    def test_unknown_class_is_validation_error(self, tmp_path):
        bad = tmp_path / "cls.json"
        bad.write_text(json.dumps({"images": [{
            "id": "a", "path": "a.png", "width": 10, "height": 10,
            "nm_per_pixel": None,
            "labels": [{"class": "void", "bbox": [1, 1, 5, 5]}],
            "detections": []}]}))
        assert main(["--quiet", "evaluate", "--in", str(bad),
                     "--out-dir", str(tmp_path)]) == 1


class TestSweepCommand:
    def test_default_grid_csv_and_chart(self, workspace, tmp_path):
        fx = workspace["fx"]
        out = tmp_path / "sw"
        assert main(["--quiet", "sweep", "--in", str(fx / "perturbed.json"),
                     "--out-dir", str(out)]) == 0
        with open(out / "grid.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["score_thr", "iou_thr", "tp", "fp", "fn",
                           "precision", "recall", "f1"]
        assert len(rows) == 1 + 135
        svg = (out / "sweep_chart.svg").read_text()
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")


class TestFitAndStats:
    def test_fit_csv_schema_and_accuracy(self, workspace, tmp_path):
        fx = workspace["fx"]
        out_csv = tmp_path / "geometry.csv"
        assert main(["--quiet", "fit", "--in", str(fx / "annotations.json"),
                     "--out", str(out_csv)]) == 0
        with open(out_csv) as fh:
            rows = list(csv.DictReader(fh))
        assert tuple(rows[0].keys()) == GEOMETRY_CSV_COLUMNS
        assert len(rows) == 16
        ok = [r for r in rows if r["fit_status"] == "ok"]
        assert len(ok) >= 14

    def test_stats_report(self, workspace, tmp_path):
        fx = workspace["fx"]
        out_csv = tmp_path / "geometry.csv"
        main(["--quiet", "fit", "--in", str(fx / "annotations.json"),
              "--out", str(out_csv)])
        report = tmp_path / "report.json"
        assert main(["--quiet", "stats", "--geometry", str(out_csv),
                     "--out", str(report), "--total-area-m2", "1e-13"]) == 0
        doc = json.loads(report.read_text())
        total = sum(doc["classes"][c]["count"] for c in doc["classes"])
        assert total == doc["geometries"]
        for cls_doc in doc["classes"].values():
            if cls_doc["count"]:
                assert cls_doc["areal_density"] > 0


class TestPipelineCommand:
    def test_ground_truth_columns_match_fixture(self, workspace, tmp_path):
        fx = workspace["fx"]
        specs = workspace["specs"]
        report_path = tmp_path / "report.json"
        assert main(["--quiet", "pipeline", "--in", str(fx / "perturbed.json"),
                     "--out", str(report_path)]) == 0
        doc = json.loads(report_path.read_text())

        # Generating statistics straight from the scene specs.
        true_geoms = []
        for spec in specs.values():
            _, _, geoms = generate_scene(spec)
            true_geoms.extend(geoms)
        for cls_name in ("loop111", "blackdot", "loop100"):
            diameters = [g.diameter_nm for g in true_geoms
                         if g.cls.value == cls_name]
            got = doc["classes"][cls_name]["ground_truth"]
            assert got["count"] == len(diameters)
            expected_mean = sum(diameters) / len(diameters)
            tol = max(2 * 0.5, 0.10 * expected_mean)
            assert abs(got["mean_diameter_nm"] - expected_mean) <= tol

        with open(report_path.parent / "per_defect_errors.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == doc["detection"]["tp"] > 0
        for row in rows:
            err = float(row["pred_diameter_nm"]) - float(row["gt_diameter_nm"])
            assert err == pytest.approx(float(row["diameter_error_nm"]))
            assert float(row["iou"]) >= doc["iou_threshold"]

    def test_repeat_runs_identical(self, workspace, tmp_path):
        fx = workspace["fx"]
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert main(["--quiet", "pipeline",
                         "--in", str(fx / "perturbed.json"),
                         "--out", str(out / "report.json")]) == 0
        for name in ("report.json", "run_manifest.json",
                     "per_defect_errors.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestPreprocessCommand:
    def test_augment_writes_eight_variants_with_boxes(self, workspace, tmp_path):
        fx = workspace["fx"]
        out = tmp_path / "pp"
        assert main(["--quiet", "preprocess", "--in", str(fx / "annotations.json"),
                     "--out", str(out), "--augment"]) == 0
        pngs = sorted(p.name for p in out.glob("*.png"))
        assert len(pngs) == 2 * 8
        for suffix in ("id", "r90", "r180", "r270", "fh", "fv", "d1", "d2"):
            assert f"scene_0_{suffix}.png" in pngs

        merged = load_dataset(out / "annotations.json")
        assert len(merged.images) == 16
        source = load_dataset(fx / "annotations.json").images[0]
        by_id = {rec.id: rec for rec in merged.images}
        variant = by_id["scene_0_r90"]
        expected = transform_box(source.labels[0].bbox, source.width,
                                 source.height, DihedralTransform.ROT90)
        assert variant.labels[0].bbox == expected
        assert variant.labels[0].cls is source.labels[0].cls

    def test_directory_input(self, workspace, tmp_path):
        fx = workspace["fx"]
        imgdir = tmp_path / "imgs"
        imgdir.mkdir()
        for p in fx.glob("*.png"):
            (imgdir / p.name).write_bytes(p.read_bytes())
        out = tmp_path / "ppd"
        assert main(["--quiet", "preprocess", "--in", str(imgdir),
                     "--out", str(out)]) == 0
        assert len(list(out.glob("*.png"))) == 2


class TestGlobalFlags:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "defectometer" in capsys.readouterr().out

    def test_bad_jobs(self, workspace):
        fx = workspace["fx"]
        assert main(["--quiet", "--jobs", "0", "evaluate",
                     "--in", str(fx / "identity.json")]) == 1
