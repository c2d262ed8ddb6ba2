import json
import math

import numpy as np
import pytest

from defectometer.core import (
    AnnotatedImage,
    BBox,
    DefectClass,
    Detection,
    GrayImage,
    GroundTruthLabel,
    MalformedFile,
    NonPositiveBox,
    UnknownClass,
    load_dataset,
    save_dataset,
)


def write_json(tmp_path, doc, name="ann.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def minimal_doc():
    return {"images": [{
        "id": "img0", "path": "img0.png", "width": 100, "height": 100,
        "nm_per_pixel": 0.5,
        "labels": [{"class": "loop111", "bbox": [10, 10, 20, 20]}],
        "detections": [],
    }]}


class TestBBox:
    def test_area_positive(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            x0, y0 = rng.uniform(-50, 50, size=2)
            w, h = rng.uniform(0.01, 40, size=2)
            assert BBox(x0, y0, x0 + w, y0 + h).area() > 0

    @pytest.mark.parametrize("corners", [
        (0, 0, 0, 5), (0, 0, 5, 0), (5, 0, 0, 5), (0, 0, -1, 5),
        (math.nan, 0, 1, 1), (0, 0, math.inf, 1),
    ])
    def test_degenerate_rejected(self, corners):
        with pytest.raises(ValueError):
            BBox(*corners)

    def test_clip(self):
        assert BBox(-5, 0, 10, 10).clip(100, 100) == BBox(0, 0, 10, 10)
        assert BBox(150, 150, 160, 160).clip(100, 100) is None


class TestGrayImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            GrayImage(np.full((4, 4), 1.5))
        with pytest.raises(ValueError):
            GrayImage(np.full((4, 4), -0.1))
        with pytest.raises(ValueError):
            GrayImage(np.full((4, 4), np.nan))

    def test_scale_bounds(self):
        GrayImage(np.zeros((4, 4)), nm_per_pixel=0.14)
        with pytest.raises(ValueError):
            GrayImage(np.zeros((4, 4)), nm_per_pixel=0.001)
        with pytest.raises(ValueError):
            GrayImage(np.zeros((4, 4)), nm_per_pixel=500.0)

    def test_pixels_read_only(self):
        img = GrayImage(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            img.pixels[0, 0] = 1.0

    def test_source_array_not_aliased(self):
        src = np.zeros((4, 4))
        img = GrayImage(src)
        src[0, 0] = 1.0
        assert img.pixels[0, 0] == 0.0


class TestLoad:
    def test_minimal_file(self, tmp_path):
        result = load_dataset(write_json(tmp_path, minimal_doc()))
        assert len(result.images) == 1
        assert result.warnings == []
        img = result.images[0]
        assert img.id == "img0"
        assert img.labels[0].cls is DefectClass.LOOP_111
        assert img.labels[0].bbox == BBox(10, 10, 20, 20)
        assert img.detections == ()

    def test_overhanging_box_clipped_with_warning(self, tmp_path):
        doc = minimal_doc()
        doc["images"][0]["labels"][0]["bbox"] = [-5, 0, 10, 10]
        result = load_dataset(write_json(tmp_path, doc))
        assert result.images[0].labels[0].bbox == BBox(0, 0, 10, 10)
        assert len(result.warnings) == 1

    def test_unknown_class_names_record(self, tmp_path):
        doc = minimal_doc()
        doc["images"][0]["labels"][0]["class"] = "void"
        with pytest.raises(UnknownClass, match=r"labels\[0\].*void"):
            load_dataset(write_json(tmp_path, doc))

    def test_zero_area_after_clip_rejected(self, tmp_path):
        doc = minimal_doc()
        doc["images"][0]["labels"][0]["bbox"] = [-20, -20, -1, 50]
        with pytest.raises(NonPositiveBox):
            load_dataset(write_json(tmp_path, doc))

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"images": [\n  {"id": }\n]}')
        with pytest.raises(MalformedFile, match="line"):
            load_dataset(path)

    def test_duplicate_ids_rejected(self, tmp_path):
        doc = minimal_doc()
        doc["images"].append(dict(doc["images"][0]))
        with pytest.raises(MalformedFile, match="duplicate"):
            load_dataset(write_json(tmp_path, doc))

    def test_missing_field(self, tmp_path):
        doc = minimal_doc()
        del doc["images"][0]["width"]
        with pytest.raises(MalformedFile, match="width"):
            load_dataset(write_json(tmp_path, doc))

    def test_score_out_of_range(self, tmp_path):
        doc = minimal_doc()
        doc["images"][0]["detections"] = [
            {"class": "blackdot", "bbox": [1, 1, 5, 5], "score": 1.5}]
        with pytest.raises(MalformedFile, match="score"):
            load_dataset(write_json(tmp_path, doc))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope.json")


def random_dataset(rng, n_images=4):
    images = []
    classes = list(DefectClass)
    for i in range(n_images):
        w = int(rng.integers(50, 200))
        h = int(rng.integers(50, 200))
        labels = []
        dets = []
        for _ in range(int(rng.integers(0, 5))):
            x0 = float(rng.uniform(0, w - 2))
            y0 = float(rng.uniform(0, h - 2))
            box = BBox(x0, y0, x0 + float(rng.uniform(1, w - x0)),
                       y0 + float(rng.uniform(1, h - y0)))
            labels.append(GroundTruthLabel(box, classes[int(rng.integers(0, 3))]))
        for _ in range(int(rng.integers(0, 5))):
            x0 = float(rng.uniform(0, w - 2))
            y0 = float(rng.uniform(0, h - 2))
            box = BBox(x0, y0, x0 + float(rng.uniform(1, w - x0)),
                       y0 + float(rng.uniform(1, h - y0)))
            dets.append(Detection(box, classes[int(rng.integers(0, 3))],
                                  float(rng.uniform(0, 1))))
        images.append(AnnotatedImage(
            id=f"img{i}", path=f"img{i}.png", width=w, height=h,
            nm_per_pixel=float(rng.uniform(0.14, 0.87)) if rng.random() < 0.7 else None,
            labels=tuple(labels), detections=tuple(dets)))
    return images


class TestSave:
    def test_empty_dataset(self):
        assert json.loads(save_dataset([])) == {"images": []}

    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(7)
        for trial in range(25):
            images = random_dataset(rng)
            path = tmp_path / f"rt{trial}.json"
            path.write_bytes(save_dataset(images))
            result = load_dataset(path)
            assert result.warnings == []
            assert result.images == images

    def test_exact_binary_fraction_score(self, tmp_path):
        images = [AnnotatedImage(
            id="a", path="a.png", width=10, height=10,
            detections=(Detection(BBox(1, 1, 5, 5), DefectClass.BLACK_DOT, 0.25),))]
        path = tmp_path / "s.json"
        path.write_bytes(save_dataset(images))
        assert load_dataset(path).images[0].detections[0].score == 0.25

    def test_key_order(self):
        raw = save_dataset(random_dataset(np.random.default_rng(1), 1)).decode()
        keys = [k for k in ("\"id\"", "\"path\"", "\"width\"", "\"height\"",
                            "\"nm_per_pixel\"", "\"labels\"", "\"detections\"")]
        positions = [raw.index(k) for k in keys]
        assert positions == sorted(positions)


class TestAnnotatedImage:
    def test_out_of_bounds_box_rejected(self):
        with pytest.raises(ValueError, match="exceeds image bounds"):
            AnnotatedImage(id="x", path="x.png", width=10, height=10,
                           labels=(GroundTruthLabel(BBox(5, 5, 15, 9),
                                                    DefectClass.LOOP_100),))
