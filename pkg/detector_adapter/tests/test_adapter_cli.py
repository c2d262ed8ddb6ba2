import json
import subprocess
import sys

from detector_adapter.cli import main
from detector_adapter.schema import read_document


class TestAdapterCli:
    def test_stub_over_fixture(self, synth_fixture, tmp_path):
        out = tmp_path / "detections.json"
        rc = main(["--quiet", "--in", str(synth_fixture / "annotations.json"),
                   "--out", str(out), "--stub", "--jitter-iou", "0.8",
                   "--seed", "3"])
        assert rc == 0
        doc = read_document(out)
        assert sum(len(r["detections"]) for r in doc["images"]) == 6

    def test_empty_dataset(self, tmp_path):
        src = tmp_path / "empty.json"
        src.write_text(json.dumps({"images": []}))
        out = tmp_path / "out.json"
        assert main(["--quiet", "--in", str(src), "--out", str(out),
                     "--stub"]) == 0
        assert read_document(out) == {"images": []}

    def test_missing_weights_flag(self, synth_fixture, tmp_path):
        rc = main(["--quiet", "--in", str(synth_fixture / "annotations.json"),
                   "--out", str(tmp_path / "o.json")])
        assert rc == 1

    def test_model_load_failure_is_nonzero(self, synth_fixture, tmp_path):
        rc = main(["--quiet", "--in", str(synth_fixture / "annotations.json"),
                   "--out", str(tmp_path / "o.json"),
                   "--weights", str(tmp_path / "missing.pt")])
        assert rc == 2

    def test_invalid_input_schema(self, tmp_path):
        src = tmp_path / "bad.json"
        src.write_text(json.dumps({"images": [{"id": "x"}]}))
        rc = main(["--quiet", "--in", str(src),
                   "--out", str(tmp_path / "o.json"), "--stub"])
        assert rc == 1

    def test_console_entry_point(self, tmp_path):
        src = tmp_path / "empty.json"
        src.write_text(json.dumps({"images": []}))
        proc = subprocess.run(
            [sys.executable, "-m", "detector_adapter", "--in", str(src),
             "--out", str(tmp_path / "o.json"), "--stub"],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
