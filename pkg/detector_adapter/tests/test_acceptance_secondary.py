"""Acceptance: stub-mode detections flow through the analysis toolkit's
evaluation to a perfect score, crossing only the public interfaces
(annotation JSON + CLI).
"""

import json

from detector_adapter.cli import main
from adapter_helpers import run_primary


def test_criterion_10_stub_integration(synth_fixture, tmp_path):
    detections = tmp_path / "detections.json"
    rc = main(["--quiet", "--in", str(synth_fixture / "annotations.json"),
               "--out", str(detections), "--stub", "--jitter-iou", "1.0",
               "--seed", "0"])
    assert rc == 0

    # Primary-side schema validation: the toolkit loads it with no warnings.
    out_dir = tmp_path / "eval"
    proc = run_primary("evaluate", "--in", str(detections),
                       "--out-dir", str(out_dir))
    assert proc.returncode == 0, proc.stderr
    assert "WARNING" not in proc.stderr

    metrics = json.loads((out_dir / "metrics.json").read_text())
    assert metrics["precision"] == 1.0
    assert metrics["recall"] == 1.0
    assert metrics["f1"] == 1.0
