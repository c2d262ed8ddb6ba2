import json

import pytest

from adapter_helpers import SCENE_SPEC, run_primary


@pytest.fixture(scope="session")
def synth_fixture(tmp_path_factory):
    """A rendered scene set with ground-truth labels, built by the toolkit."""
    root = tmp_path_factory.mktemp("adapter_fx")
    spec_path = root / "scenes.json"
    spec_path.write_text(json.dumps(SCENE_SPEC))
    proc = run_primary("synth", "--spec", str(spec_path),
                       "--out-dir", str(root / "fx"))
    assert proc.returncode == 0, proc.stderr
    return root / "fx"
