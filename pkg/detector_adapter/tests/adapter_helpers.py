"""Fixture data and helpers for the adapter test suite."""

import subprocess
import sys

SCENE_SPEC = {"scenes": [
    {"id": "fx0", "width": 220, "height": 220, "nm_per_pixel": 0.5,
     "background_level": 0.75, "noise_sigma": 0.03, "blur_sigma": 1.0,
     "rng_seed": 3,
     "defects": [
         {"morphology": "single_ring", "center": [60, 60], "a": 20, "b": 16,
          "theta": 0.5, "depth": 0.45},
         {"morphology": "solid_dot", "center": [150, 70], "a": 6, "b": 6,
          "depth": 0.5},
         {"morphology": "solid_ellipse", "center": [70, 160], "a": 14, "b": 8,
          "theta": 1.2, "depth": 0.4},
         {"morphology": "double_ring", "center": [160, 160], "a": 22, "b": 18,
          "theta": 2.0, "depth": 0.45},
     ]},
    {"id": "fx1", "width": 160, "height": 160, "nm_per_pixel": 0.5,
     "background_level": 0.7, "noise_sigma": 0.02, "blur_sigma": 0.8,
     "rng_seed": 4,
     "defects": [
         {"morphology": "solid_ellipse", "center": [50, 50], "a": 12, "b": 9,
          "theta": 0.2, "depth": 0.4},
         {"morphology": "solid_dot", "center": [110, 110], "a": 7, "b": 7,
          "depth": 0.45},
     ]},
]}


def run_primary(*cli_args: str) -> subprocess.CompletedProcess:
    """Invoke the analysis toolkit through its CLI, the shared interface."""
    return subprocess.run(
        [sys.executable, "-m", "defectometer", *cli_args],
        capture_output=True, text=True)
