"""Real inference path: a torchvision two-stage detector over composite
images, emitting schema detections.

torch/torchvision are imported lazily so the stub path works without them.
The adapter's contract is the wire format, not the network: any checkpoint
whose class indices map onto the three defect classes is usable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .schema import CLASS_NAMES

#: Class index 0 is reserved for background, matching torchvision heads.
DEFAULT_CLASS_MAP = {1: "loop111", 2: "blackdot", 3: "loop100"}


class ModelLoadError(RuntimeError):
    """The detector model or its weights could not be loaded."""


@dataclass(frozen=True)
class AdapterConfig:
    """Inference settings: model identity, class mapping, and thresholds."""

    weights_path: str
    model_name: str = "fasterrcnn_resnet50_fpn"
    class_map: dict[int, str] = field(
        default_factory=lambda: dict(DEFAULT_CLASS_MAP))
    score_thr: float = 0.25
    device: str = "cpu"

    def __post_init__(self) -> None:
        if not (0.0 <= self.score_thr <= 1.0):
            raise ValueError(f"score_thr must lie in [0, 1], got {self.score_thr}")
        mapped = set(self.class_map.values())
        if mapped != set(CLASS_NAMES):
            raise ValueError(
                f"class map must cover exactly {sorted(CLASS_NAMES)}, "
                f"got {sorted(mapped)}")


def load_model(config: AdapterConfig):
    """Build the torchvision detector and load checkpoint weights."""
    weights = Path(config.weights_path)
    if not weights.is_file():
        raise ModelLoadError(f"weights file not found: {weights}")
    try:
        import torch
        import torchvision
    except ImportError as exc:
        raise ModelLoadError(
            "torch/torchvision are required for real inference; install the "
            "'model' extra or use --stub") from exc
    builder = getattr(torchvision.models.detection, config.model_name, None)
    if builder is None:
        raise ModelLoadError(f"unknown detector model {config.model_name!r}")
    try:
        model = builder(weights=None, num_classes=len(config.class_map) + 1)
        state = torch.load(config.weights_path, map_location=config.device)
        if isinstance(state, dict) and "model" in state:
            state = state["model"]
        model.load_state_dict(state)
    except Exception as exc:
        raise ModelLoadError(f"failed to load {config.weights_path}: {exc}") from exc
    model.to(config.device)
    model.eval()
    return model


def _image_tensor(path: Path):
    import torch

    with Image.open(path) as im:
        im.load()
        if im.mode not in ("RGB",):
            im = im.convert("RGB")
        arr = np.asarray(im).astype(np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def infer_detections(doc: dict, config: AdapterConfig,
                     base_dir: Path) -> dict:
    """Run the detector over every image; labels pass through untouched."""
    import torch

    model = load_model(config)
    out_images = []
    with torch.no_grad():
        for rec in doc["images"]:
            img_path = Path(rec["path"])
            if not img_path.is_absolute():
                img_path = base_dir / img_path
            tensor = _image_tensor(img_path).to(config.device)
            (result,) = model([tensor])
            detections = []
            for box, label, score in zip(result["boxes"].cpu().numpy(),
                                         result["labels"].cpu().numpy(),
                                         result["scores"].cpu().numpy()):
                cls = config.class_map.get(int(label))
                if cls is None or float(score) < config.score_thr:
                    continue
                x0 = float(np.clip(box[0], 0, rec["width"]))
                y0 = float(np.clip(box[1], 0, rec["height"]))
                x1 = float(np.clip(box[2], 0, rec["width"]))
                y1 = float(np.clip(box[3], 0, rec["height"]))
                if x0 >= x1 or y0 >= y1:
                    continue
                detections.append({"class": cls, "bbox": [x0, y0, x1, y1],
                                   "score": float(min(max(score, 0.0), 1.0))})
            out = dict(rec)
            out["detections"] = detections
            out_images.append(out)
    return {"images": out_images}
