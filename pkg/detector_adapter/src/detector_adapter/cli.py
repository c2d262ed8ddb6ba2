"""detector-adapter: run a detector over an annotation JSON and emit the
same schema with detections filled in.

Exit codes: 0 success, 1 validation/schema error, 2 I/O or model-load
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .model import DEFAULT_CLASS_MAP, AdapterConfig, ModelLoadError, infer_detections
from .schema import SchemaError, read_document, write_document
from .stub import stub_detections

log = logging.getLogger("detector_adapter")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _parse_class_map(text: str) -> dict[int, str]:
    mapping = {}
    for item in text.split(","):
        idx, _, name = item.partition("=")
        try:
            mapping[int(idx)] = name.strip()
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"expected INDEX=class pairs, got {item!r}")
    return mapping


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detector-adapter",
        description="Run a pretrained two-stage detector (or the weight-free "
                    "stub) over micrographs and emit annotation JSON with "
                    "detections.")
    parser.add_argument("--version", action="version",
                        version=f"detector-adapter {__version__}")
    parser.add_argument("--in", dest="input", required=True,
                        help="annotation JSON (labels allowed, passed through)")
    parser.add_argument("--out", required=True,
                        help="output annotation JSON with detections")
    parser.add_argument("--weights", default=None,
                        help="detector checkpoint (required unless --stub)")
    parser.add_argument("--model", default="fasterrcnn_resnet50_fpn",
                        help="torchvision detection model name")
    parser.add_argument("--class-map", type=_parse_class_map,
                        default=dict(DEFAULT_CLASS_MAP),
                        metavar="IDX=CLS,...",
                        help="class-index mapping (default "
                             "1=loop111,2=blackdot,3=loop100)")
    parser.add_argument("--score-thr", type=float, default=0.25,
                        help="discard detections below this confidence "
                             "(default 0.25)")
    parser.add_argument("--device", default="cpu", help="inference device")
    parser.add_argument("--stub", action="store_true",
                        help="echo ground-truth labels instead of running a "
                             "model (no weights needed)")
    parser.add_argument("--jitter-iou", type=float, default=0.8,
                        help="stub mode: minimum IoU between a label and its "
                             "echoed box (default 0.8; 1.0 echoes exactly)")
    parser.add_argument("--seed", type=int, default=0,
                        help="stub mode: jitter seed")
    parser.add_argument("--quiet", action="store_true",
                        help="only report errors")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr,
                        force=True)
    in_path = Path(args.input)
    try:
        doc = read_document(in_path)
        if args.stub:
            out_doc = stub_detections(doc, jitter_iou=args.jitter_iou,
                                      seed=args.seed, score_thr=args.score_thr)
        else:
            if not args.weights:
                log.error("--weights is required unless --stub is given")
                return EXIT_VALIDATION
            config = AdapterConfig(weights_path=args.weights,
                                   model_name=args.model,
                                   class_map=args.class_map,
                                   score_thr=args.score_thr,
                                   device=args.device)
            out_doc = infer_detections(doc, config, in_path.parent)
        write_document(out_doc, args.out)
    except SchemaError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except ModelLoadError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    n_dets = sum(len(rec["detections"]) for rec in out_doc["images"])
    log.info("wrote %d detections over %d images -> %s",
             n_dets, len(out_doc["images"]), args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
