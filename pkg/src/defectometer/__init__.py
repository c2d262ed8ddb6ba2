"""defectometer: STEM micrograph defect analysis toolkit.

Preprocessing, detection evaluation, watershed-based ellipse geometry, and
microstructure statistics for dislocation-loop and black-dot defects.
"""

from .core import (
    AnnotatedImage,
    BBox,
    CLASS_ORDER,
    CompositeImage,
    DatasetError,
    DefectClass,
    Detection,
    GrayImage,
    GroundTruthLabel,
    LoadResult,
    MalformedFile,
    NonPositiveBox,
    UnknownClass,
    load_dataset,
    save_dataset,
)
from .evaluation import (
    ConfusionMatrix,
    DetectionMetrics,
    MatchResult,
    MetricsGrid,
    confusion_matrix,
    detection_metrics,
    iou,
    match_detections,
    sweep,
)
from .geometry import (
    DefectGeometry,
    DegenerateFit,
    EllipseFit,
    NoForeground,
    analyze_defect,
    diameter_of,
    fit_ellipse,
    segment_defect,
)
from .imaging import (
    ClaheParams,
    DihedralTransform,
    augment,
    clahe,
    crop,
    gaussian_blur,
    synthesize_channels,
)
from .stats import (
    ClassSummary,
    ComparisonReport,
    DensityMode,
    HardeningModel,
    areal_density,
    class_summary,
    compare_reports,
    hardening_fractional_error,
)
from .synth import (
    DefectSpec,
    Morphology,
    SceneSpec,
    SpecViolation,
    generate_scene,
    perturb_detections,
)

__version__ = "0.1.0"
