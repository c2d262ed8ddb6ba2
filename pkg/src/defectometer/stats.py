"""Microstructure statistics: per-class diameter summaries, areal density,
ground-truth-vs-prediction comparison reports, and the dispersed-barrier
hardening sensitivity of diameter errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .core import CLASS_ORDER, DefectClass
from .geometry import DefectGeometry

#: nm^2 expressed in m^2.
NM2_TO_M2 = 1e-18


class DomainError(ValueError):
    """Inputs outside the model's domain (e.g. a non-positive diameter)."""


class DensityMode(Enum):
    """Areal density conventions.

    COUNT is defects per unit imaged area (m^-2). AREA_FRACTION is the sum
    of defect areas divided by the total imaged area (dimensionless).
    """

    COUNT = "count"
    AREA_FRACTION = "area_fraction"


@dataclass(frozen=True)
class ClassSummary:
    """Diameter statistics and areal density for one defect class.

    ``sample_std_nm`` uses the n-1 denominator; ``sem_nm`` is
    sample_std / sqrt(n). For count 0 the statistics are NaN; for count 1
    spread statistics are 0 by convention.
    """

    cls: DefectClass
    count: int
    mean_diameter_nm: float
    sample_std_nm: float
    sem_nm: float
    areal_density_per_m2: float


@dataclass(frozen=True)
class ClassComparison:
    """Ground-truth vs predicted summaries for one class, with relative
    percentage errors (|pred - gt| / gt, truncated to one decimal as
    reported; NaN when the ground truth is degenerate)."""

    gt: ClassSummary
    pred: ClassSummary
    mean_diameter_err_pct: float
    density_err_pct: float


@dataclass(frozen=True)
class ComparisonReport:
    """Per-class GT/prediction comparison over a shared imaged area."""

    per_class: dict[DefectClass, ClassComparison]
    total_area_m2: float


def areal_density(geoms: Sequence[DefectGeometry], total_area_m2: float,
                  mode: DensityMode = DensityMode.COUNT) -> float:
    """Areal density of a geometry set over the total imaged area."""
    if total_area_m2 <= 0:
        raise ValueError(f"total_area_m2 must be positive, got {total_area_m2}")
    if mode is DensityMode.COUNT:
        return len(geoms) / total_area_m2
    return sum(g.area_nm2 for g in geoms) * NM2_TO_M2 / total_area_m2


def class_summary(geoms: Sequence[DefectGeometry], cls: DefectClass,
                  total_area_m2: float,
                  mode: DensityMode = DensityMode.COUNT) -> ClassSummary:
    """Diameter statistics and density for one class of a geometry set.

    A class with no members yields count 0 with NaN statistics rather than
    an error, so sparse classes do not abort a report.
    """
    if total_area_m2 <= 0:
        raise ValueError(f"total_area_m2 must be positive, got {total_area_m2}")
    members = [g for g in geoms if g.cls is cls]
    n = len(members)
    if n == 0:
        return ClassSummary(cls=cls, count=0, mean_diameter_nm=math.nan,
                            sample_std_nm=math.nan, sem_nm=math.nan,
                            areal_density_per_m2=0.0)
    diameters = [g.diameter_nm for g in members]
    mean = sum(diameters) / n
    if n == 1:
        std = sem = 0.0
    else:
        var = sum((d - mean) ** 2 for d in diameters) / (n - 1)
        std = math.sqrt(var)
        sem = std / math.sqrt(n)
    return ClassSummary(cls=cls, count=n, mean_diameter_nm=mean,
                        sample_std_nm=std, sem_nm=sem,
                        areal_density_per_m2=areal_density(
                            members, total_area_m2, mode))


def relative_error_pct(gt: float, pred: float) -> float:
    """|pred - gt| / gt as a percentage, truncated to one decimal place.

    Truncation (not rounding) is the reporting convention for comparison
    reports. NaN when gt is not positive.
    """
    if not (gt > 0) or math.isnan(pred):
        return math.nan
    raw = abs(pred - gt) / gt * 100.0
    return math.floor(raw * 10.0 + 1e-9) / 10.0


def compare_reports(gt_geoms: Sequence[DefectGeometry],
                    pred_geoms: Sequence[DefectGeometry],
                    total_area_m2: float,
                    mode: DensityMode = DensityMode.COUNT) -> ComparisonReport:
    """Per-class comparison of two geometry sets over the same imaged area.

    Each side is summarized by its own class labels, the way independent
    labeling pipelines are compared.
    """
    per_class: dict[DefectClass, ClassComparison] = {}
    for cls in CLASS_ORDER:
        gt = class_summary(gt_geoms, cls, total_area_m2, mode)
        pred = class_summary(pred_geoms, cls, total_area_m2, mode)
        per_class[cls] = ClassComparison(
            gt=gt, pred=pred,
            mean_diameter_err_pct=relative_error_pct(
                gt.mean_diameter_nm, pred.mean_diameter_nm),
            density_err_pct=relative_error_pct(
                gt.areal_density_per_m2, pred.areal_density_per_m2),
        )
    return ComparisonReport(per_class=per_class, total_area_m2=total_area_m2)


@dataclass(frozen=True)
class HardeningModel:
    """Dispersed-barrier hardening: yield-stress increase A * sqrt(d)."""

    coefficient: float = 1.0

    def __post_init__(self) -> None:
        if not (self.coefficient > 0):
            raise ValueError(f"coefficient must be positive, got {self.coefficient}")

    def yield_stress_increase(self, diameter_nm: float) -> float:
        if diameter_nm <= 0:
            raise DomainError(f"diameter must be positive, got {diameter_nm}")
        return self.coefficient * math.sqrt(diameter_nm)


def hardening_fractional_error(epsilon_nm: float, diameter_nm: float,
                               mode: str = "linearized") -> float:
    """Fractional change of sqrt-diameter hardening under a diameter error.

    exact: (sqrt(d + eps) - sqrt(d)) / sqrt(d); linearized: eps / (2 d),
    the first-order form valid for eps << d. The hardening coefficient
    cancels in both.
    """
    if diameter_nm <= 0 or diameter_nm + epsilon_nm <= 0:
        raise DomainError(
            f"need d > 0 and d + eps > 0, got d={diameter_nm}, eps={epsilon_nm}")
    if mode == "linearized":
        return epsilon_nm / (2.0 * diameter_nm)
    if mode == "exact":
        return math.sqrt(diameter_nm + epsilon_nm) / math.sqrt(diameter_nm) - 1.0
    raise ValueError(f"mode must be 'exact' or 'linearized', got {mode!r}")
