"""
Quality report model
Scaled Jacobian and condition number statistics per patch and for the whole layout
"""

import math
from typing import Dict, List, Optional

from pydantic import Field, model_validator

from app.models.base import TolerantModel


class MetricTriple(TolerantModel):
    """min / average / max of one sampled metric."""

    min: float
    average: float
    max: float

    @model_validator(mode='after')
    def _check_order(self):
        tolerance = 1e-12 * max(1.0, abs(self.max) if math.isfinite(self.max) else 1.0)
        if not (self.min <= self.average + tolerance and self.average <= self.max + tolerance):
            raise ValueError(f"expected min <= average <= max, got {self.min}, {self.average}, {self.max}")
        return self


class PatchQuality(TolerantModel):
    index: int
    scaled_jacobian: MetricTriple
    condition_number: MetricTriple
    samples: int
    valid: bool = True
    repaired: bool = False
    repair_failed: bool = False
    degenerate_samples: int = 0
    singular_samples: int = 0


class QualityReport(TolerantModel):
    """Layout-wide metrics; as_table prints the usual Example | p | # Con. | # Patch columns."""

    name: Optional[str] = None
    degree: int
    patch_count: int
    control_point_count: int
    scaled_jacobian: MetricTriple
    condition_number: MetricTriple
    patches: List[PatchQuality] = Field(default_factory=list)
    fallback_pieces: int = 0
    irregular_vertices: int = 0
    valence_histogram: Dict[str, int] = Field(default_factory=dict)
    repair_failures: List[int] = Field(default_factory=list)
    flags: List[str] = Field(default_factory=list)
    global_seconds: Optional[float] = None
    local_seconds: Optional[float] = None

    @property
    def all_valid(self) -> bool:
        return all(patch.valid for patch in self.patches)

    def as_table(self) -> str:
        """Aligned-text table: Example | p | # Con. | # Patch | Scaled Jacobian | Condition number."""
        header = (f"{'Example':<16}{'p':>3}{'# Con.':>8}{'# Patch':>9}   "
                  f"{'SJ Max':>8}{'SJ Avg':>8}{'SJ Min':>8}   "
                  f"{'CN Max':>8}{'CN Avg':>8}{'CN Min':>8}")
        sj = self.scaled_jacobian
        cn = self.condition_number
        row = (f"{(self.name or '-')[:15]:<16}{self.degree:>3}{self.control_point_count:>8}"
               f"{self.patch_count:>9}   "
               f"{sj.max:>8.3f}{sj.average:>8.4f}{sj.min:>8.3f}   "
               f"{cn.max:>8.2f}{cn.average:>8.2f}{cn.min:>8.2f}")
        lines = [header, '-' * len(header), row]
        if self.global_seconds is not None and self.local_seconds is not None:
            lines.append(f"T1 (global) = {self.global_seconds:.3f} s, T2 (local) = {self.local_seconds:.3f} s")
        if self.fallback_pieces:
            lines.append(f"fallback quadrangulation used for {self.fallback_pieces} piece(s)")
        if self.repair_failures:
            lines.append(f"repair failed for patches {self.repair_failures}")
        for flag in self.flags:
            lines.append(f"! {flag}")
        return "\n".join(lines)
