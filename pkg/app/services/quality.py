"""
Quality metrics
Scaled Jacobian and Frobenius condition number sampled on a uniform tensor grid per patch.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import DEFAULT_GRID
from app.models.quality_report import MetricTriple, PatchQuality, QualityReport
from app.services.errors import DomainError
from app.services.patchfit import BezierPatch
from app.services.validity import jacobian_coeffs

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-14


@dataclass(frozen=True)
class MetricSamples:
    """Samples of one metric on a grid x grid lattice and the count of flagged samples."""

    values: np.ndarray
    flagged: int = 0

    def triple(self) -> MetricTriple:
        values = self.values.ravel()
        return MetricTriple(min=float(values.min()), average=float(values.mean()), max=float(values.max()))


def _jacobian_parts(patch: BezierPatch, grid: int):
    if grid < 2:
        raise DomainError(f"sampling grid must be at least 2x2, got {grid}")
    t = np.linspace(0.0, 1.0, grid)
    r_u, r_v = patch.derivatives(t, t)
    det = r_u[..., 0] * r_v[..., 1] - r_v[..., 0] * r_u[..., 1]
    return r_u, r_v, det


def scaled_jacobian_field(patch: BezierPatch, grid: int = DEFAULT_GRID) -> MetricSamples:
    """J / (|r_u| |r_v|); degenerate samples record 0."""
    r_u, r_v, det = _jacobian_parts(patch, grid)
    return _scaled_jacobian(r_u, r_v, det)


def _scaled_jacobian(r_u, r_v, det) -> MetricSamples:
    norms = np.linalg.norm(r_u, axis=-1) * np.linalg.norm(r_v, axis=-1)
    degenerate = norms < DEGENERATE_NORM
    values = np.where(degenerate, 0.0, det / np.where(degenerate, 1.0, norms))
    return MetricSamples(values, int(degenerate.sum()))


def condition_number_field(patch: BezierPatch, grid: int = DEFAULT_GRID) -> MetricSamples:
    """|J|_F |J^-1|_F = |J|_F^2 / |det J| for 2x2 matrices; singular samples record +inf."""
    r_u, r_v, det = _jacobian_parts(patch, grid)
    return _condition_number(r_u, r_v, det)


def _condition_number(r_u, r_v, det) -> MetricSamples:
    frobenius = np.sum(r_u ** 2, axis=-1) + np.sum(r_v ** 2, axis=-1)
    singular = np.abs(det) < DEGENERATE_NORM * np.maximum(frobenius, 1.0)
    values = np.where(singular, np.inf, frobenius / np.where(singular, 1.0, np.abs(det)))
    return MetricSamples(values, int(singular.sum()))


def patch_quality(index: int, patch: BezierPatch, grid: int = DEFAULT_GRID,
                  repaired: bool = False, repair_failed: bool = False) -> PatchQuality:
    r_u, r_v, det = _jacobian_parts(patch, grid)
    scaled = _scaled_jacobian(r_u, r_v, det)
    condition = _condition_number(r_u, r_v, det)
    return PatchQuality(index=index, scaled_jacobian=scaled.triple(), condition_number=condition.triple(),
                        samples=int(det.size), valid=jacobian_coeffs(patch).valid,
                        repaired=repaired, repair_failed=repair_failed,
                        degenerate_samples=scaled.flagged, singular_samples=condition.flagged)


def _combine(triples: Sequence[MetricTriple], weights: Sequence[int]) -> MetricTriple:
    total = float(sum(weights))
    average = sum(t.average * w for t, w in zip(triples, weights)) / total
    low = min(t.min for t in triples)
    high = max(t.max for t in triples)
    return MetricTriple(min=low, average=min(max(average, low), high), max=high)


def quality_report(patches: Sequence[BezierPatch], grid: int = DEFAULT_GRID, name: Optional[str] = None,
                   repaired: Sequence[int] = (), repair_failures: Sequence[int] = (),
                   fallback_pieces: int = 0, audit: Optional[Dict] = None) -> QualityReport:
    """Sample-weighted aggregation over all patches, with per-patch rows."""
    if not patches:
        raise DomainError("quality report needs at least one patch")
    repaired, repair_failures = set(repaired), set(repair_failures)
    rows: List[PatchQuality] = [
        patch_quality(index, patch, grid, index in repaired, index in repair_failures)
        for index, patch in enumerate(patches)
    ]
    weights = [row.samples for row in rows]
    n = patches[0].degree
    audit = audit or {}

    flags = []
    degenerate = sum(row.degenerate_samples for row in rows)
    singular = sum(row.singular_samples for row in rows)
    if degenerate:
        flags.append(f"{degenerate} degenerate sample(s) with vanishing |r_u||r_v|")
    if singular:
        flags.append(f"{singular} singular Jacobian sample(s)")
    invalid = [row.index for row in rows if not row.valid]
    if invalid:
        flags.append(f"patches without a positive Jacobian certificate: {invalid}")

    report = QualityReport(
        name=name,
        degree=n,
        patch_count=len(patches),
        control_point_count=_control_point_count(patches),
        scaled_jacobian=_combine([row.scaled_jacobian for row in rows], weights),
        condition_number=_combine([row.condition_number for row in rows], weights),
        patches=rows,
        fallback_pieces=fallback_pieces,
        irregular_vertices=int(audit.get('irregular_vertices', 0)),
        valence_histogram={str(k): int(v) for k, v in audit.get('valence_histogram', {}).items()},
        repair_failures=sorted(repair_failures),
        flags=flags,
    )
    logger.info(f"Quality: SJ min {report.scaled_jacobian.min:.3f} avg {report.scaled_jacobian.average:.4f}, "
                f"CN avg {report.condition_number.average:.3f} over {len(patches)} patch(es)")
    return report


def _control_point_count(patches: Sequence[BezierPatch]) -> int:
    """Distinct control points across the layout; shared boundary rows are counted once."""
    points = np.concatenate([patch.net.reshape(-1, 2) for patch in patches])
    return int(np.unique(points, axis=0).shape[0])
