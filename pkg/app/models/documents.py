"""
Document models
Boundary input documents and the layout document every pipeline stage reads and writes
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import Field, model_validator

from config import DOCUMENT_FORMAT_VERSION
from app.models.pipeline_config import PipelineConfig
from app.models.base import TolerantModel
from app.models.quality_report import QualityReport


Point = List[float]


class BSplinePieceModel(TolerantModel):
    """One clamped B-spline piece of a boundary loop."""

    degree: int = Field(..., ge=1, le=14)
    knots: List[float]
    control_points: List[Point]

    @model_validator(mode='after')
    def _check_counts(self):
        if len(self.knots) != len(self.control_points) + self.degree + 1:
            raise ValueError(
                f"#knots ({len(self.knots)}) != #control points ({len(self.control_points)}) "
                f"+ degree ({self.degree}) + 1")
        for point in self.control_points:
            if len(point) != 2:
                raise ValueError(f"control point {point} is not 2D")
        return self


class LoopModel(TolerantModel):
    """Closed boundary loop; the outer loop comes first."""

    orientation: Literal['outer', 'hole'] = 'outer'
    pieces: List[BSplinePieceModel] = Field(..., min_length=1)


class BoundaryDocument(TolerantModel):
    """Input boundary: one outer loop and any number of holes."""

    format_version: str = DOCUMENT_FORMAT_VERSION
    name: Optional[str] = None
    loops: List[LoopModel] = Field(..., min_length=1)

    @model_validator(mode='after')
    def _check_loops(self):
        if self.loops[0].orientation != 'outer':
            raise ValueError("the first loop must be the outer loop")
        extra_outer = [i for i, loop in enumerate(self.loops[1:], start=1) if loop.orientation == 'outer']
        if extra_outer:
            raise ValueError(f"only one outer loop allowed, found more at {extra_outer}")
        return self


class SegmentSourceRecord(TolerantModel):
    piece: int
    span: List[float]


class ChainRecord(TolerantModel):
    is_hole: bool
    segments: List[List[Point]]
    sources: List[SegmentSourceRecord]


class BoundaryEdgeRecord(TolerantModel):
    start: int
    end: int
    control_points: Optional[List[Point]] = None


class MeshRecord(TolerantModel):
    vertices: List[Point]
    quads: List[List[int]]
    boundary_edges: List[BoundaryEdgeRecord]
    fallback_pieces: int = 0
    smoothing_history: List[float] = Field(default_factory=list)


class CurveRecord(TolerantModel):
    start: int
    end: int
    control_points: List[Point]
    boundary: bool


class QuadRecord(TolerantModel):
    curves: List[int] = Field(..., min_length=4, max_length=4)
    reversed: List[bool] = Field(..., min_length=4, max_length=4)


class PatchRecord(TolerantModel):
    net: List[List[Point]]
    valid: bool = True
    repaired: bool = False
    repair_failed: bool = False


class Provenance(TolerantModel):
    config_hash: str = ""
    seed: int = 0
    timings: Dict[str, float] = Field(default_factory=dict)
    residuals: Dict[str, float] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)


class LayoutDocument(TolerantModel):
    """
    Serialized pipeline state. Stages fill the sections in order:
    chains (preprocess), mesh (mesh), curves/quads (segment), patches (fit),
    report (check/report).
    """

    format_version: str = DOCUMENT_FORMAT_VERSION
    name: Optional[str] = None
    stage: Literal['preprocess', 'mesh', 'segment', 'fit', 'check', 'report'] = 'preprocess'
    config: PipelineConfig = Field(default_factory=PipelineConfig)
    degree: int = 4
    chains: List[ChainRecord] = Field(default_factory=list)
    mesh: Optional[MeshRecord] = None
    curves: List[CurveRecord] = Field(default_factory=list)
    quads: List[QuadRecord] = Field(default_factory=list)
    patches: List[PatchRecord] = Field(default_factory=list)
    report: Optional[QualityReport] = None
    provenance: Provenance = Field(default_factory=Provenance)

    def without_timings(self) -> Dict[str, Any]:
        """Plain dump with timing fields removed, for determinism comparisons."""
        data = self.model_dump()
        data['provenance']['timings'] = {}
        if data.get('report') is not None:
            data['report']['global_seconds'] = None
            data['report']['local_seconds'] = None
        return data
