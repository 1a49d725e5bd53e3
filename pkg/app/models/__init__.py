# Models Package
from .pipeline_config import PipelineConfig
from .quality_report import MetricTriple, PatchQuality, QualityReport
from .documents import (
    BoundaryDocument, BSplinePieceModel, LoopModel, LayoutDocument, ChainRecord, MeshRecord,
    BoundaryEdgeRecord, CurveRecord, QuadRecord, PatchRecord, Provenance, SegmentSourceRecord,
)

__all__ = [
    'PipelineConfig', 'MetricTriple', 'PatchQuality', 'QualityReport', 'BoundaryDocument',
    'BSplinePieceModel', 'LoopModel', 'LayoutDocument', 'ChainRecord', 'MeshRecord',
    'BoundaryEdgeRecord', 'CurveRecord', 'QuadRecord', 'PatchRecord', 'Provenance',
    'SegmentSourceRecord',
]
