"""
Services package for the planar domain parameterizer
"""

from .document_store import DocumentStore
from .errors import (
    BoundaryError, DocumentError, DomainError, MigrationError, ParameterizationError, SolverError,
    StageError, TopologyError,
)
from .pipeline_service import PipelineService, load_boundary, load_layout, run_pipeline, save_layout
from .render_service import render_png, render_svg

__all__ = [
    'DocumentStore', 'PipelineService', 'run_pipeline', 'load_boundary', 'load_layout', 'save_layout',
    'render_svg', 'render_png', 'ParameterizationError', 'DomainError', 'BoundaryError', 'TopologyError',
    'SolverError', 'DocumentError', 'MigrationError', 'StageError',
]
