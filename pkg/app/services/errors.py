"""
Exception hierarchy for the parameterization services.
Recoverable conditions are logged and reported; these are raised only for rejected inputs.
"""

from typing import Optional


class ParameterizationError(Exception):
    """Base class for all errors raised by the services."""


class DomainError(ParameterizationError, ValueError):
    """Precondition of a kernel operation violated (bad index, parameter or degree)."""


class BoundaryError(ParameterizationError):
    """Invalid input boundary: open, degenerate, self-intersecting or unclamped."""

    def __init__(self, message: str, loop: Optional[int] = None, piece: Optional[int] = None,
                 edges: Optional[tuple] = None):
        details = []
        if loop is not None:
            details.append(f"loop {loop}")
        if piece is not None:
            details.append(f"piece {piece}")
        if edges is not None:
            details.append(f"edges {edges}")
        super().__init__(f"{message} ({', '.join(details)})" if details else message)
        self.loop = loop
        self.piece = piece
        self.edges = edges


class TopologyError(ParameterizationError):
    """Quad topology could not be built (bridging exhausted, non-conforming mesh)."""


class SolverError(ParameterizationError):
    """A linear system that must be regular turned out singular."""


class DocumentError(ParameterizationError):
    """A JSON document could not be parsed or failed schema validation."""


class MigrationError(DocumentError):
    """Document format version differs from the supported one."""


class StageError(ParameterizationError):
    """Failure inside a pipeline stage, tagged with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
