"""
Document Store
Handles JSON file operations for boundary and layout documents
"""

import json
import logging
import math
import os
import tempfile
from typing import Any, Dict, Type, TypeVar

from pydantic import BaseModel, ValidationError

from config import BOUNDARY_DIR, DOCUMENT_FORMAT_VERSION
from app.models.documents import BoundaryDocument, LayoutDocument
from app.services.errors import DocumentError, MigrationError

logger = logging.getLogger(__name__)

Document = TypeVar('Document', bound=BaseModel)


def _major(version: str) -> str:
    return str(version).split('.')[0]


def _encode_non_finite(value: Any) -> Any:
    """Non-finite floats as the strings 'inf', '-inf', 'nan' so the file stays standard JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return 'nan' if math.isnan(value) else ('inf' if value > 0 else '-inf')
    if isinstance(value, dict):
        return {key: _encode_non_finite(item) for key, item in value.items()}
    if isinstance(value, list):
        return [_encode_non_finite(item) for item in value]
    return value


class DocumentStore:
    """Versioned JSON documents with atomic writes."""

    def __init__(self, boundary_dir: str = BOUNDARY_DIR):
        """Initialize document store."""
        self.boundary_dir = boundary_dir

    def _ensure_directory(self, path: str):
        """Ensure the directory holding `path` exists."""
        directory = os.path.dirname(os.path.abspath(path))
        if not os.path.exists(directory):
            os.makedirs(directory)
            logger.info(f"Created directory: {directory}")

    def _load_data(self, path: str) -> Dict[str, Any]:
        """Load raw JSON from file, reporting the location of syntax errors."""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            logger.error(f"Error parsing {path}: {e.msg} at line {e.lineno}, column {e.colno}")
            raise DocumentError(f"{path}: {e.msg} at line {e.lineno}, column {e.colno}") from e
        except OSError as e:
            logger.error(f"Error reading {path}: {e}")
            raise DocumentError(f"{path}: cannot read ({e})") from e
        if not isinstance(data, dict):
            raise DocumentError(f"{path}: top-level JSON value must be an object")
        return data

    def _save_data(self, path: str, data: Dict[str, Any]):
        """Write JSON to a temporary file next to `path`, then move it into place."""
        self._ensure_directory(path)
        directory = os.path.dirname(os.path.abspath(path))
        handle, temporary = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix='.json')
        try:
            with os.fdopen(handle, 'w', encoding='utf-8') as f:
                json.dump(_encode_non_finite(data), f, indent=2, ensure_ascii=False, allow_nan=False)
            os.replace(temporary, path)
        except (OSError, TypeError, ValueError) as e:
            logger.error(f"Error saving {path}: {e}")
            if os.path.exists(temporary):
                os.remove(temporary)
            raise DocumentError(f"{path}: cannot write ({e})") from e

    def _check_version(self, path: str, data: Dict[str, Any]):
        version = data.get('format_version', DOCUMENT_FORMAT_VERSION)
        if _major(version) != _major(DOCUMENT_FORMAT_VERSION):
            raise MigrationError(f"{path}: format version {version} is not supported "
                                 f"(expected {DOCUMENT_FORMAT_VERSION}); migrate the document first")

    def _parse(self, path: str, model: Type[Document]) -> Document:
        data = self._load_data(path)
        self._check_version(path, data)
        try:
            return model.model_validate(data)
        except ValidationError as e:
            problems = "; ".join(f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}"
                                 for error in e.errors())
            logger.error(f"Schema violation in {path}: {problems}")
            raise DocumentError(f"{path}: {problems}") from e

    def resolve_boundary(self, name_or_path: str) -> str:
        """A path as given if it exists, otherwise a shipped asset by name."""
        if os.path.exists(name_or_path):
            return name_or_path
        candidate = os.path.join(self.boundary_dir, name_or_path)
        if not candidate.endswith('.json'):
            candidate += '.json'
        if os.path.exists(candidate):
            return candidate
        raise DocumentError(f"boundary '{name_or_path}' not found")

    def load_boundary_document(self, path: str) -> BoundaryDocument:
        document = self._parse(self.resolve_boundary(path), BoundaryDocument)
        if document.name is None:
            document.name = os.path.splitext(os.path.basename(path))[0]
        logger.info(f"Loaded boundary '{document.name}' with {len(document.loops)} loop(s)")
        return document

    def save_boundary_document(self, path: str, document: BoundaryDocument):
        self._save_data(path, document.model_dump(mode='json'))

    def load_layout(self, path: str) -> LayoutDocument:
        document = self._parse(path, LayoutDocument)
        logger.info(f"Loaded layout '{document.name}' at stage '{document.stage}'")
        return document

    def save_layout(self, path: str, document: LayoutDocument):
        self._save_data(path, document.model_dump(mode='json'))
        logger.info(f"Saved layout '{document.name}' (stage '{document.stage}') to {path}")
