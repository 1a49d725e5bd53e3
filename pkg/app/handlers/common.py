"""
Shared CLI plumbing: configuration flags and document I/O used by every stage handler
"""

import argparse
import json
import logging
from typing import List, Optional

from app.handlers.router import Argument, argument
from app.models.documents import LayoutDocument
from app.models.pipeline_config import PipelineConfig
from app.services.document_store import DocumentStore
from app.services.errors import DocumentError
from config import WEIGHT_PRESETS

logger = logging.getLogger(__name__)

store = DocumentStore()

CONFIG_ARGUMENTS: List[Argument] = [
    argument('--config', metavar='PATH', help='JSON file with pipeline parameters'),
    argument('--preset', choices=sorted(WEIGHT_PRESETS), help='named objective weight row'),
    argument('--epsilon', type=float, help='concavity tolerance in (0, 1]'),
    argument('--degree', type=int, help='patch degree in [4, 14]'),
    argument('--grid', type=int, help='quality sampling grid per axis'),
    argument('--seed', type=int, help='random seed for repair restarts'),
    argument('--refine', type=int, help='split every boundary segment into 2^k pieces'),
]

LAYOUT_ARGUMENTS: List[Argument] = [
    argument('layout', help='layout document produced by the previous stage'),
    argument('-o', '--output', help='output layout document (defaults to overwriting the input)'),
]

FLAG_FIELDS = {'epsilon': 'epsilon', 'degree': 'degree', 'grid': 'grid', 'seed': 'seed',
               'refine': 'boundary_refinement'}


def build_config(args: argparse.Namespace, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """
    Defaults (or the document's config), then the --preset row, then the --config
    file, then explicit flags. Every layer is validated.
    """
    values = (base or PipelineConfig()).model_dump()
    preset = getattr(args, 'preset', None)
    if preset:
        values.update(PipelineConfig.from_preset(preset).model_dump(
            include={'sigma1', 'sigma2', 'omega1', 'omega2', 'omega3', 'tau1', 'tau2'}))
    path = getattr(args, 'config', None)
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                overrides = json.load(f)
        except json.JSONDecodeError as e:
            raise DocumentError(f"{path}: {e.msg} at line {e.lineno}, column {e.colno}") from e
        except OSError as e:
            raise DocumentError(f"{path}: cannot read ({e})") from e
        if not isinstance(overrides, dict):
            raise DocumentError(f"{path}: configuration must be a JSON object")
        values.update(overrides)
    for flag, name in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    return PipelineConfig(**values)


def read_layout(args: argparse.Namespace) -> LayoutDocument:
    doc = store.load_layout(args.layout)
    if any(getattr(args, flag, None) is not None for flag in ('config', 'preset', *FLAG_FIELDS)):
        doc.config = build_config(args, doc.config)
        logger.info("Pipeline parameters overridden from the command line")
    return doc


def write_layout(args: argparse.Namespace, doc: LayoutDocument):
    store.save_layout(args.output or args.layout, doc)
