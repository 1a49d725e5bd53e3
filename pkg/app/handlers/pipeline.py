"""
Pipeline Command Handler
Runs every stage on a boundary and writes the final layout document
"""

import argparse
import logging

from app.handlers.common import CONFIG_ARGUMENTS, build_config, store
from app.handlers.router import CommandRouter, argument
from app.services.pipeline_service import PipelineService

logger = logging.getLogger(__name__)
router = CommandRouter('pipeline')


@router.command('pipeline', help='run all stages from boundary to quality report',
                arguments=[argument('boundary', help='boundary JSON file or shipped asset name'),
                           argument('-o', '--output', required=True, help='layout document to write'),
                           *CONFIG_ARGUMENTS,
                           argument('--dump-quadmesh', metavar='PATH', help='also write the quad mesh as OBJ'),
                           argument('--trace-optimizer', metavar='PATH', help='write the L-BFGS trace as CSV')])
async def pipeline_command(args: argparse.Namespace) -> int:
    boundary = store.load_boundary_document(args.boundary)
    cfg = build_config(args)
    logger.info(f"Running pipeline on '{boundary.name}' (config {cfg.config_hash()[:12]})")
    doc = await PipelineService(store).run(boundary, cfg, args.dump_quadmesh, args.trace_optimizer)
    store.save_layout(args.output, doc)
    print(doc.report.as_table())
    for warning in doc.provenance.warnings:
        print(f"! {warning}")
    return 0
