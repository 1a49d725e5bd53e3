"""
Stage Command Handlers
One subcommand per pipeline stage; each reads a document and writes the next one
"""

import argparse
import logging

from app.handlers.common import CONFIG_ARGUMENTS, LAYOUT_ARGUMENTS, build_config, read_layout, store, write_layout
from app.handlers.router import CommandRouter, argument
from app.services.pipeline_service import PipelineService, layout_summary

logger = logging.getLogger(__name__)
router = CommandRouter('stages')
service = PipelineService(store)


@router.command('preprocess', help='extract, subdivide and degree-elevate the boundary',
                arguments=[argument('boundary', help='boundary JSON file or shipped asset name'),
                           argument('-o', '--output', required=True, help='layout document to write'),
                           *CONFIG_ARGUMENTS])
async def preprocess_command(args: argparse.Namespace) -> int:
    boundary = store.load_boundary_document(args.boundary)
    doc = service.preprocess(boundary, build_config(args))
    store.save_layout(args.output, doc)
    return 0


@router.command('mesh', help='decompose the domain and build the smoothed quad mesh',
                arguments=[*LAYOUT_ARGUMENTS, *CONFIG_ARGUMENTS,
                           argument('--dump-quadmesh', metavar='PATH', help='also write the quad mesh as OBJ')])
async def mesh_command(args: argparse.Namespace) -> int:
    doc = service.mesh(read_layout(args), args.dump_quadmesh)
    write_layout(args, doc)
    return 0


@router.command('segment', help='initialize and optimize the segmentation curves',
                arguments=[*LAYOUT_ARGUMENTS, *CONFIG_ARGUMENTS,
                           argument('--trace-optimizer', metavar='PATH', help='write the L-BFGS trace as CSV')])
async def segment_command(args: argparse.Namespace) -> int:
    doc = service.segment(read_layout(args), args.trace_optimizer)
    write_layout(args, doc)
    return 0


@router.command('fit', help='build the Bézier patches with C1/G1 ties and inner points',
                arguments=[*LAYOUT_ARGUMENTS, *CONFIG_ARGUMENTS])
async def fit_command(args: argparse.Namespace) -> int:
    doc = await service.fit(read_layout(args))
    write_layout(args, doc)
    return 0


@router.command('check', help='certify every patch and repair the invalid ones',
                arguments=[*LAYOUT_ARGUMENTS, *CONFIG_ARGUMENTS])
async def check_command(args: argparse.Namespace) -> int:
    doc = await service.check(read_layout(args))
    write_layout(args, doc)
    failed = [i for i, record in enumerate(doc.patches) if record.repair_failed]
    if failed:
        logger.warning(f"Patches still invalid after repair: {failed}")
    return 0


@router.command('report', help='sample the quality metrics and print the table',
                arguments=[*LAYOUT_ARGUMENTS, *CONFIG_ARGUMENTS])
async def report_command(args: argparse.Namespace) -> int:
    doc = await service.report(read_layout(args))
    write_layout(args, doc)
    print(doc.report.as_table())
    for flag in doc.report.flags:
        print(f"! {flag}")
    return 0


@router.command('info', help='summarize a layout document',
                arguments=[argument('layout', help='layout document')])
async def info_command(args: argparse.Namespace) -> int:
    for line in layout_summary(store.load_layout(args.layout)):
        print(line)
    return 0
