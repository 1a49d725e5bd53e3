"""
Render Command Handler
"""

import argparse
import logging

from app.handlers.common import store
from app.handlers.router import CommandRouter, argument
from app.services.render_service import RENDER_MODES, render_png, render_svg
from config import DEFAULT_GRID, DEFAULT_ISO_COUNT

logger = logging.getLogger(__name__)
router = CommandRouter('render')


@router.command('render', help='draw a layout as SVG (or the colormap as PNG)',
                arguments=[argument('layout', help='layout document'),
                           argument('-o', '--output', required=True, help='image file to write'),
                           argument('--mode', choices=RENDER_MODES, default='isocurves'),
                           argument('--iso-count', type=int, default=DEFAULT_ISO_COUNT,
                                    help='iso-parameter curves per direction and patch'),
                           argument('--grid', type=int, default=DEFAULT_GRID, help='colormap cells per axis'),
                           argument('--format', choices=('svg', 'png'), default='svg'),
                           argument('--size', type=int, default=800, help='image size in pixels')])
async def render_command(args: argparse.Namespace) -> int:
    doc = store.load_layout(args.layout)
    if args.format == 'png':
        if args.mode != 'jacobian_colormap':
            logger.warning(f"PNG output always draws the Jacobian colormap, ignoring mode '{args.mode}'")
        render_png(doc, args.output, args.size, args.grid)
        return 0
    svg = render_svg(doc, args.mode, args.iso_count, args.grid, float(args.size))
    with open(args.output, 'w', encoding='utf-8') as f:
        f.write(svg)
    logger.info(f"Saved {args.mode} drawing to {args.output}")
    return 0
