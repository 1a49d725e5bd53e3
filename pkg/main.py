#!/usr/bin/env python3
"""
Planar domain parameterizer - B-spline boundaries to multi-patch Bézier layouts
Main entry point for the command-line application
"""

import asyncio
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from config import LOG_LEVEL
from app.handlers.router import CommandDispatcher
from app.handlers.pipeline import router as pipeline_router
from app.handlers.stages import router as stages_router
from app.handlers.render import router as render_router
from app.services.errors import DocumentError, ParameterizationError

# Configure logging
logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=getattr(logging, LOG_LEVEL),
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)
logger = logging.getLogger(__name__)

EXIT_PIPELINE_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def build_dispatcher() -> CommandDispatcher:
    dp = CommandDispatcher(description='Parameterize planar B-spline domains with multi-patch Bézier layouts')
    # Full pipeline first, then the single stages, then output
    dp.include_router(pipeline_router)
    dp.include_router(stages_router)
    dp.include_router(render_router)
    return dp


async def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse the command line and run the selected subcommand."""
    dp = build_dispatcher()
    args = dp.parse(argv)
    try:
        return await dp.dispatch(args)
    except (ValidationError, DocumentError) as e:
        logger.critical(f"Configuration or document error: {e}")
        return EXIT_CONFIG_ERROR
    except ParameterizationError as e:
        logger.critical(f"Pipeline failed: {e}")
        return EXIT_PIPELINE_FAILURE
    except ValueError as e:
        logger.critical(f"Invalid argument: {e}")
        return EXIT_CONFIG_ERROR


if __name__ == '__main__':
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        sys.exit(EXIT_PIPELINE_FAILURE)
