"""
Handlers package for the parameterization CLI
"""

from .pipeline import router as pipeline_router
from .render import router as render_router
from .stages import router as stages_router

__all__ = ['pipeline_router', 'stages_router', 'render_router']
