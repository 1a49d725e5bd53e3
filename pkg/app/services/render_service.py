"""
Render Service
SVG figures of a layout (partition, iso-parametric curves, scaled-Jacobian colormap),
the same colormap as PNG, the quad mesh as OBJ and the optimizer trace as CSV
"""

import csv
import logging
import re
from typing import Iterable, List, Sequence, Set, Tuple

import numpy as np
from PIL import Image, ImageDraw

from config import DEFAULT_GRID, DEFAULT_ISO_COUNT
from app.models.documents import LayoutDocument
from app.services.bernstein import BezierCurve, bernstein_basis
from app.services.errors import DocumentError
from app.services.optimizer import TracePoint
from app.services.patchfit import BezierPatch
from app.services.quality import scaled_jacobian_field
from app.services.topology import QuadMesh

logger = logging.getLogger(__name__)

RENDER_MODES = ('partition', 'isocurves', 'jacobian_colormap')
CURVE_SAMPLES = 32
COLOR_BUCKETS = 32

PREAMBLE = """\
<?xml version="1.0" standalone="no"?>
<!DOCTYPE svg PUBLIC "-//W3C//DTD SVG 1.1//EN"
"http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd">
<svg width="{width:.2f}" height="{height:.2f}" viewBox="{x:.6f} {y:.6f} {w:.6f} {h:.6f}" version="1.1"
    xmlns="http://www.w3.org/2000/svg">
<g transform="scale(1,-1)">
"""

POSTAMBLE = """\
</g>
</svg>
"""


def jacobian_color(value: float) -> Tuple[int, int, int]:
    """Fixed blue (0) to red (1) scale, quantized into COLOR_BUCKETS steps."""
    t = min(max(float(value), 0.0), 1.0)
    bucket = round(t * (COLOR_BUCKETS - 1)) / (COLOR_BUCKETS - 1)
    return int(round(255 * bucket)), 0, int(round(255 * (1.0 - bucket)))


def _hex(color: Tuple[int, int, int]) -> str:
    return '#%02x%02x%02x' % color


class SvgCanvas:
    """Collects SVG elements in model coordinates and tracks their bounding box."""

    def __init__(self, size: float = 600.0):
        self.size = size
        self.min = None
        self.max = None
        self.commands: List[str] = []

    def require(self, points: np.ndarray):
        low, high = points.min(axis=0), points.max(axis=0)
        self.min = low if self.min is None else np.minimum(self.min, low)
        self.max = high if self.max is None else np.maximum(self.max, high)

    def path(self, points: np.ndarray, color: str = '#000000', width: float = 1.0):
        self.require(points)
        d = 'M ' + ' L '.join(f'{x:.6f} {y:.6f}' for x, y in points)
        self.commands.append(f'<path d="{d}" style="fill:none;stroke:{color};stroke-width:{width}" '
                             f'vector-effect="non-scaling-stroke"/>')

    def polygon(self, points: np.ndarray, fill: str):
        self.require(points)
        coords = ' '.join(f'{x:.6f},{y:.6f}' for x, y in points)
        self.commands.append(f'<polygon points="{coords}" style="fill:{fill};stroke:{fill};stroke-width:0.5" '
                             f'vector-effect="non-scaling-stroke"/>')

    def render(self) -> str:
        low = self.min if self.min is not None else np.zeros(2)
        high = self.max if self.max is not None else np.ones(2)
        extent = np.maximum(high - low, 1e-12)
        pad = 0.05 * float(extent.max())
        w, h = extent + 2 * pad
        # the group flips y, so the view box is taken in flipped coordinates
        header = PREAMBLE.format(width=self.size * w / max(w, h), height=self.size * h / max(w, h),
                                 x=low[0] - pad, y=-high[1] - pad, w=w, h=h)
        return header + '\n'.join(self.commands) + '\n' + POSTAMBLE


def _patches(doc: LayoutDocument) -> List[BezierPatch]:
    return [BezierPatch(np.array(record.net), index) for index, record in enumerate(doc.patches)]


def _sample_curve(points: np.ndarray, samples: int = CURVE_SAMPLES) -> np.ndarray:
    return BezierCurve(points).evaluate(np.linspace(0.0, 1.0, samples))


def patch_boundary(patch: BezierPatch) -> List[np.ndarray]:
    """The four boundary rows, counter-clockwise."""
    net = patch.net
    return [net[:, 0], net[-1, :], net[::-1, -1], net[0, ::-1]]


def iso_curves(patch: BezierPatch, count: int) -> List[np.ndarray]:
    """Control points of `count` u-isolines and `count` v-isolines at interior parameters."""
    if count == 0:
        return []
    n = patch.degree
    t = np.arange(1, count + 1) / (count + 1)
    weights = bernstein_basis(n, t)
    u_lines = np.einsum('ai,ijd->ajd', weights, patch.net)
    v_lines = np.einsum('aj,ijd->aid', weights, patch.net)
    return list(u_lines) + list(v_lines)


def render_svg(doc: LayoutDocument, mode: str = 'isocurves', iso_count: int = DEFAULT_ISO_COUNT,
               grid: int = DEFAULT_GRID, size: float = 600.0) -> str:
    """
    partition: every segmentation curve. isocurves: per patch its 4 boundary curves
    and 2 * iso_count iso-parameter curves. jacobian_colormap: per-cell scaled Jacobian
    fills under the patch boundaries.
    """
    if mode not in RENDER_MODES:
        raise DocumentError(f"unknown render mode '{mode}', expected one of {RENDER_MODES}")
    canvas = SvgCanvas(size)
    if mode == 'partition':
        if not doc.curves:
            raise DocumentError("layout has no segmentation curves; run the segment stage first")
        for record in doc.curves:
            color = '#000000' if record.boundary else '#1f5fbf'
            canvas.path(_sample_curve(np.array(record.control_points)), color)
        return canvas.render()

    patches = _patches(doc)
    if not patches:
        raise DocumentError("layout has no patches; run the fit stage first")
    for patch in patches:
        if mode == 'jacobian_colormap':
            for cell, value in _colormap_cells(patch, grid):
                canvas.polygon(cell, _hex(jacobian_color(value)))
        else:
            for points in iso_curves(patch, iso_count):
                canvas.path(_sample_curve(points), '#7f7f7f', 0.5)
        for points in patch_boundary(patch):
            canvas.path(_sample_curve(points))
    logger.info(f"Rendered {mode} SVG with {len(canvas.commands)} element(s)")
    return canvas.render()


def _colormap_cells(patch: BezierPatch, grid: int) -> Iterable[Tuple[np.ndarray, float]]:
    t = np.linspace(0.0, 1.0, grid + 1)
    positions = patch.evaluate(t, t)
    values = scaled_jacobian_field(patch, grid + 1).values
    for a in range(grid):
        for b in range(grid):
            cell = np.array([positions[a, b], positions[a + 1, b], positions[a + 1, b + 1], positions[a, b + 1]])
            yield cell, float(values[a:a + 2, b:b + 2].mean())


def render_png(doc: LayoutDocument, path: str, size: int = 800, grid: int = DEFAULT_GRID) -> Image.Image:
    """Raster scaled-Jacobian colormap with patch outlines, saved to `path`."""
    patches = _patches(doc)
    if not patches:
        raise DocumentError("layout has no patches; run the fit stage first")
    everything = np.concatenate([patch.net.reshape(-1, 2) for patch in patches])
    low, high = everything.min(axis=0), everything.max(axis=0)
    scale = 0.9 * size / max(float((high - low).max()), 1e-12)
    offset = 0.5 * (size - scale * (high - low))

    def to_pixels(points: np.ndarray) -> List[Tuple[float, float]]:
        xy = (points - low) * scale + offset
        return [(float(x), float(size - y)) for x, y in xy]

    image = Image.new('RGB', (size, size), (255, 255, 255))
    draw = ImageDraw.Draw(image)
    for patch in patches:
        for cell, value in _colormap_cells(patch, grid):
            color = jacobian_color(value)
            draw.polygon(to_pixels(cell), fill=color, outline=color)
    for patch in patches:
        for points in patch_boundary(patch):
            draw.line(to_pixels(_sample_curve(points)), fill=(0, 0, 0), width=1)
    image.save(path, format='PNG')
    logger.info(f"Saved {size}x{size} colormap to {path}")
    return image


def write_obj(mesh: QuadMesh, path: str):
    """Quad mesh as Wavefront OBJ (z = 0, 1-based faces)."""
    with open(path, 'w', encoding='utf-8') as f:
        f.write(mesh.to_obj())
    logger.info(f"Saved quad mesh to {path}")


def write_trace_csv(trace: Sequence[TracePoint], path: str):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['iteration', 'value', 'gradient_norm', 'step'])
        for point in trace:
            writer.writerow([point.iteration, repr(point.value), repr(point.gradient_norm), repr(point.step)])
    logger.info(f"Saved optimizer trace ({len(trace)} row(s)) to {path}")


def count_paths(svg: str) -> int:
    return svg.count('<path ')


def fill_colors(svg: str) -> Set[str]:
    """Distinct polygon fill colors."""
    return set(re.findall(r'<polygon [^>]*style="fill:(#[0-9a-f]{6})', svg))
