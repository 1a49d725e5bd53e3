"""
B-spline boundary ingestion
Bézier extraction by knot insertion, the hull-based subdivision criterion and the
global degree policy that turn every boundary loop into a closed chain of Bézier segments.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from config import MIN_PATCH_DEGREE
from app.services.bernstein import (
    BezierCurve, curve_degree_elevate, curve_split, curve_split_uniform, green_coefficients,
)
from app.services.errors import BoundaryError, DomainError

logger = logging.getLogger(__name__)

# Relative closure tolerance of a loop (fraction of its bounding-box diagonal)
CLOSURE_TOLERANCE = 1e-9
# Split recursion guard far above any bound the depth formula gives in practice
MAX_SPLIT_DEPTH = 30


@dataclass(frozen=True)
class BSplineCurve:
    """Clamped B-spline curve: degree p, knots U, control points Q."""

    degree: int
    knots: np.ndarray
    control_points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "knots", np.array(self.knots, dtype=float))
        object.__setattr__(self, "control_points", np.array(self.control_points, dtype=float))

    def validate(self, piece: Optional[int] = None, loop: Optional[int] = None):
        """Raise BoundaryError unless the knot vector is non-decreasing, clamped and consistent."""
        p = self.degree
        U = self.knots
        Q = self.control_points
        if p < 1:
            raise BoundaryError("degree must be at least 1", loop=loop, piece=piece)
        if Q.ndim != 2 or Q.shape[1] != 2:
            raise BoundaryError(f"control points must be 2D, got shape {Q.shape}", loop=loop, piece=piece)
        if U.size != Q.shape[0] + p + 1:
            raise BoundaryError(f"#knots {U.size} != #control points {Q.shape[0]} + p + 1",
                                loop=loop, piece=piece)
        if np.any(np.diff(U) < 0):
            raise BoundaryError("knot vector is decreasing", loop=loop, piece=piece)
        if not (np.all(U[:p + 1] == U[0]) and np.all(U[-p - 1:] == U[-1])):
            raise BoundaryError("knot vector is not clamped (end multiplicity p+1 required)",
                                loop=loop, piece=piece)
        if U[-1] <= U[0]:
            raise BoundaryError("knot vector has zero length", loop=loop, piece=piece)
        for value in np.unique(U[p + 1:-p - 1]):
            if np.count_nonzero(U == value) > p:
                raise BoundaryError(f"interior knot {value} has multiplicity above {p}",
                                    loop=loop, piece=piece)
        if not np.all(np.isfinite(Q)):
            raise BoundaryError("non-finite control point", loop=loop, piece=piece)

    @property
    def start(self) -> np.ndarray:
        return self.control_points[0]

    @property
    def end(self) -> np.ndarray:
        return self.control_points[-1]

    def find_span(self, u: float) -> int:
        """Index k with U[k] <= u < U[k+1]; the last non-empty span for u = U[-1]."""
        p = self.degree
        U = self.knots
        n = self.control_points.shape[0] - 1
        if u >= U[n + 1]:
            return n
        return int(np.searchsorted(U, u, side='right') - 1)

    def evaluate(self, u: float) -> np.ndarray:
        """de Boor evaluation at parameter u."""
        p = self.degree
        U = self.knots
        k = self.find_span(u)
        d = np.array(self.control_points[k - p:k + 1])
        for r in range(1, p + 1):
            for j in range(p, r - 1, -1):
                i = j + k - p
                denominator = U[i + p - r + 1] - U[i]
                alpha = 0.0 if denominator == 0 else (u - U[i]) / denominator
                d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j]
        return d[p]

    def reversed(self) -> "BSplineCurve":
        """Same curve traversed backwards."""
        U = self.knots
        return BSplineCurve(self.degree, (U[0] + U[-1]) - U[::-1], self.control_points[::-1].copy())


def insert_knot(curve: BSplineCurve, u: float) -> BSplineCurve:
    """Boehm insertion of one knot value u (U[p] < u < U[-p-1])."""
    p = curve.degree
    U = curve.knots
    P = curve.control_points
    k = curve.find_span(u)
    Q = np.empty((P.shape[0] + 1, 2))
    Q[:k - p + 1] = P[:k - p + 1]
    for i in range(k - p + 1, k + 1):
        alpha = (u - U[i]) / (U[i + p] - U[i])
        Q[i] = (1.0 - alpha) * P[i - 1] + alpha * P[i]
    Q[k + 1:] = P[k:]
    return BSplineCurve(p, np.insert(U, k + 1, u), Q)


@dataclass(frozen=True)
class SegmentSource:
    """Provenance of a Bézier segment: source piece index and parameter span."""

    piece: int
    span: Tuple[float, float]


def bezier_extract(c: BSplineCurve) -> List[BezierCurve]:
    """
    Convert a clamped B-spline into one Bézier segment per non-empty knot span.

    Every interior knot is raised to multiplicity p, after which consecutive groups
    of p+1 control points are the Bézier control polygons.
    """
    return [segment for segment, _ in _extract_with_spans(c)]


def _extract_with_spans(c: BSplineCurve) -> List[Tuple[BezierCurve, Tuple[float, float]]]:
    c.validate()
    p = c.degree
    curve = c
    interior = c.knots[p + 1:-p - 1]
    for value in np.unique(interior):
        multiplicity = int(np.count_nonzero(curve.knots == value))
        for _ in range(p - multiplicity):
            curve = insert_knot(curve, float(value))
    breaks = np.unique(curve.knots)
    segments = []
    for index in range(breaks.size - 1):
        points = curve.control_points[index * p:index * p + p + 1]
        segments.append((BezierCurve(points), (float(breaks[index]), float(breaks[index + 1]))))
    return segments


def chord_deviation(c: BezierCurve) -> float:
    """
    Hull bound on the distance between a curve and the line through its endpoints.

    Falls back to the largest control-point distance from the start point when the
    chord has zero length.
    """
    if c.degree < 1:
        raise DomainError("chord deviation needs degree >= 1")
    points = c.control_points
    chord = points[-1] - points[0]
    length = float(np.linalg.norm(chord))
    offsets = points - points[0]
    if length == 0.0:
        return float(np.max(np.linalg.norm(offsets, axis=1)))
    cross = np.abs(offsets[:, 0] * chord[1] - offsets[:, 1] * chord[0])
    return float(np.max(cross) / length)


def second_difference_bound(c: BezierCurve) -> float:
    """eta: the largest absolute x or y component over all second differences."""
    if c.degree < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(c.control_points, n=2, axis=0))))


def subdivision_depth(c: BezierCurve, L_ave: float) -> int:
    """
    Number of midpoint subdivisions needed before every piece lies within L_ave of its chord.

    Gamma = max(0, ceil(log4(sqrt(3) n (n-1) eta / (8 L_ave)))).
    """
    if L_ave <= 0:
        raise DomainError("L_ave must be positive")
    n = c.degree
    eta = second_difference_bound(c)
    if eta == 0.0 or n < 2:
        return 0
    ratio = math.sqrt(3.0) * n * (n - 1) * eta / (8.0 * L_ave)
    if ratio <= 1.0:
        return 0
    return max(0, math.ceil(math.log(ratio, 4) - 1e-12))


def average_chord_length(segments: List[BezierCurve]) -> float:
    """L_ave: mean distance between the first and last control point of the segments."""
    if not segments:
        raise DomainError("no segments to average")
    return float(np.mean([segment.chord_length() for segment in segments]))


@dataclass
class BoundaryLoop:
    """Closed loop of B-spline pieces; outer loops run counter-clockwise, holes clockwise."""

    pieces: List[BSplineCurve]
    is_hole: bool = False

    def bounding_diagonal(self) -> float:
        points = np.vstack([piece.control_points for piece in self.pieces])
        return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))

    def validate(self, loop: Optional[int] = None):
        if not self.pieces:
            raise BoundaryError("loop has no pieces", loop=loop)
        for index, piece in enumerate(self.pieces):
            piece.validate(piece=index, loop=loop)
        tolerance = CLOSURE_TOLERANCE * max(self.bounding_diagonal(), 1e-300)
        count = len(self.pieces)
        for index, piece in enumerate(self.pieces):
            following = self.pieces[(index + 1) % count]
            gap = float(np.linalg.norm(piece.end - following.start))
            if gap > tolerance:
                raise BoundaryError(f"loop is open: gap {gap:.3e} after piece", loop=loop, piece=index)

    def signed_area(self) -> float:
        """Exact signed area enclosed by the extracted Bézier segments."""
        total = 0.0
        for piece in self.pieces:
            for segment in bezier_extract(piece):
                c, d = green_coefficients(segment.control_points)
                total += float(np.sum(c) - np.sum(d)) / (4.0 * segment.degree)
        return total

    def normalized(self) -> "BoundaryLoop":
        """Loop with counter-clockwise orientation for outer loops and clockwise for holes."""
        area = self.signed_area()
        wants_positive = not self.is_hole
        if (area > 0) == wants_positive:
            return self
        logger.info(f"Reversing {'hole' if self.is_hole else 'outer'} loop orientation")
        return BoundaryLoop([piece.reversed() for piece in reversed(self.pieces)], self.is_hole)


@dataclass
class SegmentChain:
    """Closed chain of Bézier segments of one common degree, with provenance."""

    segments: List[BezierCurve]
    sources: List[SegmentSource] = field(default_factory=list)
    is_hole: bool = False

    @property
    def degree(self) -> int:
        return self.segments[0].degree

    def __len__(self) -> int:
        return len(self.segments)

    def split_segment(self, index: int, pieces: int) -> "SegmentChain":
        """Chain with segment `index` replaced by `pieces` equal-parameter sub-segments."""
        if pieces == 1:
            return self
        parts = curve_split_uniform(self.segments[index], pieces)
        source = self.sources[index]
        a, b = source.span
        part_sources = [SegmentSource(source.piece, (a + (b - a) * k / pieces, a + (b - a) * (k + 1) / pieces))
                        for k in range(pieces)]
        return SegmentChain(self.segments[:index] + parts + self.segments[index + 1:],
                            self.sources[:index] + part_sources + self.sources[index + 1:],
                            self.is_hole)


def _split_until_flat(segment: BezierCurve, span: Tuple[float, float], L_ave: float,
                     depth: int = 0) -> List[Tuple[BezierCurve, Tuple[float, float]]]:
    if chord_deviation(segment) <= L_ave or depth >= MAX_SPLIT_DEPTH:
        if depth >= MAX_SPLIT_DEPTH:
            logger.warning(f"Split recursion stopped at depth {depth}")
        return [(segment, span)]
    left, right = curve_split(segment, 0.5)
    middle = 0.5 * (span[0] + span[1])
    return (_split_until_flat(left, (span[0], middle), L_ave, depth + 1)
            + _split_until_flat(right, (middle, span[1]), L_ave, depth + 1))


def _span_parts(span: Tuple[float, float], count: int) -> List[Tuple[float, float]]:
    a, b = span
    return [(a + (b - a) * k / count, a + (b - a) * (k + 1) / count) for k in range(count)]


def preprocess_boundary(loops: List[BoundaryLoop], cfg) -> List[SegmentChain]:
    """
    Turn boundary loops into closed Bézier chains of one common degree.

    Args:
        loops: validated loops, outer loop first
        cfg: PipelineConfig (degree policy and boundary refinement)

    Returns:
        One SegmentChain per loop
    """
    extracted = []
    for loop_index, loop in enumerate(loops):
        loop.validate(loop=loop_index)
        area = loop.signed_area()
        if abs(area) <= 1e-12 * loop.bounding_diagonal() ** 2:
            raise BoundaryError("degenerate loop with zero area", loop=loop_index)
        loop = loop.normalized()
        parts = []
        for piece_index, piece in enumerate(loop.pieces):
            for segment, span in _extract_with_spans(piece):
                parts.append((segment, SegmentSource(piece_index, span)))
        extracted.append((loop, parts))

    all_segments = [segment for _, parts in extracted for segment, _ in parts]
    L_ave = average_chord_length(all_segments)
    logger.info(f"Extracted {len(all_segments)} Bézier segments, L_ave = {L_ave:.6g}")

    input_degree = max(segment.degree for segment in all_segments)
    degree = max(MIN_PATCH_DEGREE, input_degree, cfg.degree or 0)
    refinement = 2 ** cfg.boundary_refinement

    chains = []
    for loop, parts in extracted:
        segments: List[BezierCurve] = []
        sources: List[SegmentSource] = []
        for segment, source in parts:
            pieces = _split_until_flat(segment, source.span, L_ave)
            if len(pieces) > 1:
                logger.debug(f"Segment of piece {source.piece} split into {len(pieces)} parts")
            for piece, span in pieces:
                refined = curve_split_uniform(piece, refinement) if refinement > 1 else [piece]
                for sub, sub_span in zip(refined, _span_parts(span, len(refined))):
                    segments.append(curve_degree_elevate(sub, degree))
                    sources.append(SegmentSource(source.piece, sub_span))
        _close_chain(segments)
        chains.append(SegmentChain(segments, sources, loop.is_hole))
        logger.info(f"{'Hole' if loop.is_hole else 'Outer'} chain: {len(segments)} segments of degree {degree}")
    return chains


def _close_chain(segments: List[BezierCurve]):
    """Snap every segment start onto the previous segment end so endpoints are shared exactly."""
    count = len(segments)
    for index in range(count):
        previous = segments[index - 1]
        current = segments[index]
        if not np.array_equal(previous.end, current.start):
            points = np.array(current.control_points)
            points[0] = previous.end
            segments[index] = BezierCurve(points)
