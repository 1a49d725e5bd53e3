"""
Segmentation curves
Bézier curves realizing the quad mesh edges, the global objective (area uniformity,
stretch/strain shape energy, tangent angles) with analytic gradients, its L-BFGS
minimization and the control-triangle validity check.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import shapely
from shapely.geometry import MultiPoint

from config import LBFGS_MAX_ITERATIONS, LBFGS_MEMORY, LBFGS_TOLERANCE, VALIDITY_RESTARTS
from app.services.bernstein import (
    BezierCurve, area_form, curve_degree_elevate, derivative_gram, line_curve,
)
from app.services.errors import DomainError, TopologyError
from app.services.optimizer import TracePoint, minimize_lbfgs
from app.services.topology import QuadMesh

logger = logging.getLogger(__name__)

# Penalty of one tangent term when a tangent vector vanishes (the largest possible value)
ZERO_TANGENT_PENALTY = 4.0
ZERO_TANGENT_EPS = 1e-14


@dataclass(frozen=True)
class SegmentationCurve:
    """Curve along one mesh edge; boundary curves are fixed copies of boundary segments."""

    curve: BezierCurve
    start: int
    end: int
    boundary: bool = False


@dataclass(frozen=True)
class GlobalObjectiveConfig:
    sigma1: float = 2.0
    sigma2: float = 1.0
    omega1: float = 2.0
    omega2: float = 1.0
    omega3: float = 50.0
    memory: int = LBFGS_MEMORY
    tolerance: float = LBFGS_TOLERANCE
    max_iterations: int = LBFGS_MAX_ITERATIONS
    validity_restarts: int = VALIDITY_RESTARTS

    def __post_init__(self):
        for name in ('sigma1', 'sigma2', 'omega1', 'omega2', 'omega3'):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")

    @classmethod
    def from_pipeline(cls, cfg) -> "GlobalObjectiveConfig":
        return cls(cfg.sigma1, cfg.sigma2, cfg.omega1, cfg.omega2, cfg.omega3,
                   cfg.lbfgs_memory, cfg.lbfgs_tolerance, cfg.lbfgs_max_iterations, cfg.validity_restarts)


@dataclass
class PatchLayout:
    """
    Quad mesh with one segmentation curve per edge.

    `quad_curves[q][k]` is the curve along side k of quad q (corner k to corner k+1),
    traversed backwards when `quad_reversed[q][k]` is set. `stars` lists, for every
    interior vertex, its incident curves counter-clockwise with a flag telling
    whether the curve starts there.
    """

    mesh: QuadMesh
    curves: List[SegmentationCurve]
    quad_curves: List[Tuple[int, int, int, int]]
    quad_reversed: List[Tuple[bool, bool, bool, bool]]
    stars: Dict[int, List[Tuple[int, bool]]]
    shape_scale: np.ndarray = None
    trace: List[TracePoint] = field(default_factory=list)
    objective_initial: Optional[float] = None
    objective_final: Optional[float] = None

    def __post_init__(self):
        if self.shape_scale is None:
            self.shape_scale = np.ones(len(self.curves))

    @property
    def degree(self) -> int:
        return self.curves[0].curve.degree

    def control_points(self) -> np.ndarray:
        """All curves' control points, shape (curves, n+1, 2)."""
        return np.array([item.curve.control_points for item in self.curves])

    def free_mask(self) -> np.ndarray:
        """True on the control points the optimizer may move."""
        n = self.degree
        mask = np.zeros((len(self.curves), n + 1, 2), dtype=bool)
        for index, item in enumerate(self.curves):
            if not item.boundary:
                mask[index, 1:n] = True
        return mask

    def unknowns(self) -> np.ndarray:
        return self.control_points()[self.free_mask()]

    def with_control_points(self, points: np.ndarray) -> "PatchLayout":
        curves = [item if item.boundary else replace(item, curve=BezierCurve(points[index]))
                  for index, item in enumerate(self.curves)]
        return replace(self, curves=curves)

    def with_unknowns(self, x: np.ndarray) -> "PatchLayout":
        points = self.control_points()
        points[self.free_mask()] = x
        return self.with_control_points(points)

    def quad_loop(self, quad: int) -> List[BezierCurve]:
        """The four oriented curves of a quad, corner to corner counter-clockwise."""
        loop = []
        for index, flipped in zip(self.quad_curves[quad], self.quad_reversed[quad]):
            curve = self.curves[index].curve
            loop.append(curve.reversed() if flipped else curve)
        return loop

    def interior_curves(self) -> List[int]:
        return [index for index, item in enumerate(self.curves) if not item.boundary]


def init_segmentation_curves(mesh: QuadMesh, degree: Optional[int] = None) -> PatchLayout:
    """
    One curve per mesh edge: boundary edges bind their Bézier segment (a straight
    line on slit edges), interior edges get a straight curve with equally spaced
    control points.
    """
    if degree is None:
        curves_present = [curve for curve in mesh.boundary_curves.values() if curve is not None]
        if not curves_present:
            raise DomainError("degree needed: mesh has no boundary curves")
        degree = max(curve.degree for curve in curves_present)
    vertices = mesh.vertices
    curves: List[SegmentationCurve] = []
    by_edge: Dict[Tuple[int, int], int] = {}
    for (a, b), curve in sorted(mesh.boundary_curves.items()):
        if curve is None:
            curve = line_curve(vertices[a], vertices[b], degree)
        elif curve.degree < degree:
            curve = curve_degree_elevate(curve, degree)
        by_edge[(min(a, b), max(a, b))] = len(curves)
        curves.append(SegmentationCurve(curve, a, b, boundary=True))
    for a, b in mesh.edges():
        if (a, b) in by_edge:
            continue
        by_edge[(a, b)] = len(curves)
        curves.append(SegmentationCurve(line_curve(vertices[a], vertices[b], degree), a, b))

    layout = assemble_layout(mesh, curves)
    logger.info(f"Segmentation: {len(curves)} curves ({len(layout.interior_curves())} interior), "
                f"{len(layout.quad_curves)} quads, degree {degree}")
    return layout


def assemble_layout(mesh: QuadMesh, curves: List[SegmentationCurve]) -> PatchLayout:
    """Quad-to-curve incidence and counter-clockwise vertex stars for one curve per mesh edge."""
    vertices = mesh.vertices
    by_edge = {(min(item.start, item.end), max(item.start, item.end)): index
               for index, item in enumerate(curves)}
    quad_curves, quad_reversed = [], []
    for quad in mesh.quads:
        indices, flags = [], []
        for k in range(4):
            a, b = quad[k], quad[(k + 1) % 4]
            key = (min(a, b), max(a, b))
            if key not in by_edge:
                raise TopologyError(f"no curve along mesh edge {key}")
            index = by_edge[key]
            indices.append(index)
            flags.append(curves[index].start != a)
        quad_curves.append(tuple(indices))
        quad_reversed.append(tuple(flags))

    stars: Dict[int, List[Tuple[int, bool]]] = {}
    incident: Dict[int, List[Tuple[int, bool]]] = {}
    for index, item in enumerate(curves):
        incident.setdefault(item.start, []).append((index, True))
        incident.setdefault(item.end, []).append((index, False))
    for v in mesh.interior_vertices():
        def direction_angle(entry):
            index, starts = entry
            other = curves[index].end if starts else curves[index].start
            d = vertices[other] - vertices[v]
            return math.atan2(d[1], d[0])
        stars[v] = sorted(incident.get(v, []), key=direction_angle)

    return PatchLayout(mesh, list(curves), quad_curves, quad_reversed, stars)


def region_area(curves: Sequence[BezierCurve], reversed_flags: Optional[Sequence[bool]] = None) -> float:
    """
    Exact signed area enclosed by a closed loop of Bézier curves.

    Each curve contributes (X^T K Y - Y^T K X) / (4n), K from the product weights of
    degrees n and n-1 times the first difference matrix. Curves of lower degree are
    elevated to the loop's highest degree.

    Raises:
        DomainError: the loop is empty or not closed
    """
    if not curves:
        raise DomainError("empty loop")
    flags = list(reversed_flags) if reversed_flags is not None else [False] * len(curves)
    oriented = [curve.reversed() if flip else curve for curve, flip in zip(curves, flags)]
    scale = max(float(np.max(np.abs(curve.control_points))) for curve in oriented) or 1.0
    for index, curve in enumerate(oriented):
        following = oriented[(index + 1) % len(oriented)]
        if np.linalg.norm(curve.end - following.start) > 1e-9 * scale:
            raise DomainError(f"loop is open after curve {index}")
    n = max(curve.degree for curve in oriented)
    K = area_form(n)
    total = 0.0
    for curve in oriented:
        points = curve_degree_elevate(curve, n).control_points if curve.degree < n else curve.control_points
        X, Y = points[:, 0], points[:, 1]
        total += float(X @ K @ Y - Y @ K @ X)
    return total / (4.0 * n)


def _curve_areas(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Signed area contribution of every curve and its gradient, shape (C,) and (C, n+1, 2)."""
    n = points.shape[1] - 1
    antisymmetric = area_form(n) - area_form(n).T
    X, Y = points[..., 0], points[..., 1]
    areas = np.einsum('ci,ij,cj->c', X, antisymmetric, Y) / (4.0 * n)
    gradient = np.empty_like(points)
    gradient[..., 0] = Y @ antisymmetric.T / (4.0 * n)
    gradient[..., 1] = -(X @ antisymmetric.T) / (4.0 * n)
    return areas, gradient


def quad_areas(layout: PatchLayout, points: Optional[np.ndarray] = None) -> np.ndarray:
    points = layout.control_points() if points is None else points
    areas, _ = _curve_areas(points)
    signs = np.where(np.array(layout.quad_reversed), -1.0, 1.0)
    return np.sum(areas[np.array(layout.quad_curves)] * signs, axis=1)


def _uniform_term(layout: PatchLayout, points: np.ndarray) -> Tuple[float, np.ndarray]:
    areas, area_gradient = _curve_areas(points)
    indices = np.array(layout.quad_curves)
    signs = np.where(np.array(layout.quad_reversed), -1.0, 1.0)
    quad_values = np.sum(areas[indices] * signs, axis=1)
    count = len(quad_values)
    deviation = quad_values - quad_values.sum() / count
    value = float(np.sum(deviation ** 2) / count)
    weights = np.zeros(len(points))
    np.add.at(weights, indices.ravel(), (2.0 / count * deviation[:, None] * signs).ravel())
    return value, weights[:, None, None] * area_gradient


def f_uniform(layout: PatchLayout) -> float:
    """Variance of the quad areas: (1/L) sum (A_i - A/L)^2."""
    return _uniform_term(layout, layout.control_points())[0]


def _shape_matrices(n: int, sigma1: float, sigma2: float) -> np.ndarray:
    return sigma1 * derivative_gram(n, 1) + sigma2 * derivative_gram(n, 2)


def _shape_term(layout: PatchLayout, points: np.ndarray, sigma1: float,
                sigma2: float) -> Tuple[float, np.ndarray]:
    n = points.shape[1] - 1
    energy = _shape_matrices(n, sigma1, sigma2)
    scale = np.where([item.boundary for item in layout.curves], 0.0, layout.shape_scale)
    per_curve = np.einsum('cid,ij,cjd->c', points, energy, points)
    value = float(np.sum(scale * per_curve))
    gradient = 2.0 * scale[:, None, None] * np.einsum('ij,cjd->cid', energy, points)
    return value, gradient


def f_shape(curves: Sequence, sigma1: float, sigma2: float) -> float:
    """
    sum over curves of the integral of sigma1 |S'|^2 + sigma2 |S''|^2, evaluated exactly
    with Bernstein Gram matrices.
    """
    total = 0.0
    for item in curves:
        curve = item.curve if isinstance(item, SegmentationCurve) else item
        energy = _shape_matrices(curve.degree, sigma1, sigma2)
        P = curve.control_points
        total += float(np.einsum('id,ij,jd->', P, energy, P))
    return total


def _tangent(points: np.ndarray, index: int, starts: bool) -> Tuple[np.ndarray, int]:
    n = points.shape[1] - 1
    if starts:
        return n * (points[index, 1] - points[index, 0]), 1
    return n * (points[index, n - 1] - points[index, n]), n - 1


def _tangent_term(layout: PatchLayout, points: np.ndarray) -> Tuple[float, np.ndarray, int]:
    n = points.shape[1] - 1
    value = 0.0
    gradient = np.zeros_like(points)
    zero_tangents = 0
    for v, star in layout.stars.items():
        rho = len(star)
        if rho < 2:
            continue
        target = math.cos(2.0 * math.pi / rho)
        tangents = [_tangent(points, index, starts) for index, starts in star]
        for i in range(rho):
            a, a_slot = tangents[i]
            b, b_slot = tangents[(i + 1) % rho]
            norm_a = float(np.linalg.norm(a))
            norm_b = float(np.linalg.norm(b))
            if norm_a < ZERO_TANGENT_EPS or norm_b < ZERO_TANGENT_EPS:
                value += ZERO_TANGENT_PENALTY
                zero_tangents += 1
                continue
            cosine = float(np.dot(a, b)) / (norm_a * norm_b)
            difference = cosine - target
            value += difference ** 2
            d_cos_a = b / (norm_a * norm_b) - cosine * a / norm_a ** 2
            d_cos_b = a / (norm_a * norm_b) - cosine * b / norm_b ** 2
            gradient[star[i][0], a_slot] += 2.0 * difference * n * d_cos_a
            gradient[star[(i + 1) % rho][0], b_slot] += 2.0 * difference * n * d_cos_b
    return value, gradient, zero_tangents


def f_tangent(layout: PatchLayout) -> float:
    """sum over interior vertices of sum_i (cos angle(T_i, T_i+1) - cos(2pi/rho))^2."""
    value, _, zero_tangents = _tangent_term(layout, layout.control_points())
    if zero_tangents:
        logger.warning(f"{zero_tangents} tangent term(s) with a zero tangent vector, penalized with "
                       f"{ZERO_TANGENT_PENALTY}")
    return value


def objective(layout: PatchLayout, cfg: GlobalObjectiveConfig,
              points: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """F = omega1 F_uniform + omega2 F_shape + omega3 F_tangent and its gradient over all control points."""
    points = layout.control_points() if points is None else points
    uniform, g_uniform = _uniform_term(layout, points)
    shape, g_shape = _shape_term(layout, points, cfg.sigma1, cfg.sigma2)
    tangent, g_tangent, _ = _tangent_term(layout, points)
    value = cfg.omega1 * uniform + cfg.omega2 * shape + cfg.omega3 * tangent
    gradient = cfg.omega1 * g_uniform + cfg.omega2 * g_shape + cfg.omega3 * g_tangent
    return value, gradient


def _control_hulls(points: np.ndarray) -> List[list]:
    """Convex hull of every consecutive control-point triangle, per curve."""
    hulls = []
    for curve in points:
        hulls.append([MultiPoint(curve[i - 1:i + 2]).convex_hull for i in range(1, len(curve) - 1)])
    return hulls


def _neighbour_curves(layout: PatchLayout) -> Dict[int, set]:
    by_vertex: Dict[int, set] = {}
    for index, item in enumerate(layout.curves):
        by_vertex.setdefault(item.start, set()).add(index)
        by_vertex.setdefault(item.end, set()).add(index)
    by_quad: Dict[int, set] = {}
    for quad in layout.quad_curves:
        for index in quad:
            by_quad.setdefault(index, set()).update(quad)
    result = {}
    for index in layout.interior_curves():
        item = layout.curves[index]
        related = by_vertex[item.start] | by_vertex[item.end] | by_quad.get(index, set())
        related.discard(index)
        result[index] = related
    return result


def check_layout_validity(layout: PatchLayout) -> List[Tuple[int, int]]:
    """
    Curve pairs whose control-point triangles intersect anywhere except at a shared
    endpoint; an empty list means the curves cannot cross.
    """
    points = layout.control_points()
    hulls = _control_hulls(points)
    scale = float(np.max(np.abs(points))) or 1.0
    tolerance = 1e-10 * scale
    violations = set()
    for index, related in _neighbour_curves(layout).items():
        own_ends = (points[index, 0], points[index, -1])
        for other in sorted(related):
            pair = (min(index, other), max(index, other))
            if pair in violations:
                continue
            shared = [end for end in own_ends
                      if min(np.linalg.norm(end - points[other, 0]), np.linalg.norm(end - points[other, -1])) <= tolerance]
            if _hulls_conflict(hulls[index], hulls[other], shared, tolerance):
                violations.add(pair)
    return sorted(violations)


def _hulls_conflict(first: list, second: list, shared: List[np.ndarray], tolerance: float) -> bool:
    hits = shapely.intersects(np.array(first, dtype=object)[:, None], np.array(second, dtype=object)[None, :])
    for i, j in zip(*np.nonzero(hits)):
        meeting = shapely.intersection(first[i], second[j])
        if meeting.geom_type != 'Point':
            return True
        point = np.array(meeting.coords[0])
        if not any(np.linalg.norm(point - end) <= tolerance for end in shared):
            return True
    return False


def enforce_corner_compatibility(layout: PatchLayout) -> PatchLayout:
    """
    At every interior valence-4 vertex shift the first inner control points a, b, c, d
    of the incident curves (cyclic order) so that a + c = b + d.
    """
    points = layout.control_points()
    adjusted = 0
    for v, star in layout.stars.items():
        if len(star) != 4:
            continue
        slots = [(index, _tangent(points, index, starts)[1]) for index, starts in star]
        a, b, c, d = (points[index, slot] for index, slot in slots)
        delta = a + c - b - d
        if not np.any(delta):
            continue
        for (index, slot), sign in zip(slots, (-1.0, 1.0, -1.0, 1.0)):
            points[index, slot] += sign * delta / 4.0
        adjusted += 1
    if adjusted:
        logger.info(f"Corner compatibility adjusted {adjusted} regular vertex(es)")
    return layout.with_control_points(points)


def optimize_segmentation(layout: PatchLayout, cfg: GlobalObjectiveConfig) -> PatchLayout:
    """
    Minimize F over the inner control points of the interior curves.

    Endpoints and boundary curves never move. When the optimized curves fail the
    control-triangle check, the run restarts with the shape weight doubled on the
    offending curves, up to `validity_restarts` times. The returned layout never has
    a larger F than the initial one.
    """
    mask = layout.free_mask()
    base_points = layout.control_points()
    initial_value, _ = objective(layout, cfg, base_points)
    scale = np.ones(len(layout.curves))
    trace: List[TracePoint] = []
    candidate = layout
    result = None

    for attempt in range(cfg.validity_restarts + 1):
        working = replace(layout, shape_scale=scale.copy())

        def evaluate(x: np.ndarray) -> Tuple[float, np.ndarray]:
            points = base_points.copy()
            points[mask] = x
            value, gradient = objective(working, cfg, points)
            return value, gradient[mask]

        result = minimize_lbfgs(evaluate, base_points[mask], cfg.memory, cfg.tolerance,
                                cfg.max_iterations, label="segmentation")
        trace = result.trace
        candidate = layout.with_unknowns(result.x)
        violations = check_layout_validity(candidate)
        if not violations:
            break
        offending = {index for pair in violations for index in pair if not layout.curves[index].boundary}
        logger.warning(f"Segmentation attempt {attempt + 1}: {len(violations)} intersecting curve pair(s); "
                       f"doubling shape weight on {len(offending)} curve(s)")
        for index in offending:
            scale[index] *= 2.0
    else:
        logger.warning("Segmentation curves still violate the control-triangle check after all restarts")

    _, _, zero_tangents = _tangent_term(candidate, candidate.control_points())
    if zero_tangents:
        logger.warning(f"{zero_tangents} zero tangent term(s) in the optimized layout")

    final_value, _ = objective(candidate, cfg)
    if final_value > initial_value:
        logger.warning(f"Optimized objective {final_value:.6g} exceeds the initial {initial_value:.6g}; "
                       "keeping the initial curves")
        candidate, final_value = layout, initial_value

    compatible = enforce_corner_compatibility(candidate)
    compatible_value, _ = objective(compatible, cfg)
    if compatible_value <= initial_value:
        candidate, final_value = compatible, compatible_value
    else:
        logger.warning("Corner compatibility skipped: it would raise the objective above its initial value")

    logger.info(f"Segmentation objective {initial_value:.6g} -> {final_value:.6g} "
                f"in {result.iterations if result else 0} iteration(s)")
    return replace(candidate, trace=trace, objective_initial=initial_value, objective_final=final_value,
                   shape_scale=np.ones(len(layout.curves)))


def validate_layout(layout: PatchLayout):
    """Raise TopologyError unless every quad's curves close corner to corner."""
    mesh = layout.mesh
    for quad_index, quad in enumerate(mesh.quads):
        loop = layout.quad_loop(quad_index)
        for k in range(4):
            corner = mesh.vertices[quad[k]]
            if not (np.array_equal(loop[k].start, corner) and np.array_equal(loop[k - 1].end, corner)):
                raise TopologyError(f"quad {quad_index} curves do not meet at corner {k}")
