"""
Discrete topology of the domain
Polygonal boundary built from Bézier endpoints, hole bridging into a single slit loop,
the quad mesh container and its Laplacian smoothing.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse
import shapely
from shapely.geometry import LinearRing, LineString, Polygon

from config import DOMAIN_SAMPLES, SMOOTHING_MAX_ITERATIONS
from app.services.bernstein import BezierCurve
from app.services.errors import BoundaryError, DomainError, TopologyError
from app.services.splines import SegmentChain

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]

# Step fractions tried for a vertex whose full smoothing move damages a quad
GUARD_STEP_FACTORS = np.array([1.0, 0.5, 0.25, 0.0])


@dataclass
class DiscreteBoundary:
    """
    Polygon per loop through the Bézier segment endpoints.

    `loops` hold vertex ids in traversal order (outer CCW first, holes CW).
    `edge_sources` maps every directed polygon edge to (chain, segment) of its
    source curve; bridge edges map to None. After bridging there is one loop
    and `twins` maps each slit copy to the vertex it duplicates.
    """

    points: np.ndarray
    loops: List[List[int]]
    chains: List[SegmentChain]
    edge_sources: Dict[Edge, Optional[Tuple[int, int]]]
    twins: Dict[int, int] = field(default_factory=dict)
    bridges: List[List[int]] = field(default_factory=list)

    @property
    def is_bridged(self) -> bool:
        return len(self.loops) == 1

    def edge_curve(self, edge: Edge) -> Optional[BezierCurve]:
        """Source Bézier segment of a directed polygon edge (None on bridges)."""
        source = self.edge_sources[edge]
        if source is None:
            return None
        chain, segment = source
        return self.chains[chain].segments[segment]

    def loop_edges(self, loop: int) -> List[Edge]:
        ids = self.loops[loop]
        return [(ids[k], ids[(k + 1) % len(ids)]) for k in range(len(ids))]

    def loop_coordinates(self, loop: int) -> np.ndarray:
        return self.points[self.loops[loop]]

    def edge_length(self, edge: Edge) -> float:
        return float(np.linalg.norm(self.points[edge[1]] - self.points[edge[0]]))


def _ensure_three_segments(chain: SegmentChain) -> SegmentChain:
    """Loops described by one or two segments are split so their polygon has an area."""
    while len(chain) < 3:
        longest = max(range(len(chain)), key=lambda k: chain.segments[k].chord_length())
        chain = chain.split_segment(longest, 2)
    return chain


def _offending_pair(coords: np.ndarray) -> Tuple[int, int]:
    count = len(coords)
    segments = [LineString([coords[k], coords[(k + 1) % count]]) for k in range(count)]
    for a in range(count):
        for b in range(a + 2, count):
            if a == 0 and b == count - 1:
                continue
            if segments[a].intersects(segments[b]):
                return a, b
    return -1, -1


def build_discrete_boundary(chains: List[SegmentChain]) -> DiscreteBoundary:
    """
    Connect the endpoints of every chain's segments into polygons.

    Raises:
        BoundaryError: a polygon intersects itself (edge pair reported) or a hole is
            not strictly inside the outer loop or overlaps another hole
    """
    if not chains:
        raise DomainError("no chains to discretize")
    chains = [_ensure_three_segments(chain) for chain in chains]
    points = []
    loops = []
    sources: Dict[Edge, Optional[Tuple[int, int]]] = {}
    for chain_index, chain in enumerate(chains):
        first = len(points)
        ids = list(range(first, first + len(chain)))
        points.extend(segment.start for segment in chain.segments)
        for k in range(len(ids)):
            sources[(ids[k], ids[(k + 1) % len(ids)])] = (chain_index, k)
        loops.append(ids)

    boundary = DiscreteBoundary(np.array(points, dtype=float), loops, chains, sources)
    polygons = []
    for loop_index in range(len(loops)):
        coords = boundary.loop_coordinates(loop_index)
        if not LinearRing(coords).is_simple:
            pair = _offending_pair(coords)
            raise BoundaryError("discrete boundary intersects itself", loop=loop_index, edges=pair)
        polygons.append(Polygon(coords))

    outer = polygons[0]
    for hole_index, hole in enumerate(polygons[1:], start=1):
        if not outer.contains(hole):
            raise BoundaryError("hole is not strictly inside the outer loop", loop=hole_index)
        for other_index in range(1, hole_index):
            if hole.intersects(polygons[other_index]):
                raise BoundaryError(f"hole overlaps hole {other_index}", loop=hole_index)
    logger.info(f"Discrete boundary: {len(loops)} loop(s), {len(points)} vertices")
    return boundary


def bridge_vertex_count(outer: np.ndarray, hole: np.ndarray, distance: float) -> int:
    """
    Number of vertices inserted along a bridge of length `distance`.

    nu = ceil((n1 + n2) * distance / (sum of the first n1-1 outer edges
    + sum of the first n2-1 hole edges)).
    """
    n1, n2 = len(outer), len(hole)
    outer_sum = float(np.sum(np.linalg.norm(np.diff(outer, axis=0), axis=1)))
    hole_sum = float(np.sum(np.linalg.norm(np.diff(hole, axis=0), axis=1)))
    return max(1, math.ceil((n1 + n2) * distance / (outer_sum + hole_sum)))


def _touches_only_at(segment: LineString, edge: LineString, point: np.ndarray) -> bool:
    meeting = segment.intersection(edge)
    if meeting.is_empty:
        return True
    return meeting.geom_type == 'Point' and math.dist(meeting.coords[0], point) <= 1e-12 * max(1.0, segment.length)


def _bridge_is_clear(coords: np.ndarray, outer_ids: List[int], hole_ids: List[int],
                     domain: Polygon, v: int, u: int, earlier_bridges: List[LineString]) -> bool:
    segment = LineString([coords[v], coords[u]])
    if segment.length == 0.0 or not domain.covers(segment):
        return False
    for ids in (outer_ids, hole_ids):
        count = len(ids)
        for k in range(count):
            a, b = ids[k], ids[(k + 1) % count]
            if v in (a, b) or u in (a, b):
                continue
            if segment.intersects(LineString([coords[a], coords[b]])):
                return False
    return all(_touches_only_at(segment, edge, coords[v]) for edge in earlier_bridges)


def bridge_holes(b: DiscreteBoundary) -> DiscreteBoundary:
    """
    Splice every hole into the outer loop through a doubly traversed bridge.

    Holes are processed nearest-first. For each hole the closest pair (v_i, u_j)
    whose straight connection stays inside the domain and crosses no edge is
    chosen; nu equally spaced bridge vertices are inserted and the sequence
    v_i, z_0..z_nu-1, u_j, hole, u_j', z_nu-1'..z_0', v_i', v_i+1, ... replaces
    the outer loop. Primed vertices are new ids at the same coordinates.

    Raises:
        TopologyError: no admissible bridge exists for some hole
    """
    if len(b.loops) == 1:
        return b

    points = [np.array(p) for p in b.points]
    sources = dict(b.edge_sources)
    twins = dict(b.twins)
    bridges = [list(bridge) for bridge in b.bridges]
    outer = list(b.loops[0])
    holes = {index: list(ids) for index, ids in enumerate(b.loops[1:], start=1)}
    domain = Polygon(b.points[b.loops[0]], [b.points[ids] for ids in b.loops[1:]])
    bridge_edges: List[LineString] = []

    def new_vertex(position, original: Optional[int] = None) -> int:
        points.append(np.array(position, dtype=float))
        index = len(points) - 1
        if original is not None:
            twins[index] = twins.get(original, original)
        return index

    while holes:
        coords = np.array(points)
        outer_coords = coords[outer]
        best_hole, best_distance = None, math.inf
        for hole_index, ids in holes.items():
            distances = np.linalg.norm(outer_coords[:, None, :] - coords[ids][None, :, :], axis=2)
            if distances.min() < best_distance:
                best_hole, best_distance = hole_index, float(distances.min())
        hole = holes.pop(best_hole)
        distances = np.linalg.norm(outer_coords[:, None, :] - coords[hole][None, :, :], axis=2)
        order = np.argsort(distances, axis=None, kind='stable')

        chosen = None
        for flat in order:
            i, j = np.unravel_index(flat, distances.shape)
            if _bridge_is_clear(coords, outer, hole, domain, outer[i], hole[j], bridge_edges):
                chosen = (int(i), int(j))
                break
        if chosen is None:
            raise TopologyError(f"no admissible bridge for hole {best_hole}")

        i, j = chosen
        v, u = outer[i], hole[j]
        length = float(distances[i, j])
        nu = bridge_vertex_count(outer_coords, coords[hole], length)
        logger.info(f"Bridging hole {best_hole}: length {length:.6g}, {nu} bridge vertices")

        start, end = coords[v], coords[u]
        forward = [new_vertex(start + (k + 1) / (nu + 1) * (end - start)) for k in range(nu)]
        backward = [new_vertex(points[z], z) for z in reversed(forward)]
        u_copy = new_vertex(coords[u], u)
        v_copy = new_vertex(coords[v], v)

        rotated_hole = hole[j:] + hole[:j]
        # the hole's closing edge now ends at the copy of u
        hole_tail = rotated_hole[-1]
        sources[(hole_tail, u_copy)] = sources.pop((hole_tail, u))
        following = outer[(i + 1) % len(outer)]
        sources[(v_copy, following)] = sources.pop((v, following))

        splice = [v] + forward + rotated_hole + [u_copy] + backward + [v_copy]
        for a, c in zip(splice[:-1], splice[1:]):
            if (a, c) not in sources:
                sources[(a, c)] = None
        outer = outer[:i] + splice + outer[i + 1:]
        bridges.append([v] + forward + [u])
        bridge_edges.append(LineString([start, end]))

    result = DiscreteBoundary(np.array(points), [outer], b.chains, sources, twins, bridges)
    _check_slit_polygon(result)
    return result


def _check_slit_polygon(b: DiscreteBoundary):
    """No two edges of the bridged loop cross; touching along the slit is allowed."""
    coords = b.loop_coordinates(0)
    count = len(coords)
    lines = shapely.linestrings([[coords[k], coords[(k + 1) % count]] for k in range(count)])
    tree = shapely.STRtree(lines)
    left, right = tree.query(lines, predicate='crosses')
    if left.size:
        raise TopologyError(f"bridged boundary is not simple: edges {int(left[0])} and {int(right[0])} cross")


@dataclass
class QuadMesh:
    """
    All-quad mesh of the domain.

    Quads list vertex ids counter-clockwise. `boundary_curves` holds every
    boundary edge in the direction that keeps the domain on its left, mapped
    to its Bézier segment (None for slit edges).
    """

    vertices: np.ndarray
    quads: List[Tuple[int, int, int, int]]
    boundary_curves: Dict[Edge, Optional[BezierCurve]]
    chains: List[SegmentChain] = field(default_factory=list)
    fallback_pieces: int = 0
    smoothing_history: List[float] = field(default_factory=list)

    def edge_quads(self) -> Dict[Edge, List[int]]:
        """Undirected edge (low id first) to the quads that use it."""
        result: Dict[Edge, List[int]] = {}
        for index, quad in enumerate(self.quads):
            for k in range(4):
                a, b = quad[k], quad[(k + 1) % 4]
                result.setdefault((min(a, b), max(a, b)), []).append(index)
        return result

    def edges(self) -> List[Edge]:
        return sorted(self.edge_quads())

    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.vertices), dtype=bool)
        for a, b in self.boundary_curves:
            mask[a] = True
            mask[b] = True
        return mask

    def neighbors(self) -> List[List[int]]:
        result = [set() for _ in range(len(self.vertices))]
        for a, b in self.edges():
            result[a].add(b)
            result[b].add(a)
        return [sorted(items) for items in result]

    def valences(self) -> np.ndarray:
        return np.array([len(items) for items in self.neighbors()], dtype=int)

    def interior_vertices(self) -> List[int]:
        mask = self.boundary_vertex_mask()
        return [v for v in range(len(self.vertices)) if not mask[v]]

    def irregular_vertices(self) -> List[int]:
        valence = self.valences()
        return [v for v in self.interior_vertices() if valence[v] != 4]

    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges()) + len(self.quads)

    def corner_areas(self) -> np.ndarray:
        """Shoelace area of every quad's four corners."""
        corners = self.vertices[np.array(self.quads, dtype=int)]
        x, y = corners[..., 0], corners[..., 1]
        return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)

    def inverted_quads(self) -> List[int]:
        return [int(k) for k in np.flatnonzero(self.corner_areas() <= 0.0)]

    def outside_vertices(self) -> List[int]:
        """Interior vertices not strictly inside the domain bounded by the boundary curves."""
        domain = domain_polygon(self.chains)
        interior = np.array(self.interior_vertices(), dtype=int)
        if domain is None or interior.size == 0:
            return []
        points = self.vertices[interior]
        return [int(v) for v in interior[~shapely.contains_xy(domain, points[:, 0], points[:, 1])]]

    def audit(self) -> dict:
        """Element count, irregular vertex count and valence histogram of interior vertices."""
        valence = self.valences()
        histogram: Dict[str, int] = {}
        for v in self.interior_vertices():
            key = str(int(valence[v]))
            histogram[key] = histogram.get(key, 0) + 1
        return {
            'elements': len(self.quads),
            'irregular_vertices': len(self.irregular_vertices()),
            'valence_histogram': dict(sorted(histogram.items(), key=lambda item: int(item[0]))),
        }

    def validate(self):
        """
        Raise TopologyError unless every face has 4 distinct vertices, no edge is
        shared by more than two quads and the one-quad edges are exactly the
        boundary edges.
        """
        for index, quad in enumerate(self.quads):
            if len(set(quad)) != 4:
                raise TopologyError(f"quad {index} has repeated vertices {quad}")
        single = set()
        for edge, owners in self.edge_quads().items():
            if len(owners) > 2:
                raise TopologyError(f"edge {edge} is shared by {len(owners)} quads")
            if len(owners) == 1:
                single.add(edge)
        expected = {(min(a, b), max(a, b)) for a, b in self.boundary_curves}
        if single != expected:
            missing = sorted(expected - single)[:3]
            extra = sorted(single - expected)[:3]
            raise TopologyError(f"boundary edges do not conform (missing {missing}, unexpected {extra})")

    def to_obj(self) -> str:
        lines = [f"# {len(self.vertices)} vertices, {len(self.quads)} quads"]
        lines += [f"v {x:.12g} {y:.12g} 0" for x, y in self.vertices]
        lines += ["f " + " ".join(str(v + 1) for v in quad) for quad in self.quads]
        return "\n".join(lines) + "\n"


def averaging_operator(m: QuadMesh) -> scipy.sparse.csr_matrix:
    """Sparse matrix mapping positions to neighbour centroids on interior rows, identity on boundary rows."""
    count = len(m.vertices)
    mask = m.boundary_vertex_mask()
    rows, cols, values = [], [], []
    for v, items in enumerate(m.neighbors()):
        if mask[v] or not items:
            rows.append(v)
            cols.append(v)
            values.append(1.0)
            continue
        weight = 1.0 / len(items)
        rows.extend([v] * len(items))
        cols.extend(items)
        values.extend([weight] * len(items))
    return scipy.sparse.csr_matrix((values, (rows, cols)), shape=(count, count))


def domain_polygon(chains: List[SegmentChain], samples: int = DOMAIN_SAMPLES) -> Optional[Polygon]:
    """Polygon with holes through `samples` points per boundary segment, or None without chains."""
    if not chains:
        return None
    t = np.linspace(0.0, 1.0, samples, endpoint=False)
    rings = [np.vstack([segment.evaluate(t) for segment in chain.segments]) for chain in chains]
    shell = [ring for chain, ring in zip(chains, rings) if not chain.is_hole]
    holes = [ring for chain, ring in zip(chains, rings) if chain.is_hole]
    polygon = Polygon(shell[0], holes)
    if not polygon.is_valid:
        logger.warning("Sampled domain polygon is not valid; smoothing runs without a containment guard")
        return None
    shapely.prepare(polygon)
    return polygon


def corner_turns(vertices: np.ndarray, quads: np.ndarray) -> np.ndarray:
    """Smallest cross product of consecutive edges over the corners of each quad (> 0 for a strictly convex quad)."""
    corners = vertices[quads]
    incoming = corners - np.roll(corners, 1, axis=1)
    outgoing = np.roll(corners, -1, axis=1) - corners
    cross = incoming[..., 0] * outgoing[..., 1] - incoming[..., 1] * outgoing[..., 0]
    return cross.min(axis=1)


def _covered_edges(domain: Optional[Polygon], vertices: np.ndarray, quads: np.ndarray) -> Optional[np.ndarray]:
    if domain is None:
        return None
    corners = vertices[quads]
    segments = np.stack([corners, np.roll(corners, -1, axis=1)], axis=2).reshape(-1, 2, 2)
    return shapely.covers(domain, shapely.linestrings(segments)).reshape(len(quads), 4)


def _failing_quads(vertices: np.ndarray, previous: np.ndarray, quads: np.ndarray,
                   domain: Optional[Polygon]) -> np.ndarray:
    """
    Quads that a move made worse: a corner turn dropping to zero or below (and below
    its previous value), or an edge that was inside the domain and now leaves it.
    """
    before = corner_turns(previous, quads)
    after = corner_turns(vertices, quads)
    failing = (after <= 0.0) & (after < before)
    covered_before = _covered_edges(domain, previous, quads)
    if covered_before is not None:
        covered_after = _covered_edges(domain, vertices, quads)
        failing |= np.any(covered_before & ~covered_after, axis=1)
    return failing


def _guarded_step(positions: np.ndarray, proposed: np.ndarray, interior: np.ndarray,
                  quads: np.ndarray, domain: Optional[Polygon]) -> Tuple[np.ndarray, int]:
    """
    Move interior vertices toward `proposed`, halving the step of every vertex of a
    quad the move damages until no quad is damaged. Returns the positions and the
    number of vertices that did not take the full step.
    """
    levels = np.zeros(len(positions), dtype=int)
    moving = np.zeros(len(positions), dtype=bool)
    moving[interior] = True
    while True:
        factors = np.where(moving, GUARD_STEP_FACTORS[np.minimum(levels, len(GUARD_STEP_FACTORS) - 1)], 0.0)
        candidate = positions + factors[:, None] * (proposed - positions)
        failing = _failing_quads(candidate, positions, quads, domain)
        if not failing.any():
            return candidate, int(np.count_nonzero(moving & (levels > 0)))
        culprits = np.unique(quads[failing])
        culprits = culprits[moving[culprits] & (levels[culprits] < len(GUARD_STEP_FACTORS) - 1)]
        if culprits.size == 0:
            # every damaged quad has only frozen corners; keep the previous positions
            return positions.copy(), int(np.count_nonzero(moving))
        levels[culprits] += 1


def laplacian_smooth(m: QuadMesh, delta: float,
                     max_iterations: int = SMOOTHING_MAX_ITERATIONS) -> QuadMesh:
    """
    Jacobi iteration moving every interior vertex to the centroid of its neighbours.

    A move that folds an incident quad or pushes a quad edge out of the domain is
    shortened, down to no move at all, so smoothing never inverts a quad that was
    valid before. Stops when sqrt(sum |x_k - x_(k-1)|^2) / sqrt(sum |x_(k-1)|^2) over
    interior vertices drops below delta. Boundary vertices are never written.
    """
    if not 0.0 < delta < 1.0:
        raise DomainError(f"smoothing tolerance {delta} outside (0, 1)")
    interior = np.array(m.interior_vertices(), dtype=int)
    if interior.size == 0:
        return replace(m, smoothing_history=[])
    operator = averaging_operator(m)[interior]
    quads = np.array(m.quads, dtype=int)
    domain = domain_polygon(m.chains)
    positions = np.array(m.vertices, dtype=float)
    history: List[float] = []
    for iteration in range(max_iterations):
        proposed = positions.copy()
        proposed[interior] = operator @ positions
        updated, held = _guarded_step(positions, proposed, interior, quads, domain)
        previous = positions[interior]
        denominator = float(np.linalg.norm(previous))
        numerator = float(np.linalg.norm(updated[interior] - previous))
        ratio = numerator / denominator if denominator > 0 else (0.0 if numerator == 0 else math.inf)
        positions = updated
        history.append(ratio)
        logger.debug(f"Smoothing iteration {iteration + 1}: ratio {ratio:.3e}, {held} vertex move(s) shortened")
        if ratio < delta:
            break
    else:
        logger.warning(f"Laplacian smoothing stopped at the iteration cap ({max_iterations}), "
                       f"ratio {history[-1]:.3e}")
    smoothed = replace(m, vertices=positions, smoothing_history=history)
    inverted = smoothed.inverted_quads()
    if inverted:
        logger.warning(f"{len(inverted)} quad(s) inverted after smoothing: {inverted[:10]}")
    logger.info(f"Smoothing finished after {len(history)} iteration(s)")
    return smoothed
