"""
Approximate convex decomposition and template quadrangulation
Splits the bridged boundary polygon into quasi-convex pieces by straight cuts and
fills every piece with a grid (4 corners) or a midpoint fan (3 or 5 corners).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
import shapely
from shapely.geometry import LineString, MultiPoint, Polygon

from app.services.bernstein import curve_split_uniform
from app.services.errors import TopologyError
from app.services.topology import DiscreteBoundary, Edge, QuadMesh

logger = logging.getLogger(__name__)

# Interior angles below this make a vertex a piece corner
SHARP_ANGLE = math.radians(150.0)
MAX_TEMPLATE_CORNERS = 5
# Angular margin keeping cuts off the polygon edges
CONE_MARGIN = 1e-7
# Per-edge subdivision cap; pieces needing more go to the fallback
MAX_EDGE_COUNT = 64
MAX_BALANCING_ROUNDS = 400


@dataclass
class QuasiConvexPiece:
    """Sub-polygon of the bridged boundary, vertex ids listed counter-clockwise."""

    vertices: List[int]
    concavity: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def max_concavity(self) -> float:
        return float(self.concavity.max()) if self.concavity.size else 0.0


def _angle_ccw(a: np.ndarray, b: np.ndarray) -> float:
    """Counter-clockwise angle in [0, 2pi) turning direction a into direction b."""
    return math.atan2(a[0] * b[1] - a[1] * b[0], a[0] * b[0] + a[1] * b[1]) % (2.0 * math.pi)


def interior_angles(coords: np.ndarray) -> np.ndarray:
    """Interior angle at every vertex of a counter-clockwise polygon."""
    to_next = np.roll(coords, -1, axis=0) - coords
    to_prev = np.roll(coords, 1, axis=0) - coords
    cross = to_next[:, 0] * to_prev[:, 1] - to_next[:, 1] * to_prev[:, 0]
    dot = np.sum(to_next * to_prev, axis=1)
    return np.mod(np.arctan2(cross, dot), 2.0 * math.pi)


def concavity(coords: np.ndarray) -> np.ndarray:
    """Distance of every vertex to the convex hull boundary over the hull's bounding-box diagonal."""
    hull = MultiPoint([tuple(p) for p in coords]).convex_hull
    if hull.geom_type != 'Polygon':
        return np.zeros(len(coords))
    minx, miny, maxx, maxy = hull.bounds
    diagonal = math.hypot(maxx - minx, maxy - miny)
    return shapely.distance(hull.exterior, shapely.points(coords)) / diagonal


def _reflex(angles: np.ndarray) -> np.ndarray:
    return angles > math.pi + 1e-9


class _PolygonView:
    """Geometry queries on one piece: cones, visibility and cut scores."""

    def __init__(self, coords: np.ndarray):
        self.coords = coords
        self.count = len(coords)
        self.angles = interior_angles(coords)
        self.edges = shapely.linestrings(np.stack([coords, np.roll(coords, -1, axis=0)], axis=1))
        minx, miny = coords.min(axis=0)
        maxx, maxy = coords.max(axis=0)
        self.diagonal = math.hypot(maxx - minx, maxy - miny)

    def in_cone(self, k: int, direction: np.ndarray) -> bool:
        here = self.coords[k]
        to_next = self.coords[(k + 1) % self.count] - here
        theta = _angle_ccw(to_next, direction)
        return CONE_MARGIN < theta < self.angles[k] - CONE_MARGIN

    def sees(self, k: int, m: int) -> bool:
        """True if the open segment k-m lies inside the polygon."""
        n = self.count
        if (m - k) % n in (0, 1, n - 1):
            return False
        start, end = self.coords[k], self.coords[m]
        direction = end - start
        length = math.hypot(*direction)
        if length <= 1e-12 * self.diagonal:
            return False
        if not (self.in_cone(k, direction) and self.in_cone(m, -direction)):
            return False
        diagonal = LineString([start, end])
        incident = {k, (k - 1) % n, m, (m - 1) % n}
        tolerance = 1e-10 * self.diagonal
        for e in np.flatnonzero(shapely.intersects(self.edges, diagonal)):
            if int(e) in incident:
                continue
            meeting = shapely.intersection(self.edges[e], diagonal)
            if meeting.geom_type != 'Point':
                return False
            point = np.array(meeting.coords[0])
            if min(np.linalg.norm(point - start), np.linalg.norm(point - end)) > tolerance:
                return False
        return True

    def split_angles(self, k: int, direction: np.ndarray) -> Tuple[float, float]:
        to_next = self.coords[(k + 1) % self.count] - self.coords[k]
        theta = _angle_ccw(to_next, direction)
        return theta, self.angles[k] - theta

    def cut_score(self, k: int, m: int, reflex: np.ndarray) -> float:
        """Lower is better: deviation from continuing an edge through k, length and sliver angles."""
        n = self.count
        here = self.coords[k]
        direction = self.coords[m] - here
        incoming = here - self.coords[k - 1]
        outgoing = here - self.coords[(k + 1) % n]
        deviation = min(_unsigned_angle(direction, incoming), _unsigned_angle(direction, outgoing))
        smallest = min(*self.split_angles(k, direction), *self.split_angles(m, -direction))
        score = deviation + 0.5 * math.hypot(*direction) / self.diagonal
        score += 2.0 * max(0.0, math.radians(30.0) - smallest)
        if reflex[m]:
            score -= 0.25
        return score


def _unsigned_angle(a: np.ndarray, b: np.ndarray) -> float:
    return math.acos(max(-1.0, min(1.0, float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))))))


def _split(loop: List[int], k: int, m: int) -> Tuple[List[int], List[int]]:
    if k > m:
        k, m = m, k
    return loop[k:m + 1], loop[m:] + loop[:k + 1]


def _twin_pairs(loop: List[int], twins: Dict[int, int]) -> List[Tuple[int, int]]:
    """Positions of vertices in the loop that share a root vertex (both sides of a slit)."""
    seen: Dict[int, int] = {}
    pairs = []
    for position, vertex in enumerate(loop):
        root = twins.get(vertex, vertex)
        if root in seen:
            pairs.append((seen[root], position))
        else:
            seen[root] = position
    return pairs


def _separates(k: int, m: int, pairs: List[Tuple[int, int]]) -> bool:
    low, high = min(k, m), max(k, m)
    return any((low < a < high) != (low < b < high) for a, b in pairs)


def _best_cut_from(view: _PolygonView, k: int, reflex: np.ndarray,
                   pairs: Optional[List[Tuple[int, int]]] = None) -> Optional[Tuple[float, int]]:
    best = None
    for m in range(view.count):
        if pairs and not _separates(k, m, pairs):
            continue
        if not view.sees(k, m):
            continue
        score = view.cut_score(k, m, reflex)
        if best is None or score < best[0]:
            best = (score, m)
    return best


def _concavity_cut(view: _PolygonView, conc: np.ndarray, reflex: np.ndarray,
                   pairs: Optional[List[Tuple[int, int]]] = None) -> Optional[Tuple[int, int]]:
    """Straightest visible cut at the worst reflex vertex that has one."""
    candidates = sorted(np.flatnonzero(reflex), key=lambda k: (-conc[k], k))
    for k in candidates:
        best = _best_cut_from(view, int(k), reflex, pairs)
        if best is not None:
            return int(k), best[1]
    return None


def _corner_cut(view: _PolygonView, sharp: np.ndarray) -> Optional[Tuple[int, int]]:
    """Visible cut that splits the sharp corners most evenly."""
    n = view.count
    best = None
    for k in range(n):
        for m in range(k + 2, n):
            if not view.sees(k, m):
                continue
            inside = int(np.count_nonzero(sharp[k + 1:m]))
            outside = int(np.count_nonzero(sharp)) - inside - int(sharp[k]) - int(sharp[m])
            balance = min(inside, outside)
            score = -balance + 0.5 * np.linalg.norm(view.coords[m] - view.coords[k]) / view.diagonal
            if best is None or score < best[0]:
                best = (score, k, m)
    return None if best is None else (best[1], best[2])


def _any_separating_cut(view: _PolygonView, pairs: List[Tuple[int, int]],
                        reflex: np.ndarray) -> Optional[Tuple[int, int]]:
    best = None
    for k in range(view.count):
        found = _best_cut_from(view, k, reflex, pairs)
        if found is not None and (best is None or found[0] < best[0]):
            best = (found[0], k, found[1])
    return None if best is None else (best[1], best[2])


def approx_convex_decompose(b: DiscreteBoundary, epsilon: float) -> List[QuasiConvexPiece]:
    """
    Cut the simply connected boundary polygon into pieces of concavity at most epsilon.

    Each step takes the reflex vertex of largest concavity and cuts it with the
    straightest visible diagonal. Pieces that still hold both sides of a slit, or
    more than five sharp corners, are cut further regardless of epsilon.

    Args:
        b: bridged discrete boundary (a single loop)
        epsilon: concavity tolerance in (0, 1]

    Returns:
        Pieces tiling the polygon, in creation order
    """
    if not b.is_bridged:
        raise TopologyError("decomposition needs a simply connected boundary; bridge holes first")
    pending = [list(b.loops[0])]
    pieces: List[QuasiConvexPiece] = []
    while pending:
        loop = pending.pop()
        coords = b.points[loop]
        conc = concavity(coords)
        if len(loop) <= 3:
            pieces.append(QuasiConvexPiece(loop, conc))
            continue
        view = _PolygonView(coords)
        reflex = _reflex(view.angles)
        sharp = view.angles < SHARP_ANGLE
        pairs = _twin_pairs(loop, b.twins)

        cut = None
        if pairs:
            cut = _concavity_cut(view, conc, reflex, pairs) or _any_separating_cut(view, pairs, reflex)
            if cut is None:
                logger.warning(f"Piece with {len(loop)} vertices keeps a slit: no separating cut found")
        elif conc.max() > epsilon and reflex.any():
            cut = _concavity_cut(view, conc, reflex)
        if cut is None and np.count_nonzero(sharp) > MAX_TEMPLATE_CORNERS:
            cut = _corner_cut(view, sharp)

        if cut is None:
            pieces.append(QuasiConvexPiece(loop, conc))
            continue
        k, m = cut
        logger.debug(f"Cut {loop[k]} -> {loop[m]} (concavity {conc.max():.3f})")
        first, second = _split(loop, k, m)
        pending.extend([second, first])

    over = [index for index, piece in enumerate(pieces) if piece.max_concavity > epsilon]
    if over:
        logger.warning(f"{len(over)} piece(s) stay above the concavity tolerance: {over}")
    logger.info(f"Approximate convex decomposition: {len(pieces)} piece(s) for epsilon = {epsilon}")
    return pieces


def _key(a: int, c: int) -> Edge:
    return (a, c) if a < c else (c, a)


@dataclass
class _PieceTemplate:
    loop: List[int]
    corners: List[int]
    fallback: bool = False

    def edges(self) -> List[Tuple[int, int]]:
        n = len(self.loop)
        return [(self.loop[k], self.loop[(k + 1) % n]) for k in range(n)]

    def sides(self) -> List[List[Edge]]:
        """Edge keys of every side, corner i to corner i+1."""
        n = len(self.loop)
        result = []
        for index, start in enumerate(self.corners):
            stop = self.corners[(index + 1) % len(self.corners)]
            span = (stop - start) % n or n
            result.append([_key(self.loop[(start + s) % n], self.loop[(start + s + 1) % n]) for s in range(span)])
        return result


def choose_corners(coords: np.ndarray) -> List[int]:
    """
    Template corners of a piece: the sharp vertices when there are 3 to 5 of them,
    the 4 sharpest when there are more, otherwise sharp vertices padded to 4 by
    splitting the longest corner-to-corner arc at its middle.
    """
    n = len(coords)
    angles = interior_angles(coords)
    sharp = [k for k in range(n) if angles[k] < SHARP_ANGLE]
    if 3 <= len(sharp) <= MAX_TEMPLATE_CORNERS:
        return sharp
    if len(sharp) > MAX_TEMPLATE_CORNERS:
        return sorted(sorted(sharp, key=lambda k: (angles[k], k))[:4])
    if n <= 4:
        return list(range(n))

    lengths = np.linalg.norm(np.roll(coords, -1, axis=0) - coords, axis=1)
    arc = np.concatenate([[0.0], np.cumsum(lengths)])
    total = arc[-1]
    corners = list(sharp) or [int(np.argmin(angles))]
    while len(corners) < 4:
        corners.sort()
        best = None
        for index, start in enumerate(corners):
            stop = corners[(index + 1) % len(corners)]
            span = (arc[stop] - arc[start]) % total or total
            inner = [(start + s) % n for s in range(1, (stop - start) % n or n)]
            inner = [k for k in inner if angles[k] < math.pi - 1e-9] or inner
            if not inner:
                continue
            if best is None or span > best[0]:
                middle = (arc[start] + span / 2.0) % total
                pick = min(inner, key=lambda k: (min(abs(arc[k] - middle), total - abs(arc[k] - middle)), k))
                best = (span, pick)
        if best is None:
            break
        corners.append(best[1])
    return sorted(corners)


class _Balancer:
    """Raise-only assignment of edge subdivision counts satisfying every template."""

    def __init__(self, templates: List[_PieceTemplate], lengths: Dict[Edge, float],
                 boundary: Set[Edge], counts: Dict[Edge, int]):
        self.templates = templates
        self.lengths = lengths
        self.boundary = boundary
        self.counts = counts
        self.locked: Set[Edge] = set()

    def side_sum(self, side: List[Edge]) -> int:
        return sum(self.counts[key] for key in side)

    def raise_side(self, side: List[Edge], target: int) -> bool:
        """Raise counts on one side until its sum reaches target; False if the cap is hit."""
        while self.side_sum(side) < target:
            free = [key for key in side if key not in self.locked] or side
            key = max(free, key=lambda e: (self.lengths[e] / self.counts[e], -e[0], -e[1]))
            step = 2 if key in self.locked else 1
            if self.counts[key] + step > MAX_EDGE_COUNT:
                return False
            self.counts[key] += step
        return True

    def raise_longest_boundary(self, edges: List[Edge]) -> bool:
        candidates = [key for key in edges if key in self.boundary and key not in self.locked]
        candidates = candidates or [key for key in edges if key not in self.locked] or edges
        key = max(candidates, key=lambda e: (self.lengths[e] / self.counts[e], -e[0], -e[1]))
        step = 2 if key in self.locked else 1
        if self.counts[key] + step > MAX_EDGE_COUNT:
            return False
        self.counts[key] += step
        return True

    def spokes(self, sums: List[int]) -> List[float]:
        total = sum(sums)
        k = len(sums)
        if k == 3:
            return [total / 2.0 - sums[i] for i in range(3)]
        return [sums[(i - 1) % 5] + sums[i] + sums[(i + 1) % 5] - total / 2.0 for i in range(5)]

    def satisfied(self, template: _PieceTemplate) -> bool:
        if template.fallback:
            return all(self.counts[_key(a, c)] % 2 == 0 for a, c in template.edges())
        sums = [self.side_sum(side) for side in template.sides()]
        if len(sums) == 4:
            return sums[0] == sums[2] and sums[1] == sums[3]
        return sum(sums) % 2 == 0 and min(self.spokes(sums)) >= 1

    def step(self, template: _PieceTemplate) -> bool:
        """One repair of a violated template; True if counts changed."""
        if template.fallback:
            changed = False
            for a, c in template.edges():
                key = _key(a, c)
                if self.counts[key] % 2:
                    self.counts[key] += 1
                    changed = True
            return changed
        sides = template.sides()
        sums = [self.side_sum(side) for side in sides]
        ok = True
        if len(sums) == 4:
            for i, j in ((0, 2), (1, 3)):
                if sums[i] < sums[j]:
                    ok = self.raise_side(sides[i], sums[j])
                    return self._check(template, ok)
                if sums[j] < sums[i]:
                    ok = self.raise_side(sides[j], sums[i])
                    return self._check(template, ok)
            return False
        if sum(sums) % 2:
            ok = self.raise_longest_boundary([key for side in sides for key in side])
            return self._check(template, ok)
        spokes = self.spokes(sums)
        worst = int(np.argmin(spokes))
        if spokes[worst] >= 1:
            return False
        k = len(sums)
        for neighbour in ((worst - 1) % k, (worst + 1) % k):
            ok = ok and self.raise_side(sides[neighbour], sums[neighbour] + 1)
        return self._check(template, ok)

    def _check(self, template: _PieceTemplate, ok: bool) -> bool:
        if not ok:
            logger.warning(f"Template balancing hit the edge cap; piece of {len(template.loop)} "
                           f"vertices falls back to triangle splitting")
            self.make_fallback(template)
        return True

    def make_fallback(self, template: _PieceTemplate):
        template.fallback = True
        for a, c in template.edges():
            self.locked.add(_key(a, c))

    def run(self):
        for _ in range(len(self.templates) + 1):
            for _ in range(MAX_BALANCING_ROUNDS):
                changed = False
                for template in self.templates:
                    changed = self.step(template) or changed
                if not changed:
                    break
            unsatisfied = [t for t in self.templates if not self.satisfied(t)]
            if not unsatisfied:
                return
            for template in unsatisfied:
                if not template.fallback:
                    self.make_fallback(template)
        raise TopologyError("edge subdivision counts could not be balanced")


def _fill_grid(points: List[np.ndarray], bottom: List[int], right: List[int],
               top: List[int], left: List[int]) -> List[Tuple[int, int, int, int]]:
    """
    Structured grid inside four sides given corner to corner counter-clockwise;
    interior vertices by transfinite interpolation.
    """
    a = len(bottom) - 1
    b = len(right) - 1
    if len(top) - 1 != a or len(left) - 1 != b:
        raise TopologyError(f"grid sides do not match: {a}/{len(top) - 1} and {b}/{len(left) - 1}")
    grid = [[-1] * (b + 1) for _ in range(a + 1)]
    for i in range(a + 1):
        grid[i][0] = bottom[i]
        grid[i][b] = top[a - i]
    for j in range(b + 1):
        grid[a][j] = right[j]
        grid[0][j] = left[b - j]
    p00, p10, p11, p01 = (points[grid[0][0]], points[grid[a][0]], points[grid[a][b]], points[grid[0][b]])
    for i in range(1, a):
        u = i / a
        for j in range(1, b):
            v = j / b
            position = ((1 - v) * points[grid[i][0]] + v * points[grid[i][b]]
                        + (1 - u) * points[grid[0][j]] + u * points[grid[a][j]]
                        - ((1 - u) * (1 - v) * p00 + u * (1 - v) * p10 + u * v * p11 + (1 - u) * v * p01))
            points.append(position)
            grid[i][j] = len(points) - 1
    return [(grid[i][j], grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1])
            for j in range(b) for i in range(a)]


def _segment_ids(points: List[np.ndarray], start: int, end: int, count: int) -> List[int]:
    ids = [start]
    for k in range(1, count):
        t = k / count
        points.append((1 - t) * points[start] + t * points[end])
        ids.append(len(points) - 1)
    ids.append(end)
    return ids


def _fan_center(points: List[np.ndarray], loop: List[int], corners: List[int]) -> np.ndarray:
    coords = np.array([points[v] for v in loop])
    polygon = Polygon(coords)
    if polygon.is_valid:
        center = polygon.centroid
        if polygon.contains(center):
            return np.array(center.coords[0])
    return np.mean([points[loop[c]] for c in corners], axis=0)


def _fill_fan(points: List[np.ndarray], side_ids: List[List[int]], spokes: List[int],
              center_position: np.ndarray) -> List[Tuple[int, int, int, int]]:
    """Midpoint fan: corner regions around one center, spoke i ends on side i."""
    k = len(side_ids)
    points.append(center_position)
    center = len(points) - 1
    mids = [side_ids[i][spokes[(i - 1) % k]] for i in range(k)]
    spoke_ids = [_segment_ids(points, center, mids[i], spokes[i]) for i in range(k)]
    quads = []
    for i in range(k):
        previous = (i - 1) % k
        bottom = side_ids[i][:spokes[previous] + 1]
        right = spoke_ids[i][::-1]
        top = spoke_ids[previous]
        left = side_ids[previous][spokes[(previous - 1) % k]:]
        quads.extend(_fill_grid(points, bottom, right, top, left))
    return quads


def _ear_clip(coords: np.ndarray) -> List[Tuple[int, int, int]]:
    """Ear clipping of a counter-clockwise polygon; the ear with the best smallest angle goes first."""
    remaining = list(range(len(coords)))
    triangles = []
    scale = float(np.max(np.ptp(coords, axis=0))) or 1.0
    while len(remaining) > 3:
        best = None
        count = len(remaining)
        for index in range(count):
            i, j, k = remaining[index - 1], remaining[index], remaining[(index + 1) % count]
            p, q, r = coords[i], coords[j], coords[k]
            cross = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
            if cross <= 1e-14 * scale * scale:
                continue
            if any(_strictly_inside(coords[v], p, q, r) for v in remaining if v not in (i, j, k)):
                continue
            quality = min(_unsigned_angle(q - p, r - p), _unsigned_angle(p - q, r - q), _unsigned_angle(p - r, q - r))
            if best is None or quality > best[0]:
                best = (quality, index)
        if best is None:
            logger.warning("Ear clipping found no proper ear; clipping the most convex vertex")
            best = (0.0, max(range(count), key=lambda idx: _turn(coords, remaining, idx)))
        index = best[1]
        triangles.append((remaining[index - 1], remaining[index], remaining[(index + 1) % count]))
        remaining.pop(index)
    triangles.append(tuple(remaining))
    return triangles


def _turn(coords, remaining, index) -> float:
    count = len(remaining)
    p, q, r = coords[remaining[index - 1]], coords[remaining[index]], coords[remaining[(index + 1) % count]]
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _strictly_inside(point, p, q, r) -> bool:
    def side(a, b):
        return (b[0] - a[0]) * (point[1] - a[1]) - (b[1] - a[1]) * (point[0] - a[0])
    tolerance = 1e-12 * max(1.0, float(np.max(np.abs([p, q, r]))))
    return side(p, q) > tolerance and side(q, r) > tolerance and side(r, p) > tolerance


def _fill_fallback(points: List[np.ndarray], fine_loop: List[int]) -> List[Tuple[int, int, int, int]]:
    """Triangulate the coarse polygon and split every triangle into three quads at its midpoints."""
    coarse = fine_loop[::2]
    count = len(coarse)
    coords = np.array([points[v] for v in coarse])
    diagonal_mids: Dict[Tuple[int, int], int] = {}

    def midpoint(i: int, j: int) -> int:
        if (j - i) % count == 1:
            return fine_loop[2 * i + 1]
        if (i - j) % count == 1:
            return fine_loop[2 * j + 1]
        key = (min(i, j), max(i, j))
        if key not in diagonal_mids:
            points.append(0.5 * (points[coarse[i]] + points[coarse[j]]))
            diagonal_mids[key] = len(points) - 1
        return diagonal_mids[key]

    quads = []
    for i, j, k in _ear_clip(coords):
        points.append((points[coarse[i]] + points[coarse[j]] + points[coarse[k]]) / 3.0)
        center = len(points) - 1
        ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
        quads.append((coarse[i], ij, center, ki))
        quads.append((coarse[j], jk, center, ij))
        quads.append((coarse[k], ki, center, jk))
    return quads


def quadrangulate(pieces: List[QuasiConvexPiece], b: DiscreteBoundary) -> QuadMesh:
    """
    All-quad mesh conforming to the discrete boundary.

    Edge subdivision counts start at one per boundary edge and at length / h for
    cuts, then are raised until every template is satisfied: opposite sides equal
    for grids, even total with positive spokes for fans. Raised boundary edges
    split their Bézier segment at uniform parameters; the split propagates to the
    chains. Pieces whose template cannot be satisfied are triangulated and split
    into three quads per triangle.
    """
    if not pieces:
        raise TopologyError("no pieces to quadrangulate")
    boundary_keys = {_key(a, c): (a, c) for (a, c) in b.edge_sources}
    templates = [_PieceTemplate(list(piece.vertices), choose_corners(b.points[piece.vertices]))
                 for piece in pieces]

    lengths: Dict[Edge, float] = {}
    for template in templates:
        for a, c in template.edges():
            lengths[_key(a, c)] = b.edge_length((a, c))
    boundary_lengths = [lengths[key] for key in boundary_keys if key in lengths]
    h = float(np.mean(boundary_lengths)) if boundary_lengths else 1.0
    counts = {key: 1 if key in boundary_keys else max(1, int(round(length / h)))
              for key, length in lengths.items()}

    balancer = _Balancer(templates, lengths, set(boundary_keys), counts)
    for template in templates:
        if len(template.corners) not in (3, 4, 5):
            balancer.make_fallback(template)
    balancer.run()

    points: List[np.ndarray] = [np.array(p) for p in b.points]
    sub_ids: Dict[Edge, List[int]] = {}
    boundary_curves = {}
    split_counts: Dict[Tuple[int, int], int] = {}
    for key, count in counts.items():
        if key in boundary_keys:
            a, c = boundary_keys[key]
            curve = b.edge_curve((a, c))
            if curve is None:
                ids = _segment_ids(points, a, c, count)
                parts = [None] * count
            else:
                parts = curve_split_uniform(curve, count)
                ids = [a]
                for part in parts[1:]:
                    points.append(np.array(part.start))
                    ids.append(len(points) - 1)
                ids.append(c)
                if count > 1:
                    split_counts[b.edge_sources[(a, c)]] = count
            for index, part in enumerate(parts):
                boundary_curves[(ids[index], ids[index + 1])] = part
        else:
            a, c = key
            ids = _segment_ids(points, a, c, count)
        sub_ids[key] = ids

    def directed(a: int, c: int) -> List[int]:
        ids = sub_ids[_key(a, c)]
        return ids if ids[0] == a else ids[::-1]

    quads = []
    fallback_pieces = 0
    for template in templates:
        n = len(template.loop)
        fine = []
        positions = {}
        for k in range(n):
            positions[k] = len(fine)
            fine.extend(directed(template.loop[k], template.loop[(k + 1) % n])[:-1])
        if template.fallback:
            fallback_pieces += 1
            quads.extend(_fill_fallback(points, fine))
            continue
        corner_positions = [positions[c] for c in template.corners]
        sides = []
        for index, start in enumerate(corner_positions):
            stop = corner_positions[(index + 1) % len(corner_positions)]
            span = (stop - start) % len(fine) or len(fine)
            sides.append([fine[(start + s) % len(fine)] for s in range(span + 1)])
        if len(sides) == 4:
            quads.extend(_fill_grid(points, *sides))
        else:
            sums = [len(side) - 1 for side in sides]
            spokes = [int(round(s)) for s in balancer.spokes(sums)]
            center = _fan_center(points, template.loop, template.corners)
            quads.extend(_fill_fan(points, sides, spokes, center))

    chains = list(b.chains)
    for (chain_index, segment_index), count in sorted(split_counts.items(), reverse=True):
        chains[chain_index] = chains[chain_index].split_segment(segment_index, count)

    mesh = QuadMesh(np.array(points), quads, boundary_curves, chains, fallback_pieces)
    mesh.validate()
    if fallback_pieces:
        logger.warning(f"Fallback quadrangulation used for {fallback_pieces} piece(s); valences unrestricted")
    audit = mesh.audit()
    logger.info(f"Quad mesh: {audit['elements']} quads, {audit['irregular_vertices']} irregular vertices, "
                f"valences {audit['valence_histogram']}")
    return mesh
