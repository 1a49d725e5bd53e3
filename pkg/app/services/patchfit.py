"""
Bézier patch construction
Each quad of the layout becomes a degree-n tensor Bézier patch whose boundary rows are
the segmentation curves. The second layer is initialized near-orthogonal, then tied
across interior curves (C1 on regular curves, G1 around irregular vertices), and the
remaining interior points minimize a stretch/strain energy.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.sparse.csgraph import connected_components

from config import MIN_PATCH_DEGREE
from app.services.bernstein import (
    bernstein_basis, bernstein_gram, derivative_gram, product_weights,
)
from app.services.errors import DomainError, SolverError, TopologyError
from app.services.segmentation import PatchLayout

logger = logging.getLogger(__name__)

NetIndex = Tuple[int, int]
Variable = Tuple[int, int, int]  # (patch, i, j)

SINGULAR_DETERMINANT = 1e-10


@dataclass(frozen=True)
class BezierPatch:
    """
    Tensor Bézier patch r(u, v) = sum P[i, j] B_i^n(u) B_j^n(v).

    Corner k of the quad sits at net[0, 0], net[n, 0], net[n, n], net[0, n] for k = 0..3,
    so a counter-clockwise quad gives a positive Jacobian.
    """

    net: np.ndarray
    quad: int = -1

    def __post_init__(self):
        net = np.array(self.net, dtype=float)
        if net.ndim != 3 or net.shape[0] != net.shape[1] or net.shape[2] != 2:
            raise DomainError(f"control net must have shape (n+1, n+1, 2), got {net.shape}")
        if not np.all(np.isfinite(net)):
            raise DomainError("control net must be finite")
        net.setflags(write=False)
        object.__setattr__(self, "net", net)

    @property
    def degree(self) -> int:
        return self.net.shape[0] - 1

    def with_net(self, net: np.ndarray) -> "BezierPatch":
        return replace(self, net=net)

    def evaluate(self, u, v) -> np.ndarray:
        """Points on the tensor grid u x v, shape (len(u), len(v), 2)."""
        n = self.degree
        return np.einsum('ai,ijd,bj->abd', bernstein_basis(n, u), self.net, bernstein_basis(n, v))

    def derivatives(self, u, v) -> Tuple[np.ndarray, np.ndarray]:
        """r_u and r_v on the tensor grid u x v."""
        n = self.degree
        du = n * np.diff(self.net, axis=0)
        dv = n * np.diff(self.net, axis=1)
        bu, bv = bernstein_basis(n, u), bernstein_basis(n, v)
        r_u = np.einsum('ai,ijd,bj->abd', bernstein_basis(n - 1, u), du, bv)
        r_v = np.einsum('ai,ijd,bj->abd', bu, dv, bernstein_basis(n - 1, v))
        return r_u, r_v

    def interior(self) -> np.ndarray:
        """Points with both indices in 2..n-2."""
        n = self.degree
        return self.net[2:n - 1, 2:n - 1]


def side_indices(n: int, side: int) -> Tuple[List[NetIndex], List[NetIndex]]:
    """
    Net indices of a quad side's boundary row and of the second-layer row next to it,
    in the order corner `side` to corner `side + 1`.
    """
    t = range(n + 1)
    if side == 0:
        return [(i, 0) for i in t], [(i, 1) for i in t]
    if side == 1:
        return [(n, i) for i in t], [(n - 1, i) for i in t]
    if side == 2:
        return [(n - i, n) for i in t], [(n - i, n - 1) for i in t]
    if side == 3:
        return [(0, n - i) for i in t], [(1, n - i) for i in t]
    raise DomainError(f"quad side {side} outside 0..3")


def corner_index(n: int, corner: int) -> NetIndex:
    """The second-layer point diagonal to a quad corner."""
    return [(1, 1), (n - 1, 1), (n - 1, n - 1), (1, n - 1)][corner]


def _take(net: np.ndarray, indices: List[NetIndex]) -> np.ndarray:
    rows, cols = zip(*indices)
    return net[list(rows), list(cols)]


def build_patch(layout: PatchLayout, quad: int) -> BezierPatch:
    """Net whose boundary rows are the quad's curves and whose inside is the discrete Coons blend."""
    loop = layout.quad_loop(quad)
    n = loop[0].degree
    bottom = loop[0].control_points
    right = loop[1].control_points
    top = loop[2].control_points[::-1]
    left = loop[3].control_points[::-1]

    s = np.linspace(0.0, 1.0, n + 1)
    u = s[:, None, None]
    v = s[None, :, None]
    net = ((1.0 - v) * bottom[:, None, :] + v * top[:, None, :]
           + (1.0 - u) * left[None, :, :] + u * right[None, :, :]
           - (1.0 - u) * (1.0 - v) * bottom[0] - u * (1.0 - v) * bottom[n]
           - u * v * top[n] - (1.0 - u) * v * top[0])
    net[:, 0] = bottom
    net[n, :] = right
    net[:, n] = top
    net[0, :] = left
    return BezierPatch(net, quad)


def side_orthogonality(boundary: np.ndarray, second: np.ndarray) -> float:
    """Integral over the side of <r_along, r_across>^2."""
    coeffs, _, _ = _orthogonality_terms(boundary, second)
    sampler = _square_sampler(boundary.shape[0] - 1)
    return float(np.sum((sampler @ coeffs) ** 2))


@lru_cache(maxsize=None)
def _square_sampler(n: int) -> np.ndarray:
    """S with |S a|^2 the exact integral of a^2 for degree-(2n-1) coefficients a."""
    nodes, weights = np.polynomial.legendre.leggauss(2 * n)
    t = 0.5 * (nodes + 1.0)
    sampler = np.sqrt(0.5 * weights)[:, None] * bernstein_basis(2 * n - 1, t)
    sampler.setflags(write=False)
    return sampler


def _orthogonality_terms(boundary: np.ndarray, second: np.ndarray):
    n = boundary.shape[0] - 1
    legs = n * np.diff(boundary, axis=0)
    across = n * (second - boundary)
    weights = product_weights(n - 1, n)
    coeffs = np.zeros(2 * n)
    for k in range(n):
        coeffs[k:k + n + 1] += weights[k] * (across @ legs[k])
    return coeffs, legs, weights


def _orthogonalize_side(boundary: np.ndarray, second: np.ndarray) -> np.ndarray:
    """Minimum-norm Newton step on the free points 2..n-2 of one second-layer row."""
    n = boundary.shape[0] - 1
    free = list(range(2, n - 1))
    if not free:
        return second
    before = side_orthogonality(boundary, second)
    if before == 0.0:
        return second
    coeffs, legs, weights = _orthogonality_terms(boundary, second)

    jacobian = np.zeros((2 * n, 2 * len(free)))
    for column, i in enumerate(free):
        for k in range(n):
            jacobian[k + i, 2 * column:2 * column + 2] += weights[k, i] * n * legs[k]
    sampler = _square_sampler(n)
    step, *_ = np.linalg.lstsq(sampler @ jacobian, -(sampler @ coeffs), rcond=None)

    updated = np.array(second)
    updated[free] += step.reshape(-1, 2)
    after = side_orthogonality(boundary, updated)
    if not np.isfinite(after) or after > before:
        logger.warning(f"Orthogonality step diverged ({before:.3e} -> {after:.3e}); keeping the offset layer")
        return second
    return updated


def init_second_layer(patch: BezierPatch) -> BezierPatch:
    """
    Offset every second-layer point 1/n of the way toward the opposite side, averaging
    the corner-adjacent points between their two sides, then make each side's free
    points near-orthogonal to the boundary curve.
    """
    n = patch.degree
    if n < MIN_PATCH_DEGREE:
        raise DomainError(f"patch degree {n} below {MIN_PATCH_DEGREE}")
    net = np.array(patch.net)
    acc = np.zeros_like(net)
    count = np.zeros(net.shape[:2])
    for side in range(4):
        boundary, second = side_indices(n, side)
        opposite, _ = side_indices(n, (side + 2) % 4)
        opposite = opposite[::-1]
        for t in range(1, n):
            a, b = second[t]
            near = net[boundary[t]]
            acc[a, b] += near + (net[opposite[t]] - near) / n
            count[a, b] += 1
    mask = count > 0
    net[mask] = acc[mask] / count[mask][:, None]

    for side in range(4):
        boundary, second = side_indices(n, side)
        row = _orthogonalize_side(_take(net, boundary), _take(net, second))
        for t in range(2, n - 1):
            net[second[t]] = row[t]
    return patch.with_net(net)


# -- Irregular vertices ------------------------------------------------------------


@dataclass(frozen=True)
class IrregularStar:
    """
    Interior vertex of valence M != 4.

    `first[i]`, `second[i]` are the first and second inner control points of the i-th
    incident curve counted from the vertex, counter-clockwise; `sectors[i]` is the
    (patch, corner) lying between curve i and curve i+1.
    """

    vertex: int
    center: np.ndarray
    first: np.ndarray
    second: np.ndarray
    curves: Tuple[int, ...]
    sectors: Tuple[Tuple[int, int], ...]

    @property
    def valence(self) -> int:
        return len(self.curves)


@dataclass(frozen=True)
class G1Solution:
    alpha: np.ndarray
    beta: np.ndarray
    points: np.ndarray
    determinant: float
    least_squares: bool = False


def _corner_lookup(layout: PatchLayout) -> Dict[Tuple[int, int, int], Tuple[int, int]]:
    lookup = {}
    for q, quad in enumerate(layout.mesh.quads):
        curves = layout.quad_curves[q]
        for k in range(4):
            lookup[(quad[k], curves[k], curves[k - 1])] = (q, k)
    return lookup


def irregular_stars(layout: PatchLayout) -> List[IrregularStar]:
    points = layout.control_points()
    n = layout.degree
    lookup = _corner_lookup(layout)
    stars = []
    for v, star in sorted(layout.stars.items()):
        if len(star) == 4:
            continue
        first = np.array([points[c, 1] if starts else points[c, n - 1] for c, starts in star])
        second = np.array([points[c, 2] if starts else points[c, n - 2] for c, starts in star])
        curves = tuple(c for c, _ in star)
        sectors = []
        for i in range(len(star)):
            key = (v, curves[i], curves[(i + 1) % len(star)])
            if key not in lookup:
                raise TopologyError(f"no patch between curves {key[1]} and {key[2]} at vertex {v}")
            sectors.append(lookup[key])
        stars.append(IrregularStar(v, np.array(layout.mesh.vertices[v]), first, second,
                                   curves, tuple(sectors)))
    return stars


def _g1_rhs(star: IrregularStar, alpha: np.ndarray, beta: np.ndarray, n: int) -> np.ndarray:
    s1, s2 = star.first, star.second
    return ((alpha + beta - 1.0 + 2.0 / n)[:, None] * s1 + (1.0 - 1.0 / n) * s2
            - star.center[None, :] / n)


def enforce_g1(star: IrregularStar, degree: int) -> G1Solution:
    """
    Tangent-plane continuity at an irregular vertex.

    Per incident curve i, alpha_i and beta_i solve
        s1^i - P00 = alpha_i (s1^(i+1) - P00) + beta_i (s1^(i-1) - P00),
    and the corner points P^i of the M sectors solve the cyclic system
        alpha_i P^i + beta_i P^(i-1) = H_i,
    the next coefficient of the same relation with the boundary tangent degree-elevated.
    """
    m = star.valence
    legs = star.first - star.center[None, :]
    alpha = np.zeros(m)
    beta = np.zeros(m)
    for i in range(m):
        system = np.column_stack([legs[(i + 1) % m], legs[i - 1]])
        if abs(np.linalg.det(system)) < SINGULAR_DETERMINANT * max(1.0, float(np.abs(system).max()) ** 2):
            logger.warning(f"Vertex {star.vertex}: neighbouring tangents of curve {star.curves[i]} are parallel")
            (alpha[i], beta[i]), *_ = np.linalg.lstsq(system, legs[i], rcond=None)
        else:
            alpha[i], beta[i] = np.linalg.solve(system, legs[i])

    matrix = np.zeros((m, m))
    for i in range(m):
        matrix[i, i] += alpha[i]
        matrix[i, (i - 1) % m] += beta[i]
    rhs = _g1_rhs(star, alpha, beta, degree)
    determinant = float(np.linalg.det(matrix))
    if abs(determinant) < SINGULAR_DETERMINANT:
        logger.warning(f"Vertex {star.vertex}: cyclic system singular (det = {determinant:.3e}), "
                       "using the minimum-norm least-squares solution")
        points, *_ = np.linalg.lstsq(matrix, rhs, rcond=None)
        return G1Solution(alpha, beta, points, determinant, least_squares=True)
    return G1Solution(alpha, beta, np.linalg.solve(matrix, rhs), determinant)


def g1_residual(star: IrregularStar, solution: G1Solution, degree: int) -> float:
    """Largest violation of the first- and second-coefficient continuity relations, scaled by n."""
    n = degree
    s0, s1, s2 = star.center, star.first, star.second
    p = solution.points
    legs = s1 - s0[None, :]
    worst = 0.0
    for i in range(star.valence):
        first = legs[i] - solution.alpha[i] * legs[(i + 1) % star.valence] - solution.beta[i] * legs[i - 1]
        second = (n * solution.alpha[i] * (p[i] - s1[i]) + n * solution.beta[i] * (p[i - 1] - s1[i])
                  - (n - 1) * (s2[i] - s1[i]) - (s1[i] - s0))
        worst = max(worst, float(np.linalg.norm(first)), float(np.linalg.norm(second)))
    return worst


def g1_owned(layout: PatchLayout, stars: Optional[List[IrregularStar]] = None) -> Set[Variable]:
    """Second-layer points fixed by the irregular-vertex solve."""
    n = layout.degree
    stars = irregular_stars(layout) if stars is None else stars
    return {(q, *corner_index(n, k)) for star in stars for q, k in star.sectors}


# -- C1 across regular curves ------------------------------------------------------


@dataclass(frozen=True)
class C1Constraint:
    """flank_a + flank_b = 2 s_j for control point j of an interior curve."""

    curve: int
    j: int
    a: Variable
    b: Variable
    target: np.ndarray


def c1_constraints(layout: PatchLayout) -> List[C1Constraint]:
    n = layout.degree
    uses: Dict[int, List[Tuple[int, int, bool]]] = {}
    for q in range(len(layout.quad_curves)):
        for k in range(4):
            uses.setdefault(layout.quad_curves[q][k], []).append((q, k, layout.quad_reversed[q][k]))

    constraints = []
    for c in layout.interior_curves():
        sides = uses.get(c, [])
        if len(sides) != 2:
            raise TopologyError(f"interior curve {c} bounds {len(sides)} quad(s)")
        points = layout.curves[c].curve.control_points
        flanks = []
        for q, k, flipped in sides:
            _, second = side_indices(n, k)
            flanks.append((q, second[::-1] if flipped else second))
        for j in range(1, n):
            (qa, fa), (qb, fb) = flanks
            constraints.append(C1Constraint(c, j, (qa, *fa[j]), (qb, *fb[j]), 2.0 * points[j]))
    return constraints


def enforce_c1(layout: PatchLayout, patches: List[BezierPatch],
               fixed: Optional[Set[Variable]] = None) -> List[BezierPatch]:
    """
    Minimal change of the flanking second-layer points so that every constraint
    flank_a + flank_b = 2 s_j holds.

    Constraints sharing a point (at quad corners) are solved together by the
    minimum-norm least-squares step; for an isolated pair this is
    delta = (2 s - a - b) / 2 on both points. Points in `fixed` (the irregular-vertex
    corners by default) do not move, and constraints between two fixed points are skipped.
    """
    fixed = g1_owned(layout) if fixed is None else fixed
    nets = [np.array(patch.net) for patch in patches]
    constraints = [c for c in c1_constraints(layout) if not (c.a in fixed and c.b in fixed)]
    if not constraints:
        return list(patches)

    variables: Dict[Variable, int] = {}
    for c in constraints:
        for var in (c.a, c.b):
            if var not in fixed and var not in variables:
                variables[var] = len(variables)
    rows, cols = [], []
    for c in constraints:
        if c.a not in fixed and c.b not in fixed:
            rows.append(variables[c.a])
            cols.append(variables[c.b])
    adjacency = scipy.sparse.coo_matrix((np.ones(len(rows)), (rows, cols)),
                                        shape=(len(variables), len(variables)))
    _, labels = connected_components(adjacency, directed=False)

    groups: Dict[int, List[C1Constraint]] = {}
    for c in constraints:
        free = c.a if c.a not in fixed else c.b
        groups.setdefault(int(labels[variables[free]]), []).append(c)

    def value(var: Variable) -> np.ndarray:
        q, i, j = var
        return nets[q][i, j]

    worst = 0.0
    for members in groups.values():
        local: Dict[Variable, int] = {}
        for c in members:
            for var in (c.a, c.b):
                if var not in fixed and var not in local:
                    local[var] = len(local)
        matrix = np.zeros((len(members), len(local)))
        rhs = np.zeros((len(members), 2))
        x0 = np.array([value(var) for var in local])
        for row, c in enumerate(members):
            rhs[row] = c.target
            for var in (c.a, c.b):
                if var in fixed:
                    rhs[row] -= value(var)
                else:
                    matrix[row, local[var]] += 1.0
        step, *_ = np.linalg.lstsq(matrix, rhs - matrix @ x0, rcond=None)
        x = x0 + step
        worst = max(worst, float(np.abs(matrix @ x - rhs).max()))
        for var, index in local.items():
            q, i, j = var
            nets[q][i, j] = x[index]

    if worst > 1e-9:
        logger.warning(f"C1 constraints inconsistent at some corners (residual {worst:.3e})")
    else:
        logger.debug(f"C1 enforced on {len(constraints)} constraint(s) in {len(groups)} group(s)")
    return [patch.with_net(net) for patch, net in zip(patches, nets)]


def c1_residual(layout: PatchLayout, patches: List[BezierPatch],
                fixed: Optional[Set[Variable]] = None) -> float:
    """max |2 s_j - P_j - Q_j| over the constraints not owned by an irregular vertex."""
    fixed = g1_owned(layout) if fixed is None else fixed
    worst = 0.0
    for c in c1_constraints(layout):
        if c.a in fixed or c.b in fixed:
            continue
        qa, ia, ja = c.a
        qb, ib, jb = c.b
        gap = c.target - patches[qa].net[ia, ja] - patches[qb].net[ib, jb]
        worst = max(worst, float(np.abs(gap).max()))
    return worst


# -- Inner-point energy ------------------------------------------------------------


@lru_cache(maxsize=None)
def energy_gram(n: int, tau1: float, tau2: float) -> np.ndarray:
    """
    G with E = sum over coordinates of x^T G x for the row-major flattened net:
    tau1 (|r_u|^2 + |r_v|^2) + tau2 (|r_uu|^2 + 2 |r_uv|^2 + |r_vv|^2).
    """
    m0 = bernstein_gram(n, n)
    d1 = derivative_gram(n, 1)
    d2 = derivative_gram(n, 2)
    gram = (tau1 * (np.kron(d1, m0) + np.kron(m0, d1))
            + tau2 * (np.kron(d2, m0) + 2.0 * np.kron(d1, d1) + np.kron(m0, d2)))
    gram = 0.5 * (gram + gram.T)
    gram.setflags(write=False)
    return gram


@dataclass(frozen=True)
class EnergySystem:
    """Stationarity system of the energy in the interior points; one matrix serves x and y."""

    degree: int
    tau1: float
    tau2: float
    interior: np.ndarray
    fixed: np.ndarray
    matrix: np.ndarray
    coupling: np.ndarray
    factor: tuple = field(repr=False, compare=False, default=None)

    @property
    def unknowns(self) -> int:
        return int(self.interior.size)

    def solve(self, fixed_values: np.ndarray) -> np.ndarray:
        """Interior values (unknowns, 2) for the given fixed values (fixed, 2)."""
        return scipy.linalg.cho_solve(self.factor, -self.coupling @ fixed_values)


def interior_mask(n: int) -> np.ndarray:
    mask = np.zeros((n + 1, n + 1), dtype=bool)
    mask[2:n - 1, 2:n - 1] = True
    return mask


@lru_cache(maxsize=None)
def assemble_energy_system(n: int, tau1: float, tau2: float) -> EnergySystem:
    """
    Hessian block 2 G_II over the points with both indices in 2..n-2, and the
    coupling 2 G_IF to the two fixed outer layers. Factorized once per (n, tau1, tau2).
    """
    if n < MIN_PATCH_DEGREE:
        raise DomainError(f"energy system needs degree >= {MIN_PATCH_DEGREE}, got {n}")
    if tau1 <= 0 or tau2 <= 0:
        raise DomainError("energy weights must be positive")
    gram = energy_gram(n, float(tau1), float(tau2))
    mask = interior_mask(n).ravel()
    interior = np.flatnonzero(mask)
    fixed = np.flatnonzero(~mask)
    matrix = 2.0 * gram[np.ix_(interior, interior)]
    coupling = 2.0 * gram[np.ix_(interior, fixed)]
    try:
        factor = scipy.linalg.cho_factor(matrix)
    except np.linalg.LinAlgError as e:
        raise SolverError(f"energy system for degree {n} is not positive definite") from e
    logger.debug(f"Energy system n={n}, tau=({tau1}, {tau2}): {interior.size} unknown(s) per coordinate")
    return EnergySystem(n, float(tau1), float(tau2), interior, fixed, matrix, coupling, factor)


def solve_inner_points(patch: BezierPatch, system: EnergySystem) -> BezierPatch:
    n = patch.degree
    if n != system.degree:
        raise DomainError(f"patch degree {n} does not match energy system degree {system.degree}")
    flat = np.array(patch.net).reshape(-1, 2)
    flat[system.interior] = system.solve(flat[system.fixed])
    return patch.with_net(flat.reshape(n + 1, n + 1, 2))


def energy_value(patch: BezierPatch, tau1: float, tau2: float) -> float:
    n = patch.degree
    gram = energy_gram(n, float(tau1), float(tau2))
    flat = patch.net.reshape(-1, 2)
    return float(np.einsum('ic,ij,jc->', flat, gram, flat))


def energy_gradient(patch: BezierPatch, tau1: float, tau2: float) -> np.ndarray:
    """dE/dP for every net point, shape (n+1, n+1, 2)."""
    n = patch.degree
    gram = energy_gram(n, float(tau1), float(tau2))
    return (2.0 * gram @ patch.net.reshape(-1, 2)).reshape(n + 1, n + 1, 2)


# -- Driver ------------------------------------------------------------------------


@dataclass
class PatchFit:
    patches: List[BezierPatch]
    c1_residual: float = 0.0
    g1_residual: float = 0.0
    stars: List[IrregularStar] = field(default_factory=list)
    g1_solutions: List[G1Solution] = field(default_factory=list)


def tie_second_layers(layout: PatchLayout, patches: List[BezierPatch]) -> PatchFit:
    """C1 across regular curves, then G1 corner points at every irregular vertex."""
    n = layout.degree
    stars = irregular_stars(layout)
    owned = g1_owned(layout, stars)
    patches = enforce_c1(layout, patches, owned)

    nets = [np.array(patch.net) for patch in patches]
    solutions, g1_worst = [], 0.0
    for star in stars:
        solution = enforce_g1(star, n)
        for (q, k), point in zip(star.sectors, solution.points):
            nets[q][corner_index(n, k)] = point
        solutions.append(solution)
        g1_worst = max(g1_worst, g1_residual(star, solution, n))
    patches = [patch.with_net(net) for patch, net in zip(patches, nets)]

    c1_worst = c1_residual(layout, patches, owned)
    logger.info(f"Second layers tied: C1 residual {c1_worst:.2e}, "
                f"{len(stars)} irregular vertex(es), G1 residual {g1_worst:.2e}")
    return PatchFit(patches, c1_worst, g1_worst, stars, solutions)


def fit_patches(layout: PatchLayout, tau1: float, tau2: float) -> PatchFit:
    """All patch stages in order: build, second layer, C1/G1, inner points."""
    patches = [init_second_layer(build_patch(layout, q)) for q in range(len(layout.quad_curves))]
    result = tie_second_layers(layout, patches)
    system = assemble_energy_system(layout.degree, float(tau1), float(tau2))
    result.patches = [solve_inner_points(patch, system) for patch in result.patches]
    return result
