#!/usr/bin/env python3
"""
Tests for patch construction, C1/G1 ties and the inner-point energy
"""

import math
import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.services.bernstein import BezierCurve, line_curve
from app.services.errors import DomainError
from app.services.patchfit import (
    BezierPatch, IrregularStar, _orthogonalize_side, assemble_energy_system, build_patch,
    c1_constraints, c1_residual, corner_index, energy_gradient, energy_value, enforce_g1, fit_patches,
    g1_residual, init_second_layer, interior_mask, irregular_stars, side_indices, side_orthogonality,
    solve_inner_points,
)
from app.services.segmentation import init_segmentation_curves
from app.services.topology import QuadMesh
from test_topology import grid_mesh


def identity_net(n: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n + 1)
    return np.stack(np.meshgrid(s, s, indexing='ij'), axis=-1)


def single_quad_mesh(corners, curves=None) -> QuadMesh:
    vertices = np.array(corners, dtype=float)
    ring = [0, 1, 2, 3]
    boundary = {}
    for k, (a, b) in enumerate(zip(ring, ring[1:] + ring[:1])):
        boundary[(a, b)] = curves[k] if curves else line_curve(vertices[a], vertices[b], 4)
    return QuadMesh(vertices, [(0, 1, 2, 3)], boundary)


def triangle_mesh() -> QuadMesh:
    """Triangle split into three quads around its centroid (one valence-3 vertex)."""
    v0, v1, v2 = np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([0.5, math.sqrt(3.0) / 2])
    m01, m12, m20 = (v0 + v1) / 2, (v1 + v2) / 2, (v2 + v0) / 2
    centre = (v0 + v1 + v2) / 3
    vertices = np.array([v0, v1, v2, m01, m12, m20, centre])
    quads = [(0, 3, 6, 5), (1, 4, 6, 3), (2, 5, 6, 4)]
    ring = [0, 3, 1, 4, 2, 5]
    boundary = {(a, b): line_curve(vertices[a], vertices[b], 4) for a, b in zip(ring, ring[1:] + ring[:1])}
    return QuadMesh(vertices, quads, boundary)


def symmetric_star(m: int) -> IrregularStar:
    angles = 2.0 * np.pi * np.arange(m) / m
    directions = np.column_stack([np.cos(angles), np.sin(angles)])
    return IrregularStar(0, np.zeros(2), 0.25 * directions, 0.5 * directions,
                         tuple(range(m)), tuple((i, 0) for i in range(m)))


def test_side_indices_start_at_corners():
    n = 5
    corners = [(0, 0), (n, 0), (n, n), (0, n)]
    for side in range(4):
        boundary, second = side_indices(n, side)
        assert boundary[0] == corners[side]
        assert boundary[-1] == corners[(side + 1) % 4]
        assert second[1] == corner_index(n, side)
    with pytest.raises(DomainError):
        side_indices(n, 4)


def test_build_patch_on_unit_square_is_identity():
    layout = init_segmentation_curves(single_quad_mesh([(0, 0), (1, 0), (1, 1), (0, 1)]), 4)
    patch = build_patch(layout, 0)
    assert_allclose(patch.net, identity_net(4), atol=1e-14)
    assert_allclose(init_second_layer(patch).net, identity_net(4), atol=1e-12)


def test_patch_boundary_rows_are_curves():
    bulge = BezierCurve(np.array([[1.0, 0.0], [1.2, 0.25], [1.3, 0.5], [1.2, 0.75], [1.0, 1.0]]))
    curves = [line_curve((0, 0), (1, 0), 4), bulge, line_curve((1, 1), (0, 1), 4), line_curve((0, 1), (0, 0), 4)]
    layout = init_segmentation_curves(single_quad_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], curves), 4)
    patch = init_second_layer(build_patch(layout, 0))
    assert np.array_equal(patch.net[4, :], bulge.control_points)
    assert np.array_equal(patch.net[:, 0], curves[0].control_points)
    t = np.linspace(0.0, 1.0, 7)
    assert_allclose(patch.evaluate([1.0], t)[0], bulge.evaluate(t), atol=1e-12)


def test_orthogonalization_never_increases_objective():
    rng = np.random.default_rng(12)
    for n in (4, 6, 9):
        boundary = np.column_stack([np.linspace(0, 1, n + 1), 0.1 * rng.normal(size=n + 1)])
        second = boundary + np.column_stack([0.3 * rng.normal(size=n + 1), np.full(n + 1, 1.0 / n)])
        updated = _orthogonalize_side(boundary, second)
        assert side_orthogonality(boundary, updated) <= side_orthogonality(boundary, second) + 1e-15
        assert np.array_equal(updated[:2], second[:2])
        assert np.array_equal(updated[n - 1:], second[n - 1:])


def test_energy_of_identity_patch():
    patch = BezierPatch(identity_net(5))
    assert energy_value(patch, 1.0, 1.5) == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize('n', [4, 5, 6])
def test_energy_matrix_matches_finite_difference_hessian(n):
    tau1, tau2 = 2.0, 1.5
    system = assemble_energy_system(n, tau1, tau2)
    rng = np.random.default_rng(n)
    base = identity_net(n) + 0.05 * rng.normal(size=(n + 1, n + 1, 2))
    interior = system.interior
    h = 1e-3

    def energy(flat_x):
        net = np.array(base).reshape(-1, 2)
        net[:, 0] = flat_x
        return energy_value(BezierPatch(net.reshape(n + 1, n + 1, 2)), tau1, tau2)

    x = base.reshape(-1, 2)[:, 0].copy()
    hessian = np.zeros((interior.size, interior.size))
    for a, ia in enumerate(interior):
        for b, ib in enumerate(interior):
            values = []
            for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                probe = x.copy()
                probe[ia] += sa * h
                probe[ib] += sb * h
                values.append(energy(probe))
            hessian[a, b] = (values[0] - values[1] - values[2] + values[3]) / (4 * h * h)
    assert_allclose(system.matrix, hessian, rtol=1e-4, atol=1e-4 * np.abs(hessian).max())


def test_identity_boundary_recovers_uniform_grid():
    n = 6
    net = identity_net(n)
    scrambled = np.array(net)
    scrambled[interior_mask(n)] += 0.1
    solved = solve_inner_points(BezierPatch(scrambled), assemble_energy_system(n, 2.0, 1.5))
    assert_allclose(solved.net, net, atol=1e-10)


def test_solved_patch_is_stationary():
    n = 7
    rng = np.random.default_rng(3)
    patch = BezierPatch(identity_net(n) + 0.03 * rng.normal(size=(n + 1, n + 1, 2)))
    solved = solve_inner_points(patch, assemble_energy_system(n, 2.0, 1.5))
    gradient = energy_gradient(solved, 2.0, 1.5)
    assert np.abs(gradient[interior_mask(n)]).max() < 1e-6
    assert np.array_equal(solved.net[~interior_mask(n)], patch.net[~interior_mask(n)])


def test_energy_system_needs_degree_four():
    with pytest.raises(DomainError):
        assemble_energy_system(3, 2.0, 1.5)
    with pytest.raises(DomainError):
        solve_inner_points(BezierPatch(identity_net(5)), assemble_energy_system(4, 2.0, 1.5))


def test_g1_symmetric_valence_three():
    star = symmetric_star(3)
    solution = enforce_g1(star, 4)
    assert_allclose(solution.alpha, -1.0, atol=1e-12)
    assert_allclose(solution.beta, -1.0, atol=1e-12)
    assert solution.determinant == pytest.approx(-2.0, abs=1e-12)
    assert not solution.least_squares
    assert g1_residual(star, solution, 4) < 1e-10


def test_g1_symmetric_valence_five():
    star = symmetric_star(5)
    solution = enforce_g1(star, 5)
    phi = 1.0 / (2.0 * math.cos(2.0 * math.pi / 5))
    assert_allclose(solution.alpha, phi, atol=1e-9)
    assert_allclose(solution.beta, phi, atol=1e-9)
    assert solution.determinant == pytest.approx(2.0 * solution.alpha[0] ** 5, abs=1e-9)
    assert g1_residual(star, solution, 5) < 1e-10


def affine_star(angles, lengths, center=(0.3, -0.2)) -> IrregularStar:
    """Star of straight, evenly parameterized legs; the affine fill has P^i = s1^i + s1^(i+1) - P00."""
    center = np.array(center)
    legs = np.array(lengths)[:, None] * np.column_stack([np.cos(angles), np.sin(angles)])
    m = len(angles)
    return IrregularStar(0, center, center + legs, center + 2.0 * legs,
                         tuple(range(m)), tuple((i, 0) for i in range(m)))


@pytest.mark.parametrize('angles,lengths', [
    ([0.2, 2.1, 4.3], [0.30, 0.20, 0.25]),
    ([0.1, 1.3, 2.6, 3.9, 5.0], [0.20, 0.30, 0.25, 0.22, 0.28]),
])
def test_g1_reproduces_affine_star(angles, lengths):
    star = affine_star(angles, lengths)
    expected = star.first + np.roll(star.first, -1, axis=0) - star.center[None, :]
    for n in (4, 5, 6):
        solution = enforce_g1(star, n)
        assert not solution.least_squares
        assert_allclose(solution.points, expected, atol=1e-12)
        assert g1_residual(star, solution, n) < 1e-10


def test_c1_ties_on_regular_grid():
    layout = init_segmentation_curves(grid_mesh((0.1, -0.05)), 4)
    assert len(c1_constraints(layout)) == 4 * 3
    fit = fit_patches(layout, 2.0, 1.5)
    assert fit.c1_residual <= 1e-12
    assert c1_residual(layout, fit.patches) <= 1e-12
    assert not fit.stars


def test_g1_ties_at_valence_three_vertex():
    layout = init_segmentation_curves(triangle_mesh(), 4)
    stars = irregular_stars(layout)
    assert [star.valence for star in stars] == [3]
    fit = fit_patches(layout, 2.0, 1.5)
    assert fit.g1_residual < 1e-10
    assert fit.c1_residual <= 1e-12
    star, solution = fit.stars[0], fit.g1_solutions[0]
    for (q, k), point in zip(star.sectors, solution.points):
        assert_allclose(fit.patches[q].net[corner_index(4, k)], point, atol=1e-14)
