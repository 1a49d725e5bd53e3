#!/usr/bin/env python3
"""
Tests for segmentation curves and the global objective
"""

import math
import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.services.bernstein import BezierCurve, curve_degree_elevate, line_curve
from app.services.errors import DomainError
from app.services.segmentation import (
    GlobalObjectiveConfig, check_layout_validity, enforce_corner_compatibility, f_shape, f_tangent,
    f_uniform, init_segmentation_curves, objective, optimize_segmentation, quad_areas, region_area,
    validate_layout,
)
from test_topology import grid_mesh

UNIT_SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]


def square_loop(degree=4):
    return [line_curve(a, b, degree) for a, b in zip(UNIT_SQUARE, UNIT_SQUARE[1:] + UNIT_SQUARE[:1])]


def curve_between(layout, a, b) -> int:
    for index, item in enumerate(layout.curves):
        if {item.start, item.end} == {a, b}:
            return index
    raise KeyError((a, b))


def test_region_area_of_square():
    assert region_area(square_loop()) == pytest.approx(1.0, abs=1e-12)
    mixed = square_loop()
    mixed[1] = line_curve((1, 0), (1, 1), 2)
    assert region_area(mixed) == pytest.approx(1.0, abs=1e-12)


def test_region_area_with_reversed_curves():
    loop = square_loop()
    loop[2] = loop[2].reversed()
    assert region_area(loop, [False, False, True, False]) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        region_area(loop)


def test_region_area_of_curved_loop():
    bulge = BezierCurve(np.array([[1.0, 0.0], [1.5, 0.3], [1.5, 0.7], [1.0, 1.0]]))
    loop = [line_curve((0, 0), (1, 0), 3), bulge, line_curve((1, 1), (0, 1), 3), line_curve((0, 1), (0, 0), 3)]
    t = np.linspace(0.0, 1.0, 200001)[:-1]
    points = np.vstack([curve.evaluate(t) for curve in loop])
    x, y = points[:, 0], points[:, 1]
    shoelace = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    assert region_area(loop) == pytest.approx(shoelace, rel=1e-6)
    elevated = [curve_degree_elevate(curve, 6) for curve in loop]
    assert region_area(elevated) == pytest.approx(region_area(loop), abs=1e-12)


def test_initial_curves_follow_mesh_edges():
    layout = init_segmentation_curves(grid_mesh(), 4)
    assert len(layout.curves) == 12
    assert len(layout.interior_curves()) == 4
    assert layout.degree == 4
    validate_layout(layout)
    assert_allclose(quad_areas(layout), 1.0, atol=1e-12)
    assert len(layout.stars[4]) == 4


def test_uniform_grid_has_zero_uniform_and_tangent_terms():
    layout = init_segmentation_curves(grid_mesh(), 4)
    assert f_uniform(layout) == pytest.approx(0.0, abs=1e-14)
    assert f_tangent(layout) == pytest.approx(0.0, abs=1e-14)
    shifted = init_segmentation_curves(grid_mesh((0.3, 0.1)), 4)
    assert f_uniform(shifted) > 0.0
    assert f_tangent(shifted) > 0.0


def test_shape_energy_of_straight_curve():
    # |S'|^2 = 1 and S'' = 0 for an equally spaced unit segment
    assert f_shape([line_curve((0, 0), (1, 0), 4)], 2.0, 1.0) == pytest.approx(2.0, abs=1e-12)


def test_objective_gradient_matches_finite_differences():
    cfg = GlobalObjectiveConfig()
    rng = np.random.default_rng(17)
    h = 1e-6
    for _ in range(20):
        layout = init_segmentation_curves(grid_mesh(tuple(rng.uniform(-0.3, 0.3, 2))), 4)
        mask = layout.free_mask()
        points = layout.control_points()
        points[mask] += rng.normal(scale=0.05, size=int(mask.sum()))
        _, gradient = objective(layout, cfg, points)
        x = points[mask]
        numeric = np.zeros_like(x)
        for k in range(x.size):
            for sign in (1.0, -1.0):
                probe = points.copy()
                shifted = x.copy()
                shifted[k] += sign * h
                probe[mask] = shifted
                numeric[k] += sign * objective(layout, cfg, probe)[0] / (2 * h)
        error = np.linalg.norm(numeric - gradient[mask]) / max(np.linalg.norm(gradient[mask]), 1e-12)
        assert error < 1e-5


def test_optimization_never_raises_objective():
    cfg = GlobalObjectiveConfig()
    layout = init_segmentation_curves(grid_mesh((0.35, -0.25)), 4)
    optimized = optimize_segmentation(layout, cfg)
    assert optimized.objective_final <= optimized.objective_initial
    assert optimized.objective_final == pytest.approx(objective(optimized, cfg)[0])
    assert optimized.trace
    for before, after in zip(layout.curves, optimized.curves):
        assert np.array_equal(before.curve.start, after.curve.start)
        assert np.array_equal(before.curve.end, after.curve.end)
        if before.boundary:
            assert np.array_equal(before.curve.control_points, after.curve.control_points)
    validate_layout(optimized)


def test_corner_compatibility_at_regular_vertex():
    layout = init_segmentation_curves(grid_mesh(), 4)
    rng = np.random.default_rng(5)
    points = layout.control_points()
    points[layout.free_mask()] += rng.normal(scale=0.05, size=int(layout.free_mask().sum()))
    adjusted = enforce_corner_compatibility(layout.with_control_points(points))
    n = adjusted.degree
    legs = []
    for index, starts in adjusted.stars[4]:
        curve = adjusted.curves[index].curve.control_points
        legs.append(curve[1] if starts else curve[n - 1])
    a, b, c, d = legs
    assert_allclose(a + c, b + d, atol=1e-12)


def test_validity_check_detects_crossing():
    layout = init_segmentation_curves(grid_mesh(), 4)
    assert check_layout_validity(layout) == []
    index = curve_between(layout, 4, 1)
    points = layout.control_points()
    forward = layout.curves[index].start == 4
    bent = np.array([(1.0, 1.0), (1.5, 1.5), (1.5, 0.5), (1.2, 0.2), (1.0, 0.0)])
    points[index] = bent if forward else bent[::-1]
    crossing = layout.with_control_points(points)
    violations = check_layout_validity(crossing)
    assert any(index in pair for pair in violations)


def test_objective_config_rejects_non_positive_weights():
    with pytest.raises(DomainError):
        GlobalObjectiveConfig(omega3=0.0)
    assert math.isclose(GlobalObjectiveConfig().omega3, 50.0)
