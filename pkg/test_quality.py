#!/usr/bin/env python3
"""
Tests for the scaled Jacobian / condition number report
"""

import math
import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.services.errors import DomainError
from app.services.patchfit import BezierPatch
from app.services.quality import condition_number_field, patch_quality, quality_report, scaled_jacobian_field
from test_patchfit import identity_net


def collapsed_patch(n: int = 4) -> BezierPatch:
    """Unit square with the u = 0 side collapsed to a point."""
    net = identity_net(n)
    net[0, :] = (0.0, 0.5)
    return BezierPatch(net)


def test_identity_patch_metrics():
    patch = BezierPatch(identity_net(5))
    scaled = scaled_jacobian_field(patch, 11)
    condition = condition_number_field(patch, 11)
    assert scaled.values.shape == (11, 11)
    assert_allclose(scaled.values, 1.0, atol=1e-12)
    assert_allclose(condition.values, 2.0, atol=1e-12)
    assert scaled.flagged == condition.flagged == 0


def test_condition_number_lower_bound():
    rng = np.random.default_rng(8)
    for _ in range(20):
        patch = BezierPatch(identity_net(4) + 0.1 * rng.normal(size=(5, 5, 2)))
        values = condition_number_field(patch, 15).values
        assert np.all(values >= 2.0 - 1e-12)
        assert np.all(np.abs(scaled_jacobian_field(patch, 15).values) <= 1.0 + 1e-12)


def test_degenerate_side_is_flagged():
    patch = collapsed_patch()
    scaled = scaled_jacobian_field(patch, 9)
    condition = condition_number_field(patch, 9)
    assert scaled.flagged == 9
    assert np.all(scaled.values[0] == 0.0)
    assert condition.flagged >= 9
    assert np.all(np.isinf(condition.values[0]))
    row = patch_quality(0, patch, 9)
    assert not row.valid
    assert row.condition_number.max == math.inf


def test_grid_must_be_at_least_two():
    with pytest.raises(DomainError):
        scaled_jacobian_field(BezierPatch(identity_net(4)), 1)


def test_report_aggregates_patches():
    left = identity_net(4)
    right = identity_net(4) + np.array([1.0, 0.0])
    stretched = identity_net(4) * np.array([2.0, 1.0]) + np.array([2.0, 0.0])
    patches = [BezierPatch(left), BezierPatch(right), BezierPatch(stretched)]
    report = quality_report(patches, grid=10, name='strip', repaired=[1],
                            audit={'irregular_vertices': 0, 'valence_histogram': {}})
    assert report.patch_count == 3
    assert report.degree == 4
    # the three nets share two columns of five points
    assert report.control_point_count == 75 - 10
    assert report.scaled_jacobian.min == pytest.approx(1.0)
    assert report.condition_number.min == pytest.approx(2.0)
    # 2x1 stretch: |J|_F^2 / det = (4 + 1) / 2
    assert report.condition_number.max == pytest.approx(2.5)
    assert report.condition_number.average == pytest.approx((2.0 + 2.0 + 2.5) / 3)
    assert [row.repaired for row in report.patches] == [False, True, False]
    assert report.all_valid
    assert not report.flags


def test_report_flags_invalid_and_degenerate():
    report = quality_report([BezierPatch(identity_net(4)), collapsed_patch()], grid=6,
                            repair_failures=[1], fallback_pieces=1)
    assert not report.all_valid
    assert report.repair_failures == [1]
    assert any('degenerate' in flag for flag in report.flags)
    assert any('[1]' in flag for flag in report.flags)
    table = report.as_table()
    assert 'repair failed for patches [1]' in table
    assert 'fallback quadrangulation used for 1 piece(s)' in table


def test_report_table_layout():
    report = quality_report([BezierPatch(identity_net(4))], grid=5, name='square')
    lines = report.as_table().splitlines()
    assert lines[0].startswith('Example')
    assert '# Con.' in lines[0] and '# Patch' in lines[0]
    assert lines[2].startswith('square')
    assert '25' in lines[2].split()
    with pytest.raises(DomainError):
        quality_report([])
