#!/usr/bin/env python3
"""
Tests for Jacobian certification and log-barrier repair
"""

import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.services.errors import DomainError
from app.services.patchfit import BezierPatch, interior_mask
from app.services.validity import (
    RepairConfig, classify_patch, coefficient_gradient, jacobian_coeffs, repair_patch, smoothed_log,
)
from test_patchfit import identity_net


def sampled_jacobian(patch: BezierPatch, samples: int = 50) -> np.ndarray:
    t = np.linspace(0.0, 1.0, samples)
    r_u, r_v = patch.derivatives(t, t)
    return r_u[..., 0] * r_v[..., 1] - r_v[..., 0] * r_u[..., 1]


def tangled_patches():
    """
    Identity nets with one interior point pushed across its neighbours: the centre
    point of the degree-4 net along each axis, and a point of the degree-5 net with
    its images under the symmetries of the square.
    """
    pushes = [(4, (2, 2), (s * 3.0, 0.0)) for s in (1, -1)] + [(4, (2, 2), (0.0, s * 3.0)) for s in (1, -1)]
    pushes += [(5, (2, 2), (2.5, 0.0)), (5, (3, 2), (-2.5, 0.0)), (5, (2, 3), (2.5, 0.0)), (5, (3, 3), (-2.5, 0.0)),
               (5, (2, 2), (0.0, 2.5)), (5, (2, 3), (0.0, -2.5)), (5, (3, 2), (0.0, 2.5)), (5, (3, 3), (0.0, -2.5))]
    patches = []
    for n, (i, j), offset in pushes:
        net = identity_net(n)
        net[i, j] += offset
        patch = BezierPatch(net, len(patches))
        assert not jacobian_coeffs(patch).valid, f"push {offset} of point {(i, j)} left the degree-{n} net valid"
        patches.append(patch)
    return patches


def test_identity_and_mirror_coefficients():
    for n in (4, 5, 7):
        net = identity_net(n)
        field = jacobian_coeffs(BezierPatch(net))
        assert field.coefficients.shape == (2 * n, 2 * n)
        assert_allclose(field.coefficients, 1.0, atol=1e-12)
        mirrored = np.array(net)
        mirrored[..., 0] = -mirrored[..., 0]
        assert_allclose(jacobian_coeffs(BezierPatch(mirrored)).coefficients, -1.0, atol=1e-12)
        assert classify_patch(field)


def test_coefficients_reproduce_jacobian():
    rng = np.random.default_rng(0)
    patch = BezierPatch(identity_net(5) + 0.05 * rng.normal(size=(6, 6, 2)))
    t = np.linspace(0.0, 1.0, 13)
    assert_allclose(jacobian_coeffs(patch).evaluate(t, t), sampled_jacobian(patch, 13), atol=1e-12)


def test_coefficients_bound_sampled_jacobian():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(4, 8))
        patch = BezierPatch(identity_net(n) + 0.15 * rng.normal(size=(n + 1, n + 1, 2)))
        field = jacobian_coeffs(patch)
        sampled = sampled_jacobian(patch)
        assert field.min <= sampled.min() + 1e-12
        assert field.max >= sampled.max() - 1e-12


def test_coefficient_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    n = 5
    net = identity_net(n) + 0.05 * rng.normal(size=(n + 1, n + 1, 2))
    weights = rng.normal(size=(2 * n, 2 * n))

    def value(candidate):
        return float(np.sum(weights * jacobian_coeffs(BezierPatch(candidate)).coefficients))

    gradient = coefficient_gradient(net, weights)
    h = 1e-6
    for index in [(0, 0, 0), (2, 3, 1), (5, 1, 0), (3, 3, 1), (1, 5, 0)]:
        probe_plus, probe_minus = np.array(net), np.array(net)
        probe_plus[index] += h
        probe_minus[index] -= h
        numeric = (value(probe_plus) - value(probe_minus)) / (2 * h)
        assert numeric == pytest.approx(gradient[index], rel=1e-6, abs=1e-8)


def test_smoothed_log_is_c1_at_floor():
    floor = 1e-3
    at, slope_at = smoothed_log(np.array([floor]), floor)
    assert at[0] == pytest.approx(np.log(floor), abs=1e-15)
    assert slope_at[0] == pytest.approx(1.0 / floor)
    h = 1e-6 * floor
    below, slope_below = smoothed_log(np.array([floor - h]), floor)
    # one-sided difference quotient from below matches the slope at the floor
    assert (at[0] - below[0]) / h == pytest.approx(slope_at[0], rel=1e-5)
    assert slope_below[0] == pytest.approx(slope_at[0], rel=1e-5)
    value, slope = smoothed_log(np.array([-1.0, 2.0]), floor)
    assert np.all(np.isfinite(value))
    assert slope[1] == pytest.approx(0.5)


def test_valid_patch_skips_repair():
    patch = BezierPatch(identity_net(4))
    outcome = repair_patch(patch, RepairConfig(), 2.0, 1.5)
    assert outcome.success
    assert not outcome.invoked
    assert outcome.patch is patch


def test_repair_fixes_single_tangles(caplog):
    cfg = RepairConfig()
    tangled = tangled_patches()
    outcomes = [repair_patch(patch, cfg, 2.0, 1.5) for patch in tangled]
    successes = [outcome for outcome in outcomes if outcome.success]
    assert len(successes) >= len(tangled) - 2
    assert outcomes[0].success and outcomes[4].success
    for patch, outcome in zip(tangled, outcomes):
        assert outcome.invoked
        mask = ~interior_mask(patch.degree)
        assert np.array_equal(outcome.patch.net[mask], patch.net[mask])
        if outcome.success:
            assert jacobian_coeffs(outcome.patch).min > 0.0
            assert outcome.min_coefficient > 0.0
        else:
            assert 'no strictly valid net' in caplog.text


def test_repair_config_validation():
    with pytest.raises(DomainError):
        RepairConfig(decrease=1.5)
    with pytest.raises(DomainError):
        RepairConfig(initial_scale=0.0)
