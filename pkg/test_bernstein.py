#!/usr/bin/env python3
"""
Tests for the Bernstein polynomial kernel
"""

import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.services.bernstein import (
    BINOMIAL, BezierCurve, Polynomial1D, bernstein_basis, bernstein_eval, curve_degree_elevate,
    curve_derivative, curve_split, curve_split_uniform, derivative_gram, difference_matrix,
    green_coefficients, line_curve, poly_integral, poly_product, tensor_product,
)
from app.services.errors import DomainError

SAMPLES = np.linspace(0.0, 1.0, 101)


def test_partition_of_unity():
    for n in range(0, 13):
        assert_allclose(bernstein_basis(n, SAMPLES).sum(axis=1), 1.0, atol=1e-12)


def test_basis_values():
    assert bernstein_eval(0, 3, 0.0) == 1.0
    assert bernstein_eval(3, 3, 1.0) == 1.0
    assert bernstein_eval(1, 2, 0.5) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        bernstein_eval(4, 3, 0.5)


def test_binomial_table():
    assert BINOMIAL(10, 3) == 120.0
    assert BINOMIAL(5, 7) == 0.0
    with pytest.raises(DomainError):
        BINOMIAL(29, 1)


def test_product_matches_pointwise_product():
    rng = np.random.default_rng(7)
    for l1, l2 in [(1, 1), (3, 4), (6, 6), (12, 10)]:
        R = Polynomial1D(rng.normal(size=l1 + 1))
        S = Polynomial1D(rng.normal(size=l2 + 1))
        product = poly_product(R, S)
        assert product.degree == l1 + l2
        assert_allclose(product.evaluate(SAMPLES), R.evaluate(SAMPLES) * S.evaluate(SAMPLES), atol=1e-12)


def test_integral_of_basis():
    for n in range(0, 13):
        for i in range(n + 1):
            assert poly_integral(Polynomial1D.basis(i, n)) == pytest.approx(1.0 / (n + 1), abs=1e-15)


def test_integral_against_quadrature():
    rng = np.random.default_rng(3)
    poly = Polynomial1D(rng.normal(size=9))
    nodes, weights = np.polynomial.legendre.leggauss(8)
    exact = 0.5 * np.sum(weights * poly.evaluate(0.5 * (nodes + 1.0)))
    assert poly_integral(poly) == pytest.approx(exact, abs=1e-12)


def test_degree_elevation_keeps_image():
    rng = np.random.default_rng(11)
    for n in range(1, 9):
        curve = BezierCurve(rng.normal(size=(n + 1, 2)))
        elevated = curve_degree_elevate(curve, 12)
        assert elevated.degree == 12
        assert_allclose(elevated.evaluate(SAMPLES), curve.evaluate(SAMPLES), atol=1e-12)
        assert np.array_equal(elevated.start, curve.start)
        assert np.array_equal(elevated.end, curve.end)
    with pytest.raises(DomainError):
        curve_degree_elevate(BezierCurve(np.zeros((5, 2))), 3)


def test_split_halves_cover_curve():
    rng = np.random.default_rng(5)
    curve = BezierCurve(rng.normal(size=(6, 2)))
    left, right = curve_split(curve, 0.3)
    t = np.linspace(0.0, 1.0, 21)
    assert_allclose(left.evaluate(t), curve.evaluate(0.3 * t), atol=1e-12)
    assert_allclose(right.evaluate(t), curve.evaluate(0.3 + 0.7 * t), atol=1e-12)
    assert np.array_equal(left.end, right.start)
    with pytest.raises(DomainError):
        curve_split(curve, 1.0)


def test_uniform_split_shares_endpoints():
    curve = BezierCurve(np.array([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0], [4.0, 0.0]]))
    parts = curve_split_uniform(curve, 4)
    assert len(parts) == 4
    for first, second in zip(parts, parts[1:]):
        assert np.array_equal(first.end, second.start)
    assert_allclose(parts[2].start, curve.evaluate(0.5)[0], atol=1e-12)


def test_hodograph_matches_finite_difference():
    rng = np.random.default_rng(2)
    curve = BezierCurve(rng.normal(size=(7, 2)))
    h = 1e-6
    t = np.array([0.2, 0.5, 0.8])
    numeric = (curve.evaluate(t + h) - curve.evaluate(t - h)) / (2 * h)
    assert_allclose(curve_derivative(curve).evaluate(t), numeric, atol=1e-6)


def test_difference_matrix_second_order():
    coeffs = np.random.default_rng(4).normal(size=7)
    direct = Polynomial1D(difference_matrix(6, 2) @ coeffs)
    once = Polynomial1D(difference_matrix(5, 1) @ (difference_matrix(6, 1) @ coeffs))
    assert_allclose(direct.coeffs, once.coeffs, atol=1e-12)


def test_derivative_gram_integrates_square():
    coeffs = np.random.default_rng(8).normal(size=6)
    derivative = Polynomial1D(difference_matrix(5, 1) @ coeffs)
    expected = poly_integral(poly_product(derivative, derivative))
    assert coeffs @ derivative_gram(5, 1) @ coeffs == pytest.approx(expected, rel=1e-12)


def test_tensor_product_pointwise():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(4, 3))
    B = rng.normal(size=(3, 5))
    C = tensor_product(A, B)
    assert C.shape == (6, 7)
    u = np.linspace(0, 1, 7)
    v = np.linspace(0, 1, 5)

    def grid(coeffs, u, v):
        return bernstein_basis(coeffs.shape[0] - 1, u) @ coeffs @ bernstein_basis(coeffs.shape[1] - 1, v).T

    assert_allclose(grid(C, u, v), grid(A, u, v) * grid(B, u, v), atol=1e-12)


def test_green_coefficients_square_area():
    corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    n = 4
    total = 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        c, d = green_coefficients(line_curve(a, b, n).control_points)
        total += (np.sum(c) - np.sum(d)) / (4.0 * n)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_bezier_curve_rejects_bad_shape():
    with pytest.raises(DomainError):
        BezierCurve(np.zeros((3, 3)))
    with pytest.raises(DomainError):
        BezierCurve(np.array([[0.0, np.nan]]))
