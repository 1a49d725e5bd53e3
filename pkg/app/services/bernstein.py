"""
Bernstein polynomial kernel
Evaluation, products, integrals, degree elevation, subdivision and hodographs on [0, 1].
Every downstream formula (areas, energies, Jacobian coefficients) is assembled from these.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
from scipy.signal import convolve2d
from scipy.special import comb

from app.services.errors import DomainError

logger = logging.getLogger(__name__)

# Binomials up to this order are exact in float64
MAX_ORDER = 28

ArrayLike = Union[float, np.ndarray]


class BinomialTable:
    """Precomputed C(n, k) for 0 <= n <= max_order; zero whenever k < 0 or k > n."""

    def __init__(self, max_order: int = MAX_ORDER):
        self.max_order = max_order
        size = max_order + 1
        table = np.zeros((size, size))
        for n in range(size):
            for k in range(n + 1):
                table[n, k] = float(comb(n, k, exact=True))
        table.setflags(write=False)
        self._table = table

    def __call__(self, n: int, k: int) -> float:
        if n < 0 or n > self.max_order:
            raise DomainError(f"binomial order {n} outside [0, {self.max_order}]")
        if k < 0 or k > n:
            return 0.0
        return float(self._table[n, k])

    def row(self, n: int) -> np.ndarray:
        """C(n, 0..n) as a read-only array."""
        if n < 0 or n > self.max_order:
            raise DomainError(f"binomial order {n} outside [0, {self.max_order}]")
        return self._table[n, :n + 1]


BINOMIAL = BinomialTable()


def bernstein_eval(i: int, n: int, t: float) -> float:
    """
    Evaluate B_i^n(t) = C(n,i) t^i (1-t)^(n-i).

    Args:
        i: basis index, 0 <= i <= n
        n: degree
        t: parameter in [0, 1]

    Returns:
        Basis value
    """
    if n < 0 or i < 0 or i > n:
        raise DomainError(f"Bernstein index {i} out of range for degree {n}")
    return BINOMIAL(n, i) * t ** i * (1.0 - t) ** (n - i)


def bernstein_basis(n: int, t: ArrayLike) -> np.ndarray:
    """All degree-n basis functions at the parameters t, shape (len(t), n+1)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    i = np.arange(n + 1)
    return BINOMIAL.row(n)[None, :] * t[:, None] ** i[None, :] * (1.0 - t[:, None]) ** (n - i)[None, :]


@dataclass(frozen=True)
class Polynomial1D:
    """Scalar polynomial in the Bernstein basis of degree len(coeffs)-1."""

    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float).reshape(-1)
        if coeffs.size == 0:
            raise DomainError("polynomial needs at least one coefficient")
        if not np.all(np.isfinite(coeffs)):
            raise DomainError("polynomial coefficients must be finite")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    @classmethod
    def basis(cls, i: int, n: int) -> "Polynomial1D":
        if i < 0 or i > n:
            raise DomainError(f"Bernstein index {i} out of range for degree {n}")
        coeffs = np.zeros(n + 1)
        coeffs[i] = 1.0
        return cls(coeffs)

    def evaluate(self, t: ArrayLike) -> np.ndarray:
        return bernstein_basis(self.degree, t) @ self.coeffs


def product_weights(l1: int, l2: int) -> np.ndarray:
    """W[r, s] = C(l1,r) C(l2,s) / C(l1+l2, r+s), the coefficient weights of a Bernstein product."""
    return _product_weights(l1, l2)


@lru_cache(maxsize=None)
def _product_weights(l1: int, l2: int) -> np.ndarray:
    if l1 + l2 > MAX_ORDER:
        raise DomainError(f"product degree {l1 + l2} exceeds {MAX_ORDER}")
    r = np.arange(l1 + 1)
    s = np.arange(l2 + 1)
    full = BINOMIAL.row(l1 + l2)
    weights = BINOMIAL.row(l1)[:, None] * BINOMIAL.row(l2)[None, :] / full[r[:, None] + s[None, :]]
    weights.setflags(write=False)
    return weights


def poly_product(R: Polynomial1D, S: Polynomial1D) -> Polynomial1D:
    """
    Product of two Bernstein polynomials, degree l1 + l2.

    c_i = sum_r C(l1,r) C(l2,i-r) / C(l1+l2,i) * a_r * b_(i-r); computed as a
    convolution of the binomially scaled coefficient lists.
    """
    l1, l2 = R.degree, S.degree
    if l1 + l2 > MAX_ORDER:
        raise DomainError(f"product degree {l1 + l2} exceeds {MAX_ORDER}")
    scaled = np.convolve(R.coeffs * BINOMIAL.row(l1), S.coeffs * BINOMIAL.row(l2))
    return Polynomial1D(scaled / BINOMIAL.row(l1 + l2))


def poly_integral(S: Polynomial1D) -> float:
    """Integral over [0, 1]: every degree-m basis function integrates to 1/(m+1)."""
    return float(np.sum(S.coeffs) / (S.degree + 1))


def tensor_product(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """
    Product of two tensor Bernstein polynomials given as coefficient grids.

    Args:
        A: coefficients of shape (p1+1, q1+1)
        B: coefficients of shape (p2+1, q2+1)

    Returns:
        Coefficients of shape (p1+p2+1, q1+q2+1)
    """
    p1, q1 = A.shape[0] - 1, A.shape[1] - 1
    p2, q2 = B.shape[0] - 1, B.shape[1] - 1
    if p1 + p2 > MAX_ORDER or q1 + q2 > MAX_ORDER:
        raise DomainError("tensor product degree exceeds the binomial table")
    scaled_a = A * np.outer(BINOMIAL.row(p1), BINOMIAL.row(q1))
    scaled_b = B * np.outer(BINOMIAL.row(p2), BINOMIAL.row(q2))
    full = convolve2d(scaled_a, scaled_b)
    return full / np.outer(BINOMIAL.row(p1 + p2), BINOMIAL.row(q1 + q2))


@lru_cache(maxsize=None)
def bernstein_gram(a: int, b: int) -> np.ndarray:
    """G[i, k] = integral of B_i^a * B_k^b over [0, 1]."""
    gram = product_weights(a, b) / (a + b + 1)
    gram = np.array(gram)
    gram.setflags(write=False)
    return gram


@lru_cache(maxsize=None)
def difference_matrix(n: int, order: int = 1) -> np.ndarray:
    """
    Linear map from degree-n coefficients to the coefficients of the order-th derivative.

    Includes the falling-factorial factor n (n-1) ... (n-order+1).
    """
    if order > n:
        raise DomainError(f"derivative order {order} exceeds degree {n}")
    matrix = np.eye(n + 1)
    for k in range(order):
        m = n - k
        step = np.zeros((m, m + 1))
        idx = np.arange(m)
        step[idx, idx] = -m
        step[idx, idx + 1] = m
        matrix = step @ matrix
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=None)
def derivative_gram(n: int, order: int) -> np.ndarray:
    """K with integral of (d^order f)^2 = c^T K c for a degree-n coefficient vector c."""
    if order == 0:
        return bernstein_gram(n, n)
    diff = difference_matrix(n, order)
    gram = diff.T @ bernstein_gram(n - order, n - order) @ diff
    gram = 0.5 * (gram + gram.T)
    gram.setflags(write=False)
    return gram


@lru_cache(maxsize=None)
def area_weights(n: int) -> np.ndarray:
    """
    W[r, m] = C(n,r) C(n-1,m) / C(2n-1, r+m), the weights pairing a coordinate
    control point r with a hodograph control point m.
    """
    return product_weights(n, n - 1)


@dataclass(frozen=True)
class BezierCurve:
    """Planar Bézier curve given by (n+1) control points."""

    control_points: np.ndarray

    def __post_init__(self):
        points = np.array(self.control_points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 1:
            raise DomainError(f"control points must have shape (n+1, 2), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise DomainError("control points must be finite")
        points.setflags(write=False)
        object.__setattr__(self, "control_points", points)

    @property
    def degree(self) -> int:
        return self.control_points.shape[0] - 1

    @property
    def start(self) -> np.ndarray:
        return self.control_points[0]

    @property
    def end(self) -> np.ndarray:
        return self.control_points[-1]

    def evaluate(self, t: ArrayLike) -> np.ndarray:
        """Points at parameters t, shape (len(t), 2)."""
        return bernstein_basis(self.degree, t) @ self.control_points

    def reversed(self) -> "BezierCurve":
        return BezierCurve(self.control_points[::-1].copy())

    def chord_length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BezierCurve):
            return NotImplemented
        return self.control_points.shape == other.control_points.shape and bool(
            np.array_equal(self.control_points, other.control_points))

    def __hash__(self) -> int:
        return hash(self.control_points.tobytes())


def line_curve(start, end, degree: int) -> BezierCurve:
    """Straight segment of the given degree with equally spaced control points."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    t = np.linspace(0.0, 1.0, degree + 1)[:, None]
    points = (1.0 - t) * start[None, :] + t * end[None, :]
    points[0] = start
    points[-1] = end
    return BezierCurve(points)


def curve_degree_elevate(c: BezierCurve, target: int) -> BezierCurve:
    """
    Raise the degree of a curve without changing its image.

    Args:
        c: curve of degree n
        target: new degree, target >= n

    Returns:
        Curve of degree target with identical endpoints
    """
    if target < c.degree:
        raise DomainError(f"cannot elevate degree {c.degree} down to {target}")
    if target > MAX_ORDER:
        raise DomainError(f"degree {target} exceeds {MAX_ORDER}")
    points = np.array(c.control_points)
    for n in range(c.degree, target):
        i = np.arange(1, n + 1)[:, None] / (n + 1)
        elevated = np.empty((n + 2, 2))
        elevated[0] = points[0]
        elevated[-1] = points[-1]
        elevated[1:-1] = i * points[:-1] + (1.0 - i) * points[1:]
        points = elevated
    return BezierCurve(points)


def curve_split(c: BezierCurve, t: float) -> Tuple[BezierCurve, BezierCurve]:
    """de Casteljau split at t; the shared point is the same float in both halves."""
    if not 0.0 < t < 1.0:
        raise DomainError(f"split parameter {t} outside (0, 1)")
    n = c.degree
    work = np.array(c.control_points)
    left = np.empty_like(work)
    right = np.empty_like(work)
    left[0] = work[0]
    right[n] = work[n]
    for r in range(1, n + 1):
        work[:n + 1 - r] = (1.0 - t) * work[:n + 1 - r] + t * work[1:n + 2 - r]
        left[r] = work[0]
        right[n - r] = work[n - r]
    right[0] = left[n]
    return BezierCurve(left), BezierCurve(right)


def curve_split_uniform(c: BezierCurve, pieces: int) -> list:
    """Split into `pieces` sub-curves at equally spaced parameters."""
    if pieces < 1:
        raise DomainError("piece count must be positive")
    result = []
    rest = c
    for k in range(pieces, 1, -1):
        head, rest = curve_split(rest, 1.0 / k)
        result.append(head)
    result.append(rest)
    return result


def curve_derivative(c: BezierCurve) -> BezierCurve:
    """Hodograph: degree n-1 with control points n (P_{i+1} - P_i)."""
    if c.degree < 1:
        raise DomainError("degree-0 curve has no hodograph")
    return BezierCurve(c.degree * np.diff(c.control_points, axis=0))


def green_coefficients(control_points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Degree-(2n-1) Bernstein coefficients of x*y' and y*x' for one curve.

    c_j = sum_r C(n,r) C(n-1,j-r) / C(2n-1,j) * x_r * y'_(j-r), with y' the hodograph
    legs n (y_(l+1) - y_l); d_j is the same with x and y swapped. Out-of-range
    binomials vanish, so the sum over r runs unclamped.
    """
    points = np.asarray(control_points, dtype=float)
    n = points.shape[0] - 1
    legs = n * np.diff(points, axis=0)
    weights = area_weights(n)
    c = np.zeros(2 * n)
    d = np.zeros(2 * n)
    for r in range(n + 1):
        for m in range(n):
            c[r + m] += weights[r, m] * points[r, 0] * legs[m, 1]
            d[r + m] += weights[r, m] * points[r, 1] * legs[m, 0]
    return c, d


@lru_cache(maxsize=None)
def area_form(n: int) -> np.ndarray:
    """K such that the signed-area contribution of a degree-n curve is (X^T K Y - Y^T K X) / (4n)."""
    form = area_weights(n) @ difference_matrix(n, 1)
    form = np.array(form)
    form.setflags(write=False)
    return form
