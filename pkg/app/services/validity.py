"""
Patch validity
The Jacobian of a degree-n patch is a degree-(2n-1) tensor Bernstein polynomial; its
coefficients bound it from both sides, so all-positive coefficients certify injectivity.
Invalid patches are repaired by a log barrier on those coefficients over the interior points.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.signal import correlate2d

from config import (
    BARRIER_DECREASE, BARRIER_FLOOR, BARRIER_INITIAL_SCALE, BARRIER_STAGES, DEFAULT_SEED,
    LBFGS_MEMORY, REPAIR_MAX_ITERATIONS, REPAIR_RESTARTS, REPAIR_TOLERANCE,
)
from app.services.bernstein import BINOMIAL, bernstein_basis, tensor_product
from app.services.errors import DomainError
from app.services.optimizer import minimize_lbfgs
from app.services.patchfit import BezierPatch, energy_gram, interior_mask

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class JacobianField:
    """Bernstein coefficients of x_u y_v - x_v y_u, shape (2n, 2n)."""

    coefficients: np.ndarray

    @property
    def degree(self) -> int:
        return self.coefficients.shape[0] - 1

    @property
    def min(self) -> float:
        return float(self.coefficients.min())

    @property
    def max(self) -> float:
        return float(self.coefficients.max())

    @property
    def valid(self) -> bool:
        return self.min > 0.0

    def evaluate(self, u, v) -> np.ndarray:
        return bernstein_basis(self.degree, u) @ self.coefficients @ bernstein_basis(self.degree, v).T


def _hodographs(net: np.ndarray):
    n = net.shape[0] - 1
    du = n * np.diff(net, axis=0)
    dv = n * np.diff(net, axis=1)
    return du[..., 0], du[..., 1], dv[..., 0], dv[..., 1]


def _coefficients(net: np.ndarray) -> np.ndarray:
    xu, yu, xv, yv = _hodographs(net)
    return tensor_product(xu, yv) - tensor_product(xv, yu)


def jacobian_coeffs(patch: BezierPatch) -> JacobianField:
    coefficients = _coefficients(patch.net)
    coefficients.setflags(write=False)
    return JacobianField(coefficients)


def classify_patch(f: JacobianField) -> bool:
    """True when every coefficient is strictly positive."""
    return f.valid


def _product_adjoint(weights: np.ndarray, shape: Tuple[int, int], other: np.ndarray) -> np.ndarray:
    """Gradient of sum(weights * tensor_product(A, other)) with respect to A of the given shape."""
    p1, q1 = shape[0] - 1, shape[1] - 1
    p2, q2 = other.shape[0] - 1, other.shape[1] - 1
    scale_a = np.outer(BINOMIAL.row(p1), BINOMIAL.row(q1))
    scale_b = np.outer(BINOMIAL.row(p2), BINOMIAL.row(q2))
    scale_out = np.outer(BINOMIAL.row(p1 + p2), BINOMIAL.row(q1 + q2))
    return scale_a * correlate2d(weights / scale_out, other * scale_b, mode='valid')


def coefficient_gradient(net: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """d/dnet of sum(weights * alpha(net)), shape (n+1, n+1, 2)."""
    n = net.shape[0] - 1
    xu, yu, xv, yv = _hodographs(net)
    g_xu = _product_adjoint(weights, xu.shape, yv)
    g_yv = _product_adjoint(weights, yv.shape, xu)
    g_xv = -_product_adjoint(weights, xv.shape, yu)
    g_yu = -_product_adjoint(weights, yu.shape, xv)

    gradient = np.zeros_like(net)
    for c, (g_u, g_v) in enumerate(((g_xu, g_xv), (g_yu, g_yv))):
        gradient[1:, :, c] += n * g_u
        gradient[:-1, :, c] -= n * g_u
        gradient[:, 1:, c] += n * g_v
        gradient[:, :-1, c] -= n * g_v
    return gradient


def smoothed_log(alpha: np.ndarray, floor: float) -> Tuple[np.ndarray, np.ndarray]:
    """log(alpha) above `floor`, its second-order Taylor extension below; value and derivative."""
    below = alpha < floor
    safe = np.where(below, floor, alpha)
    value = np.log(safe)
    slope = 1.0 / safe
    d = alpha - floor
    value = np.where(below, np.log(floor) + d / floor - d * d / (2.0 * floor * floor), value)
    slope = np.where(below, 1.0 / floor - d / (floor * floor), slope)
    return value, slope


@dataclass(frozen=True)
class RepairConfig:
    """Barrier schedule: mu starts at initial_scale * E / count(alpha) and shrinks by `decrease` per stage."""

    initial_scale: float = BARRIER_INITIAL_SCALE
    decrease: float = BARRIER_DECREASE
    stages: int = BARRIER_STAGES
    max_iterations: int = REPAIR_MAX_ITERATIONS
    tolerance: float = REPAIR_TOLERANCE
    floor: float = BARRIER_FLOOR
    restarts: int = REPAIR_RESTARTS
    memory: int = LBFGS_MEMORY
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.initial_scale <= 0:
            raise DomainError("barrier weight must be positive")
        if not 0.0 < self.decrease < 1.0:
            raise DomainError("barrier decrease factor must lie in (0, 1)")

    @classmethod
    def from_pipeline(cls, cfg) -> "RepairConfig":
        return cls(initial_scale=cfg.barrier_initial_scale, decrease=cfg.barrier_decrease,
                   stages=cfg.barrier_stages, max_iterations=cfg.repair_max_iterations,
                   tolerance=cfg.repair_tolerance, restarts=cfg.repair_restarts,
                   memory=cfg.lbfgs_memory, seed=cfg.seed)


@dataclass
class RepairOutcome:
    patch: BezierPatch
    success: bool
    invoked: bool = True
    min_coefficient: float = 0.0
    energy: Optional[float] = None
    restarts: int = 0
    stage_values: list = field(default_factory=list)


def _barrier_objective(net: np.ndarray, mask: np.ndarray, gram: np.ndarray, mu: float, floor: float):
    n1 = net.shape[0]

    def evaluate(x: np.ndarray):
        full = np.array(net)
        full[mask] = x.reshape(-1, 2)
        flat = full.reshape(-1, 2)
        g_flat = gram @ flat
        energy = float(np.sum(flat * g_flat))
        alpha = _coefficients(full)
        log_value, log_slope = smoothed_log(alpha, floor)
        value = energy - mu * float(np.sum(log_value))
        gradient = 2.0 * g_flat.reshape(n1, n1, 2) + coefficient_gradient(full, -mu * log_slope)
        return value, gradient[mask].ravel()

    return evaluate


def repair_patch(patch: BezierPatch, cfg: RepairConfig, tau1: float, tau2: float) -> RepairOutcome:
    """
    Minimize E(r) - mu * sum(log alpha_ij) over the interior points for a decreasing
    sequence of mu. The two outer layers never move. When a run ends invalid, the
    interior points are pulled toward the patch centroid and the schedule restarts.
    """
    jacobian = jacobian_coeffs(patch)
    if jacobian.valid:
        return RepairOutcome(patch, True, invoked=False, min_coefficient=jacobian.min)

    n = patch.degree
    mask = interior_mask(n)
    gram = energy_gram(n, float(tau1), float(tau2))
    rng = np.random.default_rng(cfg.seed + max(patch.quad, 0))
    centroid = patch.net.reshape(-1, 2).mean(axis=0)
    best_net, best_min = np.array(patch.net), jacobian.min
    start = np.array(patch.net)
    stage_values = []

    for attempt in range(cfg.restarts + 1):
        if attempt:
            pull = rng.uniform(0.2, 0.6)
            start = np.array(best_net)
            start[mask] += pull * (centroid - start[mask])
            logger.info(f"Patch {patch.quad}: repair restart {attempt}, pulling interior {pull:.2f} toward centroid")
        flat = start.reshape(-1, 2)
        energy = max(float(np.sum(flat * (gram @ flat))), 1e-12)
        mu = cfg.initial_scale * energy / jacobian.coefficients.size
        x = start[mask].ravel()
        for stage in range(cfg.stages):
            result = minimize_lbfgs(_barrier_objective(start, mask, gram, mu, cfg.floor), x,
                                    cfg.memory, cfg.tolerance, cfg.max_iterations,
                                    label=f"repair patch {patch.quad} stage {stage}")
            x = result.x
            stage_values.append(result.value)
            mu *= cfg.decrease
        candidate = np.array(start)
        candidate[mask] = x.reshape(-1, 2)
        minimum = float(_coefficients(candidate).min())
        if minimum > best_min:
            best_net, best_min = candidate, minimum
        if minimum > 0.0:
            repaired = patch.with_net(candidate)
            flat = candidate.reshape(-1, 2)
            logger.info(f"Patch {patch.quad} repaired (min coefficient {minimum:.3e})")
            return RepairOutcome(repaired, True, min_coefficient=minimum,
                                 energy=float(np.sum(flat * (gram @ flat))),
                                 restarts=attempt, stage_values=stage_values)

    logger.warning(f"Patch {patch.quad}: no strictly valid net found after {cfg.restarts} restart(s) "
                   f"(best min coefficient {best_min:.3e})")
    flat = best_net.reshape(-1, 2)
    return RepairOutcome(patch.with_net(best_net), False, min_coefficient=best_min,
                         energy=float(np.sum(flat * (gram @ flat))),
                         restarts=cfg.restarts, stage_values=stage_values)
