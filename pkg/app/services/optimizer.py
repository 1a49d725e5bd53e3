"""
Limited-memory BFGS
Two-loop recursion with Armijo backtracking, shared by the segmentation and repair stages.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from config import LBFGS_MAX_ITERATIONS, LBFGS_MEMORY, LBFGS_TOLERANCE

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]

ARMIJO_C1 = 1e-4
BACKTRACK_FACTOR = 0.5
MAX_BACKTRACKS = 50


@dataclass(frozen=True)
class TracePoint:
    iteration: int
    value: float
    gradient_norm: float
    step: float


@dataclass
class OptimizationResult:
    x: np.ndarray
    value: float
    initial_value: float
    gradient_norm: float
    iterations: int
    converged: bool
    line_search_failed: bool = False
    trace: List[TracePoint] = field(default_factory=list)


def two_loop_direction(gradient: np.ndarray, history: deque) -> np.ndarray:
    """-H g from the stored (s, y, rho) pairs, oldest first."""
    q = np.array(gradient, dtype=float)
    alphas = []
    for s, y, rho in reversed(history):
        alpha = rho * float(np.dot(s, q))
        q -= alpha * y
        alphas.append(alpha)
    if history:
        s, y, _ = history[-1]
        q *= float(np.dot(s, y) / np.dot(y, y))
    for (s, y, rho), alpha in zip(history, reversed(alphas)):
        beta = rho * float(np.dot(y, q))
        q += (alpha - beta) * s
    return -q


def minimize_lbfgs(objective: Objective, x0: np.ndarray, memory: int = LBFGS_MEMORY,
                   tolerance: float = LBFGS_TOLERANCE, max_iterations: int = LBFGS_MAX_ITERATIONS,
                   label: str = "L-BFGS") -> OptimizationResult:
    """
    Minimize objective(x) -> (value, gradient) starting from x0.

    Converges when the gradient infinity norm drops below tolerance * (1 + |F(x0)|).
    A line search that cannot find sufficient decrease ends the run with the best
    point so far and a warning; the returned value never exceeds F(x0).
    """
    x = np.array(x0, dtype=float)
    value, gradient = objective(x)
    initial = float(value)
    threshold = tolerance * (1.0 + abs(initial))
    history: deque = deque(maxlen=memory)
    trace: List[TracePoint] = [TracePoint(0, initial, float(np.max(np.abs(gradient), initial=0.0)), 0.0)]
    failed = False
    iteration = 0

    for iteration in range(1, max_iterations + 1):
        gradient_norm = float(np.max(np.abs(gradient), initial=0.0))
        if gradient_norm < threshold:
            iteration -= 1
            break
        direction = two_loop_direction(gradient, history)
        slope = float(np.dot(gradient, direction))
        if slope >= 0.0:
            history.clear()
            direction = -gradient
            slope = -float(np.dot(gradient, gradient))
        step = 1.0 if history else min(1.0, 1.0 / max(gradient_norm, 1e-300))

        accepted = False
        for _ in range(MAX_BACKTRACKS):
            candidate = x + step * direction
            candidate_value, candidate_gradient = objective(candidate)
            if np.isfinite(candidate_value) and candidate_value <= value + ARMIJO_C1 * step * slope:
                accepted = True
                break
            step *= BACKTRACK_FACTOR
        if not accepted:
            failed = True
            logger.warning(f"{label}: line search failed at iteration {iteration}, "
                           f"returning best point (F = {value:.6g})")
            iteration -= 1
            break

        s = candidate - x
        y = candidate_gradient - gradient
        curvature = float(np.dot(s, y))
        if curvature > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            history.append((s, y, 1.0 / curvature))
        x, value, gradient = candidate, float(candidate_value), candidate_gradient
        trace.append(TracePoint(iteration, value, float(np.max(np.abs(gradient), initial=0.0)), step))
        logger.debug(f"{label} iteration {iteration}: F = {value:.10g}, |g| = {trace[-1].gradient_norm:.3e}")
    else:
        logger.warning(f"{label}: iteration cap {max_iterations} reached (F = {value:.6g})")

    final_norm = float(np.max(np.abs(gradient), initial=0.0))
    return OptimizationResult(x=x, value=float(value), initial_value=initial, gradient_norm=final_norm,
                              iterations=iteration, converged=final_norm < threshold,
                              line_search_failed=failed, trace=trace)
