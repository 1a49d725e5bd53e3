"""
Pipeline configuration model
Every tunable of the parameterization pipeline with validated defaults
"""

import hashlib
import json
from typing import Optional

from pydantic import ConfigDict, Field, field_validator

from app.models.base import TolerantModel
from config import (
    BARRIER_DECREASE, BARRIER_INITIAL_SCALE, BARRIER_STAGES, DEFAULT_EPSILON, DEFAULT_GRID,
    DEFAULT_OMEGA1, DEFAULT_OMEGA2, DEFAULT_OMEGA3, DEFAULT_SEED, DEFAULT_SIGMA1, DEFAULT_SIGMA2,
    DEFAULT_SMOOTHING_TOLERANCE, DEFAULT_TAU1, DEFAULT_TAU2, LBFGS_MAX_ITERATIONS, LBFGS_MEMORY,
    LBFGS_TOLERANCE, MIN_PATCH_DEGREE, REPAIR_MAX_ITERATIONS, REPAIR_RESTARTS, REPAIR_TOLERANCE,
    SMOOTHING_MAX_ITERATIONS, VALIDITY_RESTARTS, WEIGHT_PRESETS,
)


class PipelineConfig(TolerantModel):
    """All parameters of a pipeline run; defaults are the 'default' weight preset."""

    model_config = ConfigDict(validate_assignment=True)

    # Segmentation objective
    sigma1: float = Field(DEFAULT_SIGMA1, gt=0)
    sigma2: float = Field(DEFAULT_SIGMA2, gt=0)
    omega1: float = Field(DEFAULT_OMEGA1, gt=0)
    omega2: float = Field(DEFAULT_OMEGA2, gt=0)
    omega3: float = Field(DEFAULT_OMEGA3, gt=0)

    # Inner-point energy
    tau1: float = Field(DEFAULT_TAU1, gt=0)
    tau2: float = Field(DEFAULT_TAU2, gt=0)

    # Topology
    epsilon: float = DEFAULT_EPSILON
    delta: float = DEFAULT_SMOOTHING_TOLERANCE
    smoothing_max_iterations: int = Field(SMOOTHING_MAX_ITERATIONS, gt=0)

    # Degree policy: None means max(4, highest input degree)
    degree: Optional[int] = None
    boundary_refinement: int = Field(0, ge=0, le=6)

    # L-BFGS
    lbfgs_memory: int = Field(LBFGS_MEMORY, gt=0)
    lbfgs_tolerance: float = Field(LBFGS_TOLERANCE, gt=0)
    lbfgs_max_iterations: int = Field(LBFGS_MAX_ITERATIONS, gt=0)
    validity_restarts: int = Field(VALIDITY_RESTARTS, ge=0)

    # Log-barrier repair (mu schedule)
    barrier_initial_scale: float = Field(BARRIER_INITIAL_SCALE, gt=0)
    barrier_decrease: float = Field(BARRIER_DECREASE, gt=0, lt=1)
    barrier_stages: int = Field(BARRIER_STAGES, gt=0)
    repair_max_iterations: int = Field(REPAIR_MAX_ITERATIONS, gt=0)
    repair_tolerance: float = Field(REPAIR_TOLERANCE, gt=0)
    repair_restarts: int = Field(REPAIR_RESTARTS, ge=0)

    # Sampling
    grid: int = Field(DEFAULT_GRID, ge=2)
    seed: int = DEFAULT_SEED

    @field_validator('epsilon')
    @classmethod
    def _check_epsilon(cls, value: float) -> float:
        if not 0.0 < value <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        return value

    @field_validator('delta')
    @classmethod
    def _check_delta(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        return value

    @field_validator('degree')
    @classmethod
    def _check_degree(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and not MIN_PATCH_DEGREE <= value <= 14:
            raise ValueError(f"degree must lie in [{MIN_PATCH_DEGREE}, 14]")
        return value

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "PipelineConfig":
        """Build a config from a named weight row; other fields keep defaults."""
        if name not in WEIGHT_PRESETS:
            raise ValueError(f"unknown preset '{name}', expected one of {sorted(WEIGHT_PRESETS)}")
        sigma1, sigma2, omega1, omega2, omega3, tau1, tau2 = WEIGHT_PRESETS[name]
        values = dict(sigma1=sigma1, sigma2=sigma2, omega1=omega1, omega2=omega2,
                      omega3=omega3, tau1=tau1, tau2=tau2)
        values.update(overrides)
        return cls(**values)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.model_dump(), sort_keys=True)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
