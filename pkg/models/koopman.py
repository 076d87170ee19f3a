"""
Types used by the Koopman Regularization optimizer.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from models.constants import AlphaMode, ModelInit
from models.errors import DimensionMismatch


@dataclass(eq=False)
class VectorFieldSamples:
    """Sampled dynamical system: points x and velocities P(x)."""
    points: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.points.shape != self.velocities.shape:
            raise DimensionMismatch(
                f"points {self.points.shape} and velocities {self.velocities.shape} differ in shape")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.velocities))):
            raise DimensionMismatch("vector field samples must be finite")

    @property
    def dim(self):
        return int(self.points.shape[1])

    def __len__(self):
        return int(self.points.shape[0])


@dataclass(eq=False)
class AlphaTable:
    """Coefficients alpha of each tangent row on the coordinate gradients, one array (rows, M) per bundle."""
    coefficients: list

    @property
    def width(self):
        return int(self.coefficients[0].shape[1]) if self.coefficients else 0

    def rows(self):
        if not self.coefficients:
            return np.empty((0, 0))
        return np.vstack(self.coefficients)

    def copy(self):
        return AlphaTable([block.copy() for block in self.coefficients])

    def is_finite(self):
        return all(np.all(np.isfinite(block)) for block in self.coefficients)


@dataclass(eq=False)
class CoordinateInputs:
    """Tangent bundles over a data set and the number of intrinsic coordinates to fit."""
    bundles: list
    ds: object
    output_dim: int


class OptimizerConfig(BaseModel):
    """Settings of the barrier-constrained gradient optimizer and the model architecture."""
    seed: int = 0
    steps: int = Field(default=5000, ge=1)
    step_size: float = Field(default=1e-3, gt=0)
    barrier_beta: float = Field(default=1e-2, ge=0)
    barrier_eps: float = Field(default=1e-8, gt=0)
    barrier_decay: float = Field(default=0.5, gt=0, le=1)
    decay_every: Optional[int] = Field(default=None, ge=1)
    width: int = Field(default=64, ge=0)
    activation: str = "tanh"
    alpha_mode: AlphaMode = AlphaMode.REFIT
    init: ModelInit = ModelInit.CHART
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    progress: bool = False

    def decay_interval(self):
        return self.decay_every or max(1, self.steps // 10)


class FitReport(BaseModel):
    """Outcome of an optimize() run."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    objective: str
    loss_history: List[float]
    barrier_weight_history: List[float]
    final_residual: float
    min_jacobian_sv: float
    best_step: int
    improved: bool
    barrier_warnings: int = 0
