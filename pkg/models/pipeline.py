"""
Pipeline configuration and report models.
"""
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.constants import (Aggregation, AlphaMode, Layout, Metric, ModelInit, PlanOrientation,
                              TangentMethod)
from models.koopman import FitReport, OptimizerConfig
from models.spectrum import IdEstimate


class PipelineConfig(BaseModel):
    """
    Flat, documented configuration of one experiment.

    Either `dataset_path` points at a CSV matrix, or the Gaussian generator parameters
    (`means`, `sigmas`, grid bounds) describe the data set.
    """
    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    # dataset
    dataset_path: Optional[str] = None
    layout: Layout = Layout.GRID_HEADER
    grid_path: Optional[str] = None
    means: List[float] = Field(default_factory=lambda: [350.0 + 50.0 * i for i in range(7)])
    sigmas: List[float] = Field(default_factory=lambda: [20.0 * (i + 1) for i in range(5)])
    grid_start: float = 0.0
    grid_stop: float = 1000.0
    grid_step: float = Field(default=1.0, gt=0)
    clamp_tolerance: float = Field(default=0.01, ge=0, le=1)

    # transport and tangents
    k: int = Field(default=6, ge=1)
    metric: Metric = Metric.WASSERSTEIN2
    plan_orientation: PlanOrientation = PlanOrientation.REVERSE
    tangent_method: TangentMethod = TangentMethod.TRANSPORT
    ot_tolerance: float = Field(default=5e-2, gt=0)

    # intrinsic dimension
    rel_tol: float = Field(default=0.05, gt=0, lt=1)
    aggregation: Aggregation = Aggregation.MODE
    m: Optional[int] = Field(default=None, ge=1)

    # coordinates
    steps: int = Field(default=5000, ge=1)
    step_size: float = Field(default=1e-3, gt=0)
    barrier_beta: float = Field(default=1e-2, ge=0)
    barrier_eps: float = Field(default=1e-8, gt=0)
    barrier_decay: float = Field(default=0.5, gt=0, le=1)
    width: int = Field(default=64, ge=0)
    activation: str = "tanh"
    alpha_mode: AlphaMode = AlphaMode.REFIT
    init: ModelInit = ModelInit.CHART

    # execution
    workers: int = Field(default=4, ge=1)
    seed: int = Field(default=0, ge=0)
    out_dir: str = "output"

    @field_validator("means", "sigmas")
    @classmethod
    def _finite_list(cls, values):
        if any(v != v for v in values):
            raise ValueError("parameter lists must not contain NaN")
        return values

    @model_validator(mode="after")
    def _check_paths(self):
        if self.dataset_path is not None and not Path(self.dataset_path).exists():
            raise ValueError(f"dataset_path does not exist: {self.dataset_path}")
        if self.layout == Layout.SEPARATE_GRID:
            if self.dataset_path is None or self.grid_path is None:
                raise ValueError("layout 'separate-grid' requires dataset_path and grid_path")
            if not Path(self.grid_path).exists():
                raise ValueError(f"grid_path does not exist: {self.grid_path}")
        return self

    def optimizer_config(self):
        return OptimizerConfig(
            seed=self.seed,
            steps=self.steps,
            step_size=self.step_size,
            barrier_beta=self.barrier_beta,
            barrier_eps=self.barrier_eps,
            barrier_decay=self.barrier_decay,
            width=self.width,
            activation=self.activation,
            alpha_mode=self.alpha_mode,
            init=self.init,
        )


class PipelineReport(BaseModel):
    """Summary of a pipeline run; serialized to report.json."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    id_estimate: Optional[IdEstimate] = None
    fit: Optional[FitReport] = None
    embedding_path: Optional[str] = None
    m_used: Optional[int] = None
    timings: Dict[str, float] = Field(default_factory=dict)
    artifacts: Dict[str, str] = Field(default_factory=dict)
