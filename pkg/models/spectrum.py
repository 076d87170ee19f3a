"""
Spectral reports of tangent bundles and the aggregated intrinsic dimension.
"""
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.constants import Aggregation


class SpectrumReport(BaseModel):
    """Singular values of one anchor's tangent bundle and the local ID read from them."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    anchor_index: int
    singular_values: List[float]
    local_id: int = Field(ge=0)
    gap_ratio: float

    @model_validator(mode="after")
    def _check_spectrum(self):
        values = self.singular_values
        if any(v < 0 for v in values):
            raise ValueError("singular values must be nonnegative")
        if any(a < b for a, b in zip(values, values[1:])):
            raise ValueError("singular values must be sorted nonincreasing")
        if self.local_id > len(values):
            raise ValueError("local_id exceeds the number of singular values")
        return self

    def ratios(self):
        """sigma_j / sigma_1 for every j (zeros for an all-zero bundle)."""
        leading = self.singular_values[0] if self.singular_values else 0.0
        if leading <= 0:
            return [0.0 for _ in self.singular_values]
        return [value / leading for value in self.singular_values]


class IdEstimate(BaseModel):
    """Global intrinsic dimension M with the per-point reports it was aggregated from."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    global_id: int = Field(ge=0)
    per_point: List[SpectrumReport]
    aggregation: Aggregation = Aggregation.MODE
    baseline_pca_id: Optional[int] = None

    @property
    def local_ids(self):
        return [report.local_id for report in self.per_point]
