"""
Transport plan between two density samples.
"""
from dataclasses import dataclass

import numpy as np

from models.density import Grid


@dataclass(eq=False)
class TransportPlan:
    """
    Discrete monotone map between two samples on a shared grid.

    The map satisfies f_target(x) = f_source(T(x)) * T'(x), i.e. T = F_source^-1 o F_target.
    `residual` is the largest violation of that identity over interior support nodes,
    divided by max f_target.
    """
    source_index: int
    target_index: int
    grid: Grid
    map_values: np.ndarray
    map_derivative: np.ndarray
    cost: float
    residual: float = 0.0
    support: np.ndarray = None
    source_values: np.ndarray = None

    @property
    def pair(self):
        return (self.source_index, self.target_index)

    def is_monotone(self):
        return bool(np.all(np.diff(self.map_values) >= 0) and np.all(self.map_derivative >= 0))
