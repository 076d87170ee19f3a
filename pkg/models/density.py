"""
Density-valued data points on a shared uniform 1-D grid.
"""
from dataclasses import dataclass, field

import numpy as np

from models.constants import UNIFORM_GRID_TOLERANCE
from models.errors import NonIncreasingGrid, NonUniformGrid, InvalidParameter


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid of abscissae shared by every sample of a data set."""
    nodes: np.ndarray
    spacing: float

    @classmethod
    def from_nodes(cls, nodes):
        """
        Build a grid from explicit nodes, validating monotonicity and uniform spacing.

        Args:
            nodes (array-like): Strictly increasing, equispaced abscissae

        Returns:
            Grid: The validated grid
        """
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidParameter("A grid needs at least two nodes")
        deltas = np.diff(nodes)
        if np.any(deltas <= 0):
            raise NonIncreasingGrid("Grid nodes must be strictly increasing")
        spacing = float((nodes[-1] - nodes[0]) / (nodes.size - 1))
        deviation = np.max(np.abs(deltas - spacing)) / spacing
        if deviation >= UNIFORM_GRID_TOLERANCE:
            raise NonUniformGrid(f"Grid spacing is not uniform (relative deviation {deviation:.3e})")
        nodes.setflags(write=False)
        return cls(nodes=nodes, spacing=spacing)

    @classmethod
    def uniform(cls, start, stop, step):
        """Grid start, start+step, ..., stop (stop included when it lies on the lattice)."""
        if step <= 0:
            raise InvalidParameter(f"Grid step must be positive, got {step}")
        if stop <= start:
            raise InvalidParameter(f"Grid stop ({stop}) must exceed start ({start})")
        count = int(round((stop - start) / step)) + 1
        return cls.from_nodes(start + step * np.arange(count))

    @property
    def size(self):
        return int(self.nodes.size)

    def same_as(self, other):
        return self is other or (self.size == other.size and np.array_equal(self.nodes, other.nodes))

    def mass(self, values):
        """Trapezoidal integral of nodal values."""
        return float(np.trapezoid(values, dx=self.spacing))


@dataclass(eq=False)
class DensitySample:
    """A data point f(x): nonnegative values on a grid with unit trapezoidal mass."""
    grid: Grid
    values: np.ndarray
    label: dict = field(default_factory=dict)
    clamped_mass: float = 0.0

    @property
    def mass(self):
        return self.grid.mass(self.values)

    def derivative(self):
        """f'(x) by second-order central differences, one-sided at the grid ends."""
        return np.gradient(self.values, self.grid.spacing)


@dataclass(eq=False)
class DataSet:
    """Samples sharing one grid; ambient dimension N equals the grid size."""
    grid: Grid
    samples: list

    def __post_init__(self):
        for sample in self.samples:
            if not sample.grid.same_as(self.grid):
                raise InvalidParameter("All samples of a data set must share its grid")

    @property
    def ambient_dim(self):
        return self.grid.size

    def __len__(self):
        return len(self.samples)

    def matrix(self):
        """Samples stacked row-wise, shape (count, N)."""
        if not self.samples:
            return np.empty((0, self.ambient_dim))
        return np.vstack([sample.values for sample in self.samples])

    def labels(self):
        return [dict(sample.label) for sample in self.samples]
