"""
Neighbor graph and tangent bundle types.
"""
from dataclasses import dataclass, field

import numpy as np

from models.constants import Metric


@dataclass(eq=False)
class NeighborGraph:
    """k-nearest-neighbor lists, sorted by ascending distance with ties by ascending index."""
    k: int
    metric: Metric
    edges: list
    distances: np.ndarray = None

    def pairs(self):
        """(anchor, neighbor) pairs in anchor order, then neighbor-list order."""
        return [(anchor, neighbor) for anchor, neighbors in enumerate(self.edges) for neighbor in neighbors]

    def to_dict(self):
        return {
            "k": self.k,
            "metric": Metric(self.metric).value,
            "edges": [list(map(int, neighbors)) for neighbors in self.edges],
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(k=int(payload["k"]), metric=Metric(payload["metric"]),
                   edges=[list(map(int, neighbors)) for neighbors in payload["edges"]])


@dataclass(eq=False)
class TangentBundle:
    """Velocity vectors V_{i,0} at one anchor, one row per neighbor."""
    anchor_index: int
    vectors: np.ndarray
    neighbor_indices: list
    degenerate: list = field(default_factory=list)

    @property
    def row_count(self):
        return int(self.vectors.shape[0])

    @property
    def has_degenerate_rows(self):
        return any(self.degenerate)
