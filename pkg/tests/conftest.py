"""
Shared fixtures: the 35-Gaussian toy data set, its neighbor graph, plans and bundles.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from api.dataset import gaussian_family, normalize
from api.tangent_bundle import all_bundles, build_graph, bundle_pairs
from api.transport1d import pairwise_plans
from models.density import DataSet, Grid

TOY_MEANS = [350.0, 400.0, 450.0, 500.0, 550.0, 600.0, 650.0]
TOY_SIGMAS = [20.0, 40.0, 60.0, 80.0, 100.0]


def gaussian_values(grid, mu, sigma):
    return np.exp(-0.5 * ((grid.nodes - mu) / sigma) ** 2)


@pytest.fixture(scope="session")
def toy_grid():
    return Grid.uniform(0, 1000, 1)


@pytest.fixture(scope="session")
def toy_dataset(toy_grid):
    return gaussian_family(TOY_MEANS, TOY_SIGMAS, toy_grid)


@pytest.fixture(scope="session")
def toy_graph(toy_dataset):
    return build_graph(toy_dataset, k=6, workers=4)


@pytest.fixture(scope="session")
def toy_plans(toy_dataset, toy_graph):
    plans = pairwise_plans(toy_dataset, bundle_pairs(toy_graph), workers=4)
    return {plan.pair: plan for plan in plans}


@pytest.fixture(scope="session")
def toy_bundles(toy_dataset, toy_graph, toy_plans):
    return all_bundles(toy_dataset, toy_graph, toy_plans, workers=4)


@pytest.fixture
def sample_on(toy_grid):
    """Factory for a normalized Gaussian sample on the toy grid."""
    def make(mu, sigma):
        return normalize(gaussian_values(toy_grid, mu, sigma), toy_grid, label={"mu": mu, "sigma": sigma})
    return make


@pytest.fixture
def small_dataset():
    """Six random positive samples on a 5-node grid."""
    grid = Grid.uniform(0, 4, 1)
    rng = np.random.default_rng(7)
    return DataSet(grid=grid, samples=[normalize(rng.uniform(0.5, 2.0, size=5), grid) for _ in range(6)])
