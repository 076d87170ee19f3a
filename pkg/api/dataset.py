"""
Data set operations: the Gaussian toy family, normalization of raw vectors into
densities, and CSV persistence of data matrices.
"""
import logging
from itertools import product
from pathlib import Path

import numpy as np
import pandas as pd

from models.constants import Layout
from models.density import DataSet, DensitySample, Grid
from models.errors import (AllZeroInput, ClampedMassExceedsTolerance, EmptyParameterList,
                           InvalidParameter, NonPositiveSigma, ParseFailure, RaggedRows)

logger = logging.getLogger(__name__)

DEFAULT_CLAMP_TOLERANCE = 0.01


def gaussian_family(means, sigmas, grid):
    """
    Sample one Gaussian density per (mean, sigma) pair on the grid.

    Pairs follow the Cartesian product order (means outer, sigmas inner). Each sample is
    renormalized to unit trapezoidal mass and labelled with its parameters.

    Args:
        means (list of float): Means mu
        sigmas (list of float): Standard deviations sigma, all positive
        grid (Grid): Shared uniform grid

    Returns:
        DataSet: len(means) * len(sigmas) samples
    """
    means = [float(m) for m in means]
    sigmas = [float(s) for s in sigmas]
    if not means or not sigmas:
        raise EmptyParameterList("gaussian_family needs at least one mean and one sigma")
    bad = [s for s in sigmas if not s > 0]
    if bad:
        raise NonPositiveSigma(f"Sigmas must be positive, got {bad}")

    x = grid.nodes
    samples = []
    for mu, sigma in product(means, sigmas):
        values = np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (np.sqrt(2.0 * np.pi) * sigma)
        sample = normalize(values, grid)
        sample.label = {"mu": mu, "sigma": sigma}
        samples.append(sample)

    logger.info(f"Generated {len(samples)} Gaussian samples on a grid of {grid.size} nodes")
    return DataSet(grid=grid, samples=samples)


def normalize(values, grid, clamp_tolerance=DEFAULT_CLAMP_TOLERANCE, label=None):
    """
    Turn a raw vector into a density sample.

    Negative entries are clamped to zero; the clamped fraction of the absolute mass is
    recorded on the sample and must not exceed `clamp_tolerance`. The result is divided
    by its trapezoidal integral.

    Args:
        values (array-like): Raw values, one per grid node
        grid (Grid): Grid of the sample
        clamp_tolerance (float): Largest admissible clamped-mass fraction
        label (dict, optional): Metadata carried by the sample

    Returns:
        DensitySample: Unit-mass, nonnegative sample
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.size,):
        raise InvalidParameter(f"Vector of length {values.size} does not match grid size {grid.size}")
    if not np.all(np.isfinite(values)):
        raise InvalidParameter("Sample values must be finite")
    if not np.any(values != 0):
        raise AllZeroInput("Cannot normalize an all-zero vector")

    clamped_fraction = 0.0
    negative = values < 0
    if np.any(negative):
        total = grid.mass(np.abs(values))
        clamped_fraction = grid.mass(np.where(negative, -values, 0.0)) / total if total > 0 else 1.0
        if clamped_fraction > clamp_tolerance:
            raise ClampedMassExceedsTolerance(
                f"Clamped mass fraction {clamped_fraction:.3e} exceeds tolerance {clamp_tolerance:.3e}")
        logger.warning(f"Clamped {int(negative.sum())} negative entries "
                       f"(mass fraction {clamped_fraction:.3e})")
        values = np.where(negative, 0.0, values)

    mass = grid.mass(values)
    if not mass > 0:
        raise AllZeroInput("Vector has no positive mass after clamping")

    return DensitySample(grid=grid, values=values / mass, label=dict(label or {}),
                         clamped_mass=clamped_fraction)


def _labels_path(path):
    path = Path(path)
    return path.with_name(f"{path.stem}_labels.csv")


def _parse_label_value(raw):
    try:
        return float(raw)
    except (TypeError, ValueError):
        return raw


def _read_numeric_csv(path):
    """Read a header-less numeric CSV into a 2-D float array, detecting ragged rows."""
    try:
        frame = pd.read_csv(path, header=None, dtype=float, skip_blank_lines=True,
                            float_precision="round_trip")
    except pd.errors.ParserError as e:
        raise RaggedRows(f"Rows of unequal length in {path}: {e}") from e
    except (ValueError, pd.errors.EmptyDataError) as e:
        raise ParseFailure(f"Could not parse {path}: {e}") from e

    matrix = frame.to_numpy(dtype=float)
    if np.isnan(matrix).any():
        raise RaggedRows(f"Rows of unequal length (or empty fields) in {path}")
    return matrix


def load_matrix(path, layout=Layout.GRID_HEADER, grid_path=None, clamp_tolerance=DEFAULT_CLAMP_TOLERANCE):
    """
    Load a data set from CSV.

    Args:
        path (str or Path): Data CSV, one sample per row
        layout (Layout): 'grid-header' (first row = grid nodes) or 'separate-grid'
        grid_path (str or Path, optional): Grid CSV (single row) for the 'separate-grid' layout
        clamp_tolerance (float): Passed to normalize() for every row

    Returns:
        DataSet: Normalized samples, with labels from the sidecar file when present
    """
    layout = Layout(layout)
    path = Path(path)
    logger.info(f"Loading data matrix from {path} ({layout.value})")

    matrix = _read_numeric_csv(path)
    if layout == Layout.GRID_HEADER:
        if matrix.shape[0] < 1:
            raise ParseFailure(f"{path} has no grid row")
        nodes, rows = matrix[0], matrix[1:]
    else:
        if grid_path is None:
            raise InvalidParameter("layout 'separate-grid' needs grid_path")
        grid_matrix = _read_numeric_csv(grid_path)
        nodes, rows = grid_matrix.reshape(-1), matrix
        if rows.shape[1] != nodes.size:
            raise RaggedRows(f"Rows have {rows.shape[1]} values but the grid has {nodes.size} nodes")

    grid = Grid.from_nodes(nodes)

    labels = {}
    labels_file = _labels_path(path)
    if labels_file.exists():
        frame = pd.read_csv(labels_file, dtype=str, keep_default_na=False)
        for row in frame.itertuples(index=False):
            labels.setdefault(int(row.sample_index), {})[row.key] = _parse_label_value(row.value)

    samples = [normalize(row, grid, clamp_tolerance=clamp_tolerance, label=labels.get(i))
               for i, row in enumerate(rows)]
    logger.info(f"Loaded {len(samples)} samples with N={grid.size}")
    return DataSet(grid=grid, samples=samples)


def save_matrix(ds, path):
    """
    Write a data set as CSV: first row grid nodes, then one row per sample.
    Labels go to a '<stem>_labels.csv' sidecar with columns sample_index, key, value.

    Args:
        ds (DataSet): Data set to persist
        path (str or Path): Destination CSV

    Returns:
        Path: The written data file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(np.vstack([ds.grid.nodes, ds.matrix()])).to_csv(path, header=False, index=False)

    records = [
        {"sample_index": i, "key": key, "value": repr(value) if isinstance(value, float) else str(value)}
        for i, sample in enumerate(ds.samples)
        for key, value in sample.label.items()
    ]
    if records:
        pd.DataFrame(records, columns=["sample_index", "key", "value"]).to_csv(_labels_path(path), index=False)

    logger.info(f"Saved {len(ds)} samples to {path}")
    return path
