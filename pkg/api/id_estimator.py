"""
Intrinsic dimension from the spectra of tangent bundles.

Each anchor's tangent rows are scaled to unit length and decomposed with an SVD; the
local ID is the number of singular values within `rel_tol` of the leading one. The
global ID aggregates the local IDs.
"""
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from models.constants import DEGENERATE_ROW_NORM, Aggregation
from models.errors import EmptyBundle, EmptyReports, InvalidParameter, ParseFailure
from models.spectrum import IdEstimate, SpectrumReport

logger = logging.getLogger(__name__)

DEFAULT_REL_TOL = 0.05


def _check_rel_tol(rel_tol):
    if not 0.0 < rel_tol < 1.0:
        raise InvalidParameter(f"rel_tol must lie in (0, 1), got {rel_tol}")


def _count_above(singular_values, rel_tol):
    if singular_values.size == 0 or singular_values[0] <= 0:
        return 0
    return int(np.sum(singular_values / singular_values[0] >= rel_tol))


def _gap_ratio(singular_values, local_id):
    if local_id == 0 or local_id >= singular_values.size or singular_values[local_id] <= 0:
        return float("inf")
    return float(singular_values[local_id - 1] / singular_values[local_id])


def spectrum(vectors, rel_tol=DEFAULT_REL_TOL):
    """
    Singular values of the row-normalized matrix and the rank read from them.

    Rows with norm below DEGENERATE_ROW_NORM stay zero instead of being scaled up.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    safe = np.where(norms > DEGENERATE_ROW_NORM, norms, 1.0)
    unit = np.where(norms > DEGENERATE_ROW_NORM, vectors / safe, 0.0)
    singular_values = np.linalg.svd(unit, compute_uv=False)
    return singular_values, _count_above(singular_values, rel_tol)


def local_id(bundle, rel_tol=DEFAULT_REL_TOL):
    """
    Local intrinsic dimension at one anchor.

    Args:
        bundle (TangentBundle): Tangent rows at the anchor
        rel_tol (float): Relative singular-value threshold in (0, 1)

    Returns:
        SpectrumReport: Singular values, local ID and the gap ratio sigma_M / sigma_{M+1}
    """
    _check_rel_tol(rel_tol)
    if bundle.row_count == 0:
        raise EmptyBundle(f"Anchor {bundle.anchor_index} has no tangent rows")

    singular_values, rank = spectrum(bundle.vectors, rel_tol)
    if rank == 0:
        logger.warning(f"Anchor {bundle.anchor_index}: all tangent rows vanish, local ID 0")
    logger.debug(f"Anchor {bundle.anchor_index}: local ID {rank}, sigma {singular_values[:rank + 1]}")
    return SpectrumReport(anchor_index=bundle.anchor_index,
                          singular_values=[float(v) for v in singular_values],
                          local_id=rank, gap_ratio=_gap_ratio(singular_values, rank))


def _aggregate(values, aggregation):
    if aggregation == Aggregation.MAX:
        return max(values)
    if aggregation == Aggregation.MEDIAN:
        ordered = sorted(values)
        return ordered[(len(ordered) - 1) // 2]
    counts = Counter(values)
    top = max(counts.values())
    return min(value for value, count in counts.items() if count == top)


def global_id(reports, aggregation=Aggregation.MODE):
    """
    Aggregate per-point reports into the global intrinsic dimension.

    Mode breaks ties toward the smaller value; median is the lower median.

    Args:
        reports (list of SpectrumReport): Per-anchor reports
        aggregation (Aggregation): 'mode', 'max' or 'median'

    Returns:
        IdEstimate
    """
    reports = list(reports)
    if not reports:
        raise EmptyReports("Cannot aggregate an empty list of spectrum reports")
    aggregation = Aggregation(aggregation)

    value = _aggregate([report.local_id for report in reports], aggregation)
    logger.info(f"Global ID {value} ({aggregation.value} of {len(reports)} local IDs)")
    return IdEstimate(global_id=value, per_point=reports, aggregation=aggregation)


def estimate_id(bundles, rel_tol=DEFAULT_REL_TOL, aggregation=Aggregation.MODE, workers=1):
    """Local IDs for every bundle (anchor order kept) followed by aggregation."""
    _check_rel_tol(rel_tol)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            reports = list(executor.map(lambda bundle: local_id(bundle, rel_tol), bundles))
    else:
        reports = [local_id(bundle, rel_tol) for bundle in bundles]
    return global_id(reports, aggregation)


def pca_global_id(ds, rel_tol=DEFAULT_REL_TOL):
    """
    Baseline: rank of the centered data matrix under the same relative-gap rule.

    A linear method sees the curved Gaussian family as high dimensional.
    """
    _check_rel_tol(rel_tol)
    matrix = ds.matrix()
    centered = matrix - matrix.mean(axis=0)
    singular_values = np.linalg.svd(centered, compute_uv=False)
    return _count_above(singular_values, rel_tol)


def save_spectrum_csv(reports, path):
    """Write one row per anchor: anchor, local_id, gap_ratio, sigma_1..sigma_k."""
    width = max((len(report.singular_values) for report in reports), default=0)
    rows = []
    for report in reports:
        padded = report.singular_values + [np.nan] * (width - len(report.singular_values))
        rows.append([report.anchor_index, report.local_id, report.gap_ratio, *padded])
    columns = ["anchor", "local_id", "gap_ratio"] + [f"sigma_{j + 1}" for j in range(width)]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    return path


def load_spectrum_csv(path):
    """Read reports written by save_spectrum_csv."""
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = {"anchor", "local_id", "gap_ratio"} - set(frame.columns)
    if missing:
        raise ParseFailure(f"{path} lacks columns {sorted(missing)}")

    sigma_columns = [c for c in frame.columns if c.startswith("sigma_")]
    reports = []
    for row in frame.itertuples(index=False):
        record = row._asdict()
        values = [float(record[c]) for c in sigma_columns if not np.isnan(record[c])]
        reports.append(SpectrumReport(anchor_index=int(record["anchor"]), singular_values=values,
                                      local_id=int(record["local_id"]),
                                      gap_ratio=float(record["gap_ratio"])))
    return reports
