"""
Neighbor graph construction and analytic tangent vectors from transport plans.

Tangents at an anchor f0 use the plan solved with source = f_i and target = f0, stored
under the key (i, anchor). Its map T is evaluated on f0's support and carries f0's mass
onto f_i, so the velocity of the displacement curve at t = 0 is

    V(x) = -[f0'(x) (T(x) - x) + f0(x) (T'(x) - 1)].

The forward orientation (source = f0, key (anchor, i)) uses the same formula without
the sign flip.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from api.transport1d import DEFAULT_OT_TOLERANCE, wasserstein_matrix
from models.constants import (DEGENERATE_ROW_NORM, DISTANCE_TIE_DECIMALS, Metric,
                              PlanOrientation)
from models.errors import (DegeneratePlan, EmptyDataSet, GridMismatch, InvalidParameter,
                           KTooLarge, MissingPlan, ParseFailure)
from models.tangent import NeighborGraph, TangentBundle

logger = logging.getLogger(__name__)

DEFAULT_K = 6


def distance_matrix(ds, metric=Metric.WASSERSTEIN2, tolerance=DEFAULT_OT_TOLERANCE, workers=1):
    """Pairwise distances between samples: Euclidean on values, or squared transport cost."""
    metric = Metric(metric)
    if metric == Metric.EUCLIDEAN:
        return cdist(ds.matrix(), ds.matrix(), metric="euclidean")
    return wasserstein_matrix(ds, tolerance=tolerance, workers=workers)


def build_graph(ds, k=DEFAULT_K, metric=Metric.WASSERSTEIN2, distances=None, tolerance=DEFAULT_OT_TOLERANCE,
                workers=1):
    """
    k-nearest-neighbor graph under the chosen metric.

    Neighbors are sorted by ascending distance; distances equal to DISTANCE_TIE_DECIMALS
    relative digits count as ties and are broken by ascending index.

    Args:
        ds (DataSet): Data set
        k (int): Neighbors per point, 1 <= k <= count - 1
        metric (Metric): 'euclidean' or 'wasserstein2'
        distances (np.ndarray, optional): Precomputed distance matrix
        tolerance (float): Push-forward tolerance for the transport metric
        workers (int): Threads for the transport metric

    Returns:
        NeighborGraph: Neighbor lists and the distance matrix they came from
    """
    metric = Metric(metric)
    count = len(ds)
    if count == 0:
        raise EmptyDataSet("Cannot build a neighbor graph on an empty data set")
    if k < 1:
        raise InvalidParameter(f"k must be at least 1, got {k}")
    if k > count - 1:
        raise KTooLarge(f"k={k} needs at least {k + 1} samples, the data set has {count}")

    if distances is None:
        distances = distance_matrix(ds, metric, tolerance=tolerance, workers=workers)
    distances = np.asarray(distances, dtype=float)

    scale = np.max(distances) if np.max(distances) > 0 else 1.0
    keys = np.round(distances / scale, DISTANCE_TIE_DECIMALS)
    edges = []
    for anchor in range(count):
        candidates = np.array([j for j in range(count) if j != anchor])
        order = np.lexsort((candidates, keys[anchor, candidates]))
        edges.append([int(j) for j in candidates[order][:k]])

    logger.info(f"Built {metric.value} neighbor graph with k={k} over {count} samples")
    return NeighborGraph(k=k, metric=metric, edges=edges, distances=distances)


def velocity(anchor, plan, orientation=PlanOrientation.REVERSE):
    """
    Tangent at the anchor along the displacement curve described by the plan.

    Args:
        anchor (DensitySample): The anchor density f0
        plan (TransportPlan): Reverse orientation: source = neighbor, target = anchor.
            Forward orientation: source = anchor, target = neighbor.
        orientation (PlanOrientation): Which of the two plans is supplied

    Returns:
        np.ndarray: Velocity vector over the grid nodes
    """
    if not anchor.grid.same_as(plan.grid):
        raise GridMismatch("Anchor and plan live on different grids")
    if not (np.all(np.isfinite(plan.map_values)) and np.all(np.isfinite(plan.map_derivative))):
        raise DegeneratePlan(f"Plan {plan.pair} holds non-finite map values")

    x = anchor.grid.nodes
    displacement = plan.map_values - x
    stretch = plan.map_derivative - 1.0
    vector = anchor.derivative() * displacement + anchor.values * stretch
    if PlanOrientation(orientation) == PlanOrientation.REVERSE:
        vector = -vector
    return vector


def plan_key(anchor_index, neighbor_index, orientation=PlanOrientation.REVERSE):
    """(source, target) pair of the plan used for the tangent at anchor toward neighbor."""
    if PlanOrientation(orientation) == PlanOrientation.REVERSE:
        return (neighbor_index, anchor_index)
    return (anchor_index, neighbor_index)


def bundle_pairs(graph, orientation=PlanOrientation.REVERSE):
    """Every (source, target) pair the bundles of `graph` need, in anchor order."""
    return [plan_key(anchor, neighbor, orientation) for anchor, neighbor in graph.pairs()]


def _flag_degenerate(anchor_index, neighbors, vectors):
    norms = np.linalg.norm(vectors, axis=1)
    degenerate = [bool(norm <= DEGENERATE_ROW_NORM and neighbor != anchor_index)
                  for norm, neighbor in zip(norms, neighbors)]
    if any(degenerate):
        logger.warning(f"Anchor {anchor_index}: {sum(degenerate)} degenerate tangent rows kept")
    return degenerate


def bundle_at(ds, graph, plans, anchor_index, orientation=PlanOrientation.REVERSE):
    """
    Stack the velocities toward each neighbor of an anchor.

    Args:
        ds (DataSet): Data set
        graph (NeighborGraph): Neighbor lists
        plans (dict): Plans keyed by (source_index, target_index)
        anchor_index (int): Anchor sample
        orientation (PlanOrientation): Orientation the plans were solved with

    Returns:
        TangentBundle: One row per neighbor, in neighbor-list order
    """
    anchor = ds.samples[anchor_index]
    neighbors = list(graph.edges[anchor_index])
    rows = []
    for neighbor in neighbors:
        key = plan_key(anchor_index, neighbor, orientation)
        plan = plans.get(key)
        if plan is None:
            raise MissingPlan(f"No transport plan for pair {key} (anchor {anchor_index})")
        rows.append(velocity(anchor, plan, orientation))

    vectors = np.vstack(rows) if rows else np.empty((0, ds.ambient_dim))
    return TangentBundle(anchor_index=anchor_index, vectors=vectors, neighbor_indices=neighbors,
                         degenerate=_flag_degenerate(anchor_index, neighbors, vectors))


def chord_bundle_at(ds, graph, anchor_index):
    """
    Baseline tangents by plain differences f_i - f0 toward each neighbor.

    On sparse data these chords cut across the manifold, which inflates the rank.
    """
    anchor = ds.samples[anchor_index]
    neighbors = list(graph.edges[anchor_index])
    vectors = np.vstack([ds.samples[j].values - anchor.values for j in neighbors])
    return TangentBundle(anchor_index=anchor_index, vectors=vectors, neighbor_indices=neighbors,
                         degenerate=_flag_degenerate(anchor_index, neighbors, vectors))


def all_bundles(ds, graph, plans=None, orientation=PlanOrientation.REVERSE, chord=False, workers=1):
    """
    Bundles for every anchor, ordered by anchor index.

    Args:
        plans (dict or list): Plans keyed by (source, target), or a list of plans
        chord (bool): Build difference tangents instead of transport tangents
        workers (int): Thread count for the per-anchor fan-out

    Returns:
        list of TangentBundle
    """
    if chord:
        build = lambda anchor: chord_bundle_at(ds, graph, anchor)
    else:
        if plans is None:
            raise MissingPlan("Transport tangents need plans")
        if not isinstance(plans, dict):
            plans = {plan.pair: plan for plan in plans}
        build = lambda anchor: bundle_at(ds, graph, plans, anchor, orientation)

    anchors = range(len(ds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            bundles = list(executor.map(build, anchors))
    else:
        bundles = [build(anchor) for anchor in anchors]

    logger.info(f"Built {len(bundles)} tangent bundles ({'chord' if chord else 'transport'})")
    return bundles


def save_bundles_csv(bundles, path):
    """Write all bundles to one indexed CSV: anchor, neighbor, degenerate, v0..v{N-1}."""
    rows = []
    for bundle in bundles:
        for neighbor, flag, vector in zip(bundle.neighbor_indices, bundle.degenerate, bundle.vectors):
            rows.append([bundle.anchor_index, neighbor, int(flag), *vector])
    width = bundles[0].vectors.shape[1] if bundles else 0
    columns = ["anchor", "neighbor", "degenerate"] + [f"v{j}" for j in range(width)]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    return path


def load_bundles_csv(path, ambient_dim):
    """Read bundles written by save_bundles_csv, grouped by anchor in file order."""
    frame = pd.read_csv(path, float_precision="round_trip")
    vector_columns = [c for c in frame.columns if c.startswith("v")]
    if len(vector_columns) != ambient_dim:
        raise ParseFailure(f"{path} holds vectors of length {len(vector_columns)}, expected {ambient_dim}")

    bundles = []
    for anchor, group in frame.groupby("anchor", sort=True):
        bundles.append(TangentBundle(
            anchor_index=int(anchor),
            vectors=group[vector_columns].to_numpy(dtype=float),
            neighbor_indices=[int(j) for j in group["neighbor"]],
            degenerate=[bool(flag) for flag in group["degenerate"]],
        ))
    return bundles
