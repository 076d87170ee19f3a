import numpy as np
import pytest

from api.dataset import gaussian_family
from api.tangent_bundle import (all_bundles, build_graph, bundle_at, chord_bundle_at, load_bundles_csv,
                                plan_key, save_bundles_csv, velocity)
from api.transport1d import solve_monotone
from models.constants import Metric, PlanOrientation
from models.density import Grid
from models.errors import GridMismatch, KTooLarge, MissingPlan
from models.transport import TransportPlan


def test_toy_graph_lists_k_nearest(toy_dataset, toy_graph):
    assert len(toy_graph.edges) == 35
    for anchor, neighbors in enumerate(toy_graph.edges):
        assert len(neighbors) == 6
        assert anchor not in neighbors
        distances = toy_graph.distances[anchor, neighbors]
        assert np.all(np.diff(distances) >= -1e-9 * np.max(toy_graph.distances))
        others = [j for j in range(35) if j != anchor and j not in neighbors]
        assert np.min(toy_graph.distances[anchor, others]) >= distances[-1] - 1e-9 * np.max(toy_graph.distances)


def test_graph_breaks_ties_by_index(small_dataset):
    distances = np.array([
        [0.0, 2.0, 1.0, 1.0, 3.0, 2.0],
        [2.0, 0.0, 1.0, 1.0, 1.0, 1.0],
        [1.0, 1.0, 0.0, 2.0, 2.0, 2.0],
        [1.0, 1.0, 2.0, 0.0, 2.0, 2.0],
        [3.0, 1.0, 2.0, 2.0, 0.0, 1.0],
        [2.0, 1.0, 2.0, 2.0, 1.0, 0.0],
    ])
    graph = build_graph(small_dataset, k=3, metric=Metric.EUCLIDEAN, distances=distances)
    assert graph.edges[0] == [2, 3, 1]
    assert graph.edges[1] == [2, 3, 4]


def test_graph_rejects_k_beyond_sample_count(toy_dataset):
    with pytest.raises(KTooLarge):
        build_graph(toy_dataset, k=35, metric=Metric.EUCLIDEAN)


def test_euclidean_graph(small_dataset):
    graph = build_graph(small_dataset, k=2, metric=Metric.EUCLIDEAN)
    assert graph.metric == Metric.EUCLIDEAN
    assert all(len(neighbors) == 2 for neighbors in graph.edges)


def test_translate_velocity_is_shifted_derivative(sample_on):
    anchor, neighbor = sample_on(350, 20), sample_on(400, 20)
    V = velocity(anchor, solve_monotone(neighbor, anchor))
    expected = -50.0 * anchor.derivative()
    assert np.max(np.abs(V - expected)) / np.max(np.abs(expected)) <= 0.02


def test_velocity_scales_with_small_shifts(toy_grid):
    ds = gaussian_family([500, 501, 502], [20], toy_grid)
    anchor = ds.samples[0]
    one = velocity(anchor, solve_monotone(ds.samples[1], anchor))
    two = velocity(anchor, solve_monotone(ds.samples[2], anchor))
    assert np.linalg.norm(two) / np.linalg.norm(one) == pytest.approx(2.0, rel=0.05)


def test_reverse_orientation_matches_forward_on_translates(sample_on):
    anchor, neighbor = sample_on(450, 30), sample_on(500, 30)
    forward = velocity(anchor, solve_monotone(anchor, neighbor), PlanOrientation.FORWARD)
    reverse = velocity(anchor, solve_monotone(neighbor, anchor), PlanOrientation.REVERSE)
    assert np.max(np.abs(forward - reverse)) / np.max(np.abs(forward)) <= 0.02


def test_both_orientations_stay_in_the_family_tangent_plane(sample_on):
    anchor, wider, shifted = sample_on(450, 30), sample_on(500, 40), sample_on(400, 30)
    rows = np.vstack([
        velocity(anchor, solve_monotone(anchor, wider), PlanOrientation.FORWARD),
        velocity(anchor, solve_monotone(wider, anchor), PlanOrientation.REVERSE),
        velocity(anchor, solve_monotone(anchor, shifted), PlanOrientation.FORWARD),
    ])
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    sigma = np.linalg.svd(rows, compute_uv=False)
    assert sigma[1] / sigma[0] > 0.05
    assert sigma[2] / sigma[0] < 0.05


def test_scaling_velocity_is_even_about_the_mean(sample_on):
    anchor, wider = sample_on(500, 20), sample_on(500, 40)
    V = velocity(anchor, solve_monotone(wider, anchor))
    # the grid 0..1000 is symmetric about 500
    assert np.max(np.abs(V - V[::-1])) <= 1e-2 * np.max(np.abs(V))
    # widening drains the center
    assert V[500] < 0


def test_velocity_rejects_plan_on_other_grid(sample_on):
    anchor = sample_on(500, 30)
    grid = Grid.uniform(0, 10, 1)
    plan = TransportPlan(0, 1, grid, grid.nodes.copy(), np.ones(11), 0.0)
    with pytest.raises(GridMismatch):
        velocity(anchor, plan)


def test_bundle_rows_follow_neighbor_order(toy_dataset, toy_graph, toy_plans):
    bundle = bundle_at(toy_dataset, toy_graph, toy_plans, 17)
    assert bundle.neighbor_indices == toy_graph.edges[17]
    assert bundle.vectors.shape == (6, 1001)
    expected = velocity(toy_dataset.samples[17], toy_plans[(toy_graph.edges[17][0], 17)])
    np.testing.assert_array_equal(bundle.vectors[0], expected)
    assert not bundle.has_degenerate_rows


def test_bundle_needs_every_plan(toy_dataset, toy_graph, toy_plans):
    plans = dict(toy_plans)
    del plans[(toy_graph.edges[0][2], 0)]
    with pytest.raises(MissingPlan):
        bundle_at(toy_dataset, toy_graph, plans, 0)


def test_bundle_flags_vanishing_rows(toy_dataset, toy_graph):
    grid = toy_dataset.grid
    identity = {(j, 0): TransportPlan(j, 0, grid, grid.nodes.copy(), np.ones(grid.size), 0.0)
                for j in toy_graph.edges[0]}
    bundle = bundle_at(toy_dataset, toy_graph, identity, 0)
    assert bundle.degenerate == [True] * 6
    assert np.all(bundle.vectors == 0.0)


def test_chord_bundle_is_plain_difference(toy_dataset, toy_graph):
    bundle = chord_bundle_at(toy_dataset, toy_graph, 4)
    first = toy_graph.edges[4][0]
    np.testing.assert_array_equal(bundle.vectors[0],
                                  toy_dataset.samples[first].values - toy_dataset.samples[4].values)


def test_chord_bundle_flags_duplicate_samples(toy_grid):
    ds = gaussian_family([500, 500, 550], [30], toy_grid)
    graph = build_graph(ds, k=2, metric=Metric.EUCLIDEAN)
    bundle = chord_bundle_at(ds, graph, 0)
    assert bundle.neighbor_indices[0] == 1
    assert bundle.degenerate == [True, False]


def test_all_bundles_are_ordered_by_anchor(toy_dataset, toy_graph, toy_plans):
    bundles = all_bundles(toy_dataset, toy_graph, list(toy_plans.values()), workers=3)
    assert [bundle.anchor_index for bundle in bundles] == list(range(35))


def test_forward_bundles_need_forward_plans(toy_dataset, toy_graph, toy_plans):
    assert all(plan_key(anchor, neighbor) in toy_plans for anchor, neighbor in toy_graph.pairs())
    with pytest.raises(MissingPlan):
        all_bundles(toy_dataset, toy_graph, toy_plans, orientation=PlanOrientation.FORWARD)


def test_bundles_csv_round_trip(tmp_path, toy_bundles):
    path = save_bundles_csv(toy_bundles[:3], tmp_path / "bundles.csv")
    loaded = load_bundles_csv(path, 1001)
    assert [bundle.anchor_index for bundle in loaded] == [0, 1, 2]
    for original, restored in zip(toy_bundles[:3], loaded):
        assert restored.neighbor_indices == original.neighbor_indices
        np.testing.assert_array_equal(restored.vectors, original.vectors)


def test_translates_on_a_line_pick_the_nearer_index():
    grid = Grid.uniform(-10, 20, 0.01)
    ds = gaussian_family([0, 5, 10], [1], grid)
    graph = build_graph(ds, k=1, metric=Metric.WASSERSTEIN2)
    assert graph.edges == [[1], [0], [1]]


def test_toy_rows_lie_in_the_family_tangent_plane(toy_dataset, toy_bundles):
    x = toy_dataset.grid.nodes
    for bundle in toy_bundles:
        anchor = toy_dataset.samples[bundle.anchor_index]
        mu, sigma = anchor.label["mu"], anchor.label["sigma"]
        f = anchor.values
        plane = np.vstack([f * (x - mu) / sigma ** 2, f * ((x - mu) ** 2 / sigma ** 3 - 1.0 / sigma)]).T
        coefficients = np.linalg.lstsq(plane, bundle.vectors.T, rcond=None)[0]
        residual = bundle.vectors.T - plane @ coefficients
        relative = np.linalg.norm(residual, axis=0) / np.linalg.norm(bundle.vectors, axis=1)
        assert np.all(relative <= 0.05), (bundle.anchor_index, relative.max())


def test_opposite_translates_give_antiparallel_rows(toy_dataset, toy_bundles):
    labels = toy_dataset.labels()
    checked = 0
    for bundle in toy_bundles:
        anchor = labels[bundle.anchor_index]
        for a, i in enumerate(bundle.neighbor_indices):
            for b, j in enumerate(bundle.neighbor_indices):
                left, right = labels[i], labels[j]
                if not (left["sigma"] == right["sigma"] == anchor["sigma"]
                        and left["mu"] < anchor["mu"] < right["mu"]):
                    continue
                u, v = bundle.vectors[a], bundle.vectors[b]
                cosine = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
                assert abs(cosine) >= 0.99
                assert cosine < 0
                checked += 1
    assert checked > 0
