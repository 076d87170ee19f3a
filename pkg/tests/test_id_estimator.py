import numpy as np
import pytest

from api.id_estimator import (estimate_id, global_id, load_spectrum_csv, local_id, pca_global_id,
                              save_spectrum_csv)
from models.constants import Aggregation
from models.errors import EmptyBundle, EmptyReports
from models.spectrum import SpectrumReport
from models.tangent import TangentBundle


def _bundle(vectors, anchor=0):
    vectors = np.asarray(vectors, dtype=float)
    return TangentBundle(anchor_index=anchor, vectors=vectors, neighbor_indices=list(range(1, len(vectors) + 1)),
                         degenerate=[False] * len(vectors))


def _spanning_bundle(rng, d, rows=6, ambient=100):
    """Rows spanning exactly a random d-dimensional subspace, well conditioned."""
    basis, _ = np.linalg.qr(rng.normal(size=(ambient, d)))
    coefficients = np.vstack([np.eye(d), rng.normal(size=(rows - d, d))])
    return coefficients @ basis.T


def _gram_rank(vectors, rel_tol):
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    eigenvalues = np.linalg.eigvalsh(unit @ unit.T)
    return int(np.sum(eigenvalues / eigenvalues.max() >= rel_tol ** 2))


def _report(local, anchor=0):
    return SpectrumReport(anchor_index=anchor, singular_values=[1.0, 0.5, 0.25, 0.1], local_id=local,
                          gap_ratio=2.0)


def test_repeated_vector_has_rank_one():
    unit = np.zeros(10)
    unit[3] = 1.0
    report = local_id(_bundle([unit, unit]))
    assert report.local_id == 1
    assert report.singular_values[1] / report.singular_values[0] <= 1e-12
    assert report.gap_ratio == float("inf")


def test_vectors_in_a_plane_have_rank_two():
    rng = np.random.default_rng(11)
    vectors = _spanning_bundle(rng, 2)
    assert local_id(_bundle(vectors), rel_tol=0.05).local_id == 2
    assert _gram_rank(vectors, 0.05) == 2


def test_rank_matches_gram_oracle_on_constructed_bundles():
    rng = np.random.default_rng(2024)
    for case in range(100):
        d = 1 + case % 3
        vectors = _spanning_bundle(rng, d) * rng.uniform(0.1, 10.0, size=(6, 1))
        report = local_id(_bundle(vectors), rel_tol=0.05)
        assert report.local_id == d
        assert report.local_id == _gram_rank(vectors, 0.05)
        assert report.gap_ratio > 100.0


def test_all_zero_bundle_has_rank_zero():
    report = local_id(_bundle(np.zeros((4, 8))))
    assert report.local_id == 0
    assert report.gap_ratio == float("inf")


def test_empty_bundle_is_rejected():
    with pytest.raises(EmptyBundle):
        local_id(_bundle(np.empty((0, 8))))


def test_row_scaling_does_not_change_rank():
    rng = np.random.default_rng(5)
    vectors = rng.normal(size=(6, 20))
    base = local_id(_bundle(vectors), rel_tol=0.2).local_id
    for c in (1e-6, 3.0, 1e4):
        assert local_id(_bundle(c * vectors), rel_tol=0.2).local_id == base


def test_rank_grows_as_tolerance_shrinks():
    rng = np.random.default_rng(8)
    vectors = rng.normal(size=(6, 30)) * np.array([[1.0], [0.5], [0.2], [0.1], [0.05], [0.01]])
    ranks = [local_id(_bundle(vectors), rel_tol=tol).local_id for tol in (0.9, 0.5, 0.2, 0.05, 0.01, 0.001)]
    assert ranks == sorted(ranks)


def test_rank_never_exceeds_rows_or_ambient_dimension(toy_bundles):
    rng = np.random.default_rng(17)
    for rows, ambient in ((3, 50), (6, 6), (8, 4)):
        report = local_id(_bundle(rng.normal(size=(rows, ambient))), rel_tol=1e-6)
        assert report.local_id == min(rows, ambient)
    for bundle in toy_bundles:
        assert local_id(bundle).local_id <= min(bundle.row_count, bundle.vectors.shape[1])


def test_global_id_aggregations():
    reports = [_report(2, 0), _report(2, 1), _report(3, 2)]
    assert global_id(reports, Aggregation.MODE).global_id == 2
    assert global_id(reports, Aggregation.MAX).global_id == 3
    assert global_id(reports, Aggregation.MEDIAN).global_id == 2


def test_mode_ties_go_to_smaller_dimension():
    reports = [_report(3, 0), _report(2, 1), _report(3, 2), _report(2, 3)]
    assert global_id(reports).global_id == 2
    assert global_id(reports, Aggregation.MEDIAN).global_id == 2


def test_global_id_rejects_empty_reports():
    with pytest.raises(EmptyReports):
        global_id([])


def test_toy_bundles_have_dimension_two(toy_bundles):
    estimate = estimate_id(toy_bundles, rel_tol=0.05, workers=4)
    assert estimate.local_ids == [2] * 35
    assert estimate.global_id == 2
    assert [report.anchor_index for report in estimate.per_point] == list(range(35))


def test_linear_baseline_overestimates_the_toy_dimension(toy_dataset):
    assert pca_global_id(toy_dataset, rel_tol=0.05) > 2


def test_spectrum_csv_round_trip(tmp_path):
    reports = [
        SpectrumReport(anchor_index=0, singular_values=[2.0, 1.0, 1e-3], local_id=2, gap_ratio=1e3),
        SpectrumReport(anchor_index=1, singular_values=[1.0, 0.0], local_id=1, gap_ratio=float("inf")),
    ]
    path = save_spectrum_csv(reports, tmp_path / "spectrum.csv")
    assert load_spectrum_csv(path) == reports
