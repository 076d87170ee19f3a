import json

import numpy as np
import pandas as pd
import pytest

from api.pipeline import emit_plot_data, load_report, report_from_directory, run_pipeline, stage_seed
from models.constants import Artifact, PlotKind, Stage, TangentMethod
from models.errors import KTooLarge, MissingArtifact, StageFailure
from models.pipeline import PipelineConfig


def _config(out_dir, **overrides):
    settings = dict(means=[400, 450, 500, 550, 600], sigmas=[30, 50, 70], grid_step=2, k=4, steps=50,
                    width=8, workers=2, out_dir=str(out_dir))
    settings.update(overrides)
    return PipelineConfig(**settings)


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("run")
    return out_dir, run_pipeline(_config(out_dir))


def test_pipeline_writes_every_artifact(finished_run):
    out_dir, report = finished_run
    for name in (Artifact.DATASET, Artifact.GRAPH, Artifact.PLANS_INDEX, Artifact.BUNDLES, Artifact.SPECTRUM,
                 Artifact.ID_ESTIMATE, Artifact.CHECKPOINT, Artifact.ALPHAS, Artifact.FIT_REPORT,
                 Artifact.EMBEDDING, Artifact.REPORT):
        assert (out_dir / name).exists(), name
    assert len(list((out_dir / Artifact.PLANS_DIR).glob("plan_*.csv"))) == 60
    assert list(report.timings) == [stage.value for stage in Stage.ordered()]


def test_pipeline_finds_two_dimensions(finished_run):
    _, report = finished_run
    assert report.id_estimate.global_id == 2
    assert report.m_used == 2
    assert report.id_estimate.baseline_pca_id > 2
    embedding = pd.read_csv(report.embedding_path)
    assert list(embedding.columns) == ["sample_index", "phi_1", "phi_2", "mu", "sigma"]
    assert len(embedding) == 15


def test_graph_artifact_lists_neighbors(finished_run):
    out_dir, _ = finished_run
    graph = json.loads((out_dir / Artifact.GRAPH).read_text())
    assert graph["k"] == 4
    assert graph["metric"] == "wasserstein2"
    assert all(len(neighbors) == 4 for neighbors in graph["edges"])


def test_report_round_trips_through_json(finished_run):
    out_dir, report = finished_run
    assert load_report(out_dir / Artifact.REPORT).model_dump() == report.model_dump()


def test_reruns_are_byte_identical(finished_run, tmp_path):
    out_dir, _ = finished_run
    run_pipeline(_config(tmp_path))
    for name in (Artifact.EMBEDDING, Artifact.SPECTRUM, Artifact.BUNDLES, Artifact.CHECKPOINT):
        assert (tmp_path / name).read_bytes() == (out_dir / name).read_bytes(), name


def test_coordinates_can_be_refit_from_saved_artifacts(tmp_path):
    run_pipeline(_config(tmp_path), to_stage=Stage.ID)
    report = run_pipeline(_config(tmp_path, steps=20, width=0), from_stage=Stage.COORDS)
    assert report.id_estimate.global_id == 2
    assert len(report.fit.loss_history) == 20
    assert "id" in report.timings
    assert (tmp_path / Artifact.EMBEDDING).exists()


def test_explicit_dimension_overrides_the_estimate(tmp_path):
    report = run_pipeline(_config(tmp_path, m=3, steps=10, width=0))
    assert report.m_used == 3
    assert list(pd.read_csv(report.embedding_path).columns[1:4]) == ["phi_1", "phi_2", "phi_3"]


def test_later_stage_without_artifacts_fails(tmp_path):
    with pytest.raises(StageFailure) as excinfo:
        run_pipeline(_config(tmp_path), from_stage=Stage.ID)
    assert excinfo.value.stage == "id"
    assert isinstance(excinfo.value.cause, MissingArtifact)
    assert not excinfo.value.is_numerical


def test_single_sample_fails_at_the_neighbor_graph(tmp_path):
    with pytest.raises(StageFailure) as excinfo:
        run_pipeline(_config(tmp_path, means=[500], sigmas=[30]))
    assert excinfo.value.stage == "transport"
    assert isinstance(excinfo.value.cause, KTooLarge)
    assert not excinfo.value.is_numerical
    # the failed run still leaves its report behind
    assert load_report(tmp_path / Artifact.REPORT).artifacts["dataset"].endswith(Artifact.DATASET)


def test_chord_tangents_skip_transport_plans(tmp_path):
    report = run_pipeline(_config(tmp_path, tangent_method=TangentMethod.CHORD, metric="euclidean"),
                          to_stage=Stage.ID)
    assert "plans_index" not in report.artifacts
    assert not (tmp_path / Artifact.PLANS_DIR).exists()
    assert len(report.id_estimate.per_point) == 15


def test_stage_seeds_are_distinct():
    seeds = [stage_seed(0, stage) for stage in Stage.ordered()]
    assert len(set(seeds)) == len(seeds)
    assert stage_seed(0, Stage.COORDS) != stage_seed(1, Stage.COORDS)
    assert stage_seed(5, Stage.ID) == stage_seed(5, Stage.ID)


def test_plot_data_formats(finished_run, tmp_path):
    out_dir, report = finished_run

    dataset = pd.read_csv(emit_plot_data(report, PlotKind.DATASET, tmp_path))
    assert list(dataset.columns) == ["series", "x", "y"]
    assert len(dataset) == 15 * 501

    spectrum = pd.read_csv(emit_plot_data(report, PlotKind.SPECTRUM, tmp_path))
    assert list(spectrum.columns[:3]) == ["anchor", "local_id", "ratio_1"]
    assert (spectrum["ratio_1"] == 1.0).all()

    embedding = pd.read_csv(emit_plot_data(report, PlotKind.EMBEDDING, tmp_path))
    assert list(embedding.columns) == ["sample_index", "phi_1", "phi_2", "label"]
    assert embedding["label"][0] == "mu=400,sigma=30"


def test_plot_data_defaults_next_to_the_artifacts(finished_run):
    out_dir, report = finished_run
    assert emit_plot_data(report, "spectrum") == out_dir / Artifact.PLOT_DIR / "spectrum.csv"


def test_plot_data_needs_the_artifact(tmp_path):
    report = report_from_directory(tmp_path)
    assert report.artifacts == {}
    with pytest.raises(MissingArtifact):
        emit_plot_data(report, PlotKind.EMBEDDING)


def test_linear_algebra_errors_are_numerical_stage_failures(tmp_path, monkeypatch):
    def singular(*args, **kwargs):
        raise np.linalg.LinAlgError("SVD did not converge")

    monkeypatch.setattr("api.pipeline.estimate_id", singular)
    with pytest.raises(StageFailure) as excinfo:
        run_pipeline(_config(tmp_path), to_stage=Stage.ID)
    assert excinfo.value.stage == "id"
    assert isinstance(excinfo.value.cause, np.linalg.LinAlgError)
    assert excinfo.value.is_numerical
    report = load_report(tmp_path / Artifact.REPORT)
    assert list(report.timings) == ["generate", "transport", "tangents"]


def test_corrupt_artifacts_are_wrapped_as_stage_failures(tmp_path):
    run_pipeline(_config(tmp_path), to_stage=Stage.TRANSPORT)
    (tmp_path / Artifact.GRAPH).write_text(json.dumps({"k": 4, "metric": "wasserstein2"}))
    with pytest.raises(StageFailure) as excinfo:
        run_pipeline(_config(tmp_path), from_stage=Stage.TANGENTS)
    assert excinfo.value.stage == "tangents"
    assert isinstance(excinfo.value.cause, KeyError)
    assert not excinfo.value.is_numerical
    assert (tmp_path / Artifact.REPORT).exists()
