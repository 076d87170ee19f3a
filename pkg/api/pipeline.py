"""
End-to-end orchestration: data set -> transport -> tangent bundles -> intrinsic dimension
-> intrinsic coordinates -> embedding.

Every stage writes its artifacts under the output directory and reads what it needs from
earlier stages either from memory or, when started later in the chain, from those files.
"""
import json
import logging
import time
from pathlib import Path

import numpy as np
import pandas as pd

from api.coordinate_model import save_checkpoint
from api.dataset import gaussian_family, load_matrix, save_matrix
from api.id_estimator import estimate_id, load_spectrum_csv, pca_global_id, save_spectrum_csv
from api.koopman_reg import embed, injectivity_gap, optimize, save_alphas_csv, save_embedding_csv
from api.tangent_bundle import all_bundles, build_graph, bundle_pairs, load_bundles_csv, save_bundles_csv
from api.transport1d import load_plan_csv, pairwise_plans, save_plan_csv
from models.constants import Artifact, Objective, PlotKind, Stage, TangentMethod
from models.density import Grid
from models.errors import InvalidParameter, MissingArtifact, StageFailure
from models.koopman import CoordinateInputs
from models.pipeline import PipelineReport
from models.spectrum import IdEstimate
from models.tangent import NeighborGraph

logger = logging.getLogger(__name__)

# report.artifacts keys
ARTIFACT_KEYS = {
    "dataset": Artifact.DATASET,
    "graph": Artifact.GRAPH,
    "plans_index": Artifact.PLANS_INDEX,
    "bundles": Artifact.BUNDLES,
    "spectrum": Artifact.SPECTRUM,
    "id_estimate": Artifact.ID_ESTIMATE,
    "checkpoint": Artifact.CHECKPOINT,
    "alphas": Artifact.ALPHAS,
    "fit_report": Artifact.FIT_REPORT,
    "embedding": Artifact.EMBEDDING,
}


def stage_seed(seed, stage):
    """Seed of a stage's generator, split from the run seed by stage position."""
    sequence = np.random.SeedSequence(seed, spawn_key=(Stage(stage).position,))
    return int(sequence.generate_state(1)[0])


def stage_rng(seed, stage):
    return np.random.default_rng(stage_seed(seed, stage))


def load_report(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"No pipeline report at {path}")
    return PipelineReport.model_validate_json(path.read_text(encoding='utf-8'))


def save_report(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding='utf-8')
    return path


class PipelineRunner:
    """
    Runs a contiguous range of stages for one configuration.

    Args:
        config (PipelineConfig): Validated configuration
        progress (bool): Show progress bars for the long loops
    """

    def __init__(self, config, progress=False):
        self.config = config
        self.progress = progress
        self.out_dir = Path(config.out_dir)
        self.report = PipelineReport()

        self.ds = None
        self.graph = None
        self.plans = None
        self.bundles = None
        self.id_estimate = None
        self.model = None
        self.alphas = None
        self.fit = None
        self.embedding = None

    def path(self, name):
        return self.out_dir / name

    def _record(self, key, path):
        self.report.artifacts[key] = str(path)

    def _require_file(self, name, stage):
        path = self.path(name)
        if not path.exists():
            raise MissingArtifact(f"Stage '{stage.value}' needs {path}; run the earlier stages first")
        return path

    # ------------------------------------------------------------ inputs from earlier stages

    def dataset(self):
        if self.ds is None:
            path = self._require_file(Artifact.DATASET, Stage.TRANSPORT)
            self.ds = load_matrix(path, clamp_tolerance=self.config.clamp_tolerance)
            self._record("dataset", path)
        return self.ds

    def neighbor_graph(self):
        if self.graph is None:
            path = self._require_file(Artifact.GRAPH, Stage.TANGENTS)
            with open(path, 'r', encoding='utf-8') as f:
                self.graph = NeighborGraph.from_dict(json.load(f))
        return self.graph

    def transport_plans(self):
        if self.plans is None:
            index_path = self._require_file(Artifact.PLANS_INDEX, Stage.TANGENTS)
            grid = self.dataset().grid
            index = pd.read_csv(index_path, float_precision="round_trip")
            self.plans = {}
            for row in index.itertuples(index=False):
                plan = load_plan_csv(self.path(Artifact.PLANS_DIR) / row.file, grid, row.source, row.target,
                                     row.cost, row.residual)
                self.plans[plan.pair] = plan
        return self.plans

    def tangent_bundles(self):
        if self.bundles is None:
            path = self._require_file(Artifact.BUNDLES, Stage.ID)
            self.bundles = load_bundles_csv(path, self.dataset().ambient_dim)
        return self.bundles

    def estimated_id(self):
        if self.id_estimate is None:
            path = self._require_file(Artifact.ID_ESTIMATE, Stage.COORDS)
            self.id_estimate = IdEstimate.model_validate_json(path.read_text(encoding='utf-8'))
        return self.id_estimate

    # ------------------------------------------------------------ stages

    def generate(self):
        config = self.config
        if config.dataset_path:
            self.ds = load_matrix(config.dataset_path, layout=config.layout, grid_path=config.grid_path,
                                  clamp_tolerance=config.clamp_tolerance)
        else:
            grid = Grid.uniform(config.grid_start, config.grid_stop, config.grid_step)
            self.ds = gaussian_family(config.means, config.sigmas, grid)
        self._record("dataset", save_matrix(self.ds, self.path(Artifact.DATASET)))

    def transport(self):
        config = self.config
        ds = self.dataset()
        self.graph = build_graph(ds, k=config.k, metric=config.metric, tolerance=config.ot_tolerance,
                                 workers=config.workers)
        graph_path = self.path(Artifact.GRAPH)
        with open(graph_path, 'w', encoding='utf-8') as f:
            json.dump(self.graph.to_dict(), f, indent=2)
        self._record("graph", graph_path)

        if config.tangent_method == TangentMethod.CHORD:
            logger.info("Chord tangents selected, no transport plans needed")
            self.plans = {}
            return

        pairs = bundle_pairs(self.graph, config.plan_orientation)
        unique_pairs = list(dict.fromkeys(pairs))
        plans = pairwise_plans(ds, unique_pairs, tolerance=config.ot_tolerance, workers=config.workers,
                               progress=self.progress)
        self.plans = {plan.pair: plan for plan in plans}

        plans_dir = self.path(Artifact.PLANS_DIR)
        records = []
        for plan in plans:
            name = f"plan_{plan.source_index}_{plan.target_index}.csv"
            save_plan_csv(plan, plans_dir / name)
            records.append({"source": plan.source_index, "target": plan.target_index,
                            "cost": plan.cost, "residual": plan.residual, "file": name})
        index_path = self.path(Artifact.PLANS_INDEX)
        pd.DataFrame(records, columns=["source", "target", "cost", "residual", "file"]).to_csv(
            index_path, index=False)
        self._record("plans_index", index_path)

    def tangents(self):
        config = self.config
        ds = self.dataset()
        graph = self.neighbor_graph()
        chord = config.tangent_method == TangentMethod.CHORD
        plans = None if chord else self.transport_plans()
        self.bundles = all_bundles(ds, graph, plans, orientation=config.plan_orientation, chord=chord,
                                   workers=config.workers)
        self._record("bundles", save_bundles_csv(self.bundles, self.path(Artifact.BUNDLES)))

    def intrinsic_dimension(self):
        config = self.config
        estimate = estimate_id(self.tangent_bundles(), rel_tol=config.rel_tol, aggregation=config.aggregation,
                               workers=config.workers)
        estimate.baseline_pca_id = pca_global_id(self.dataset(), rel_tol=config.rel_tol)
        logger.info(f"Tangent-based ID {estimate.global_id}, linear baseline ID {estimate.baseline_pca_id}")
        self.id_estimate = estimate

        self._record("spectrum", save_spectrum_csv(estimate.per_point, self.path(Artifact.SPECTRUM)))
        id_path = self.path(Artifact.ID_ESTIMATE)
        id_path.write_text(estimate.model_dump_json(indent=2), encoding='utf-8')
        self._record("id_estimate", id_path)
        self.report.id_estimate = estimate

    def coordinates(self):
        config = self.config
        ds = self.dataset()
        bundles = self.tangent_bundles()
        m = config.m if config.m is not None else self.estimated_id().global_id
        if m < 1:
            raise InvalidParameter("The estimated intrinsic dimension is 0; set 'm' explicitly")
        if config.m is None:
            self.report.id_estimate = self.estimated_id()

        optimizer_config = config.optimizer_config().model_copy(
            update={"seed": stage_seed(config.seed, Stage.COORDS), "progress": self.progress})
        self.model, self.alphas, self.fit = optimize(Objective.COORDINATES, CoordinateInputs(bundles, ds, m),
                                                     optimizer_config)
        self.embedding = embed(self.model, ds)
        gap = injectivity_gap(self.embedding)
        if gap <= 1e-6:
            logger.warning(f"Embedding is not injective at the data (min pairwise distance {gap:.3e})")

        self._record("checkpoint", save_checkpoint(self.model, self.path(Artifact.CHECKPOINT),
                                                   seed=optimizer_config.seed, objective=Objective.COORDINATES.value))
        self._record("alphas", save_alphas_csv(self.alphas, bundles, self.path(Artifact.ALPHAS)))
        fit_path = self.path(Artifact.FIT_REPORT)
        fit_path.write_text(self.fit.model_dump_json(indent=2), encoding='utf-8')
        self._record("fit_report", fit_path)
        embedding_path = save_embedding_csv(self.embedding, ds, self.path(Artifact.EMBEDDING))
        self._record("embedding", embedding_path)

        self.report.fit = self.fit
        self.report.m_used = int(m)
        self.report.embedding_path = str(embedding_path)

    # ------------------------------------------------------------ driver

    def _stage_method(self, stage):
        return {
            Stage.GENERATE: self.generate,
            Stage.TRANSPORT: self.transport,
            Stage.TANGENTS: self.tangents,
            Stage.ID: self.intrinsic_dimension,
            Stage.COORDS: self.coordinates,
        }[stage]

    def run(self, from_stage=Stage.GENERATE, to_stage=Stage.COORDS):
        """
        Execute stages from `from_stage` through `to_stage` and write report.json.

        Any error escaping a stage is raised as StageFailure once the partial report is saved.

        Returns:
            PipelineReport
        """
        from_stage, to_stage = Stage(from_stage), Stage(to_stage)
        if from_stage.position > to_stage.position:
            raise InvalidParameter(f"from-stage '{from_stage.value}' comes after '{to_stage.value}'")

        self.out_dir.mkdir(parents=True, exist_ok=True)
        report_path = self.path(Artifact.REPORT)
        if from_stage != Stage.GENERATE and report_path.exists():
            self.report = load_report(report_path)

        stages = Stage.ordered()[from_stage.position:to_stage.position + 1]
        for stage in stages:
            logger.info(f"Stage '{stage.value}' started")
            started = time.perf_counter()
            try:
                self._stage_method(stage)()
            except Exception as e:
                logger.error(f"Stage '{stage.value}' failed: {type(e).__name__}: {str(e)}")
                save_report(self.report, report_path)
                raise StageFailure(stage.value, e) from e
            self.report.timings[stage.value] = time.perf_counter() - started
            logger.info(f"Stage '{stage.value}' finished in {self.report.timings[stage.value]:.2f}s")

        self._record("report", report_path)
        save_report(self.report, report_path)
        return self.report


def run_pipeline(config, from_stage=Stage.GENERATE, to_stage=Stage.COORDS, progress=False):
    """
    Run the pipeline for a configuration.

    Args:
        config (PipelineConfig): Validated configuration
        from_stage (Stage): First stage to execute; earlier artifacts are read from the output directory
        to_stage (Stage): Last stage to execute
        progress (bool): Show progress bars

    Returns:
        PipelineReport
    """
    return PipelineRunner(config, progress=progress).run(from_stage, to_stage)


def report_from_directory(out_dir):
    """The report in out_dir, or one listing whichever artifacts exist there."""
    out_dir = Path(out_dir)
    report_path = out_dir / Artifact.REPORT
    if report_path.exists():
        return load_report(report_path)
    report = PipelineReport()
    for key, name in ARTIFACT_KEYS.items():
        if (out_dir / name).exists():
            report.artifacts[key] = str(out_dir / name)
    return report


def _artifact(report, key):
    path = report.artifacts.get(key)
    if path is None or not Path(path).exists():
        raise MissingArtifact(f"The report has no '{key}' artifact to plot")
    return Path(path)


def _label_text(label):
    return ",".join(f"{key}={value:g}" if isinstance(value, float) else f"{key}={value}"
                    for key, value in label.items())


def emit_plot_data(report, what, out_dir=None):
    """
    Write plain-text columns for external plotting.

    dataset    series, x, y (one series per sample over the grid)
    spectrum   anchor, local_id, ratio_1..ratio_k (sigma_j / sigma_1)
    embedding  sample_index, phi_1..phi_M, label

    Args:
        report (PipelineReport): Report whose artifacts are plotted
        what (PlotKind): Which plot data to write
        out_dir (str or Path, optional): Destination; defaults to plot_data/ next to the artifacts

    Returns:
        Path: The written file
    """
    what = PlotKind(what)
    if what == PlotKind.DATASET:
        source = _artifact(report, "dataset")
        ds = load_matrix(source)
        frame = pd.DataFrame({
            "series": np.repeat(np.arange(len(ds)), ds.ambient_dim),
            "x": np.tile(ds.grid.nodes, len(ds)),
            "y": ds.matrix().ravel(),
        })
    elif what == PlotKind.SPECTRUM:
        source = _artifact(report, "spectrum")
        reports = load_spectrum_csv(source)
        width = max(len(r.singular_values) for r in reports)
        rows = [[r.anchor_index, r.local_id, *(r.ratios() + [np.nan] * (width - len(r.singular_values)))]
                for r in reports]
        frame = pd.DataFrame(rows, columns=["anchor", "local_id"] + [f"ratio_{j + 1}" for j in range(width)])
    else:
        source = _artifact(report, "embedding")
        embedding = pd.read_csv(source, float_precision="round_trip")
        phi_columns = [c for c in embedding.columns if c.startswith("phi_")]
        label_columns = [c for c in embedding.columns if c not in phi_columns and c != "sample_index"]
        frame = embedding[["sample_index"] + phi_columns].copy()
        frame["label"] = [_label_text(record) for record in embedding[label_columns].to_dict("records")]

    target_dir = Path(out_dir) if out_dir else source.parent / Artifact.PLOT_DIR
    target_dir.mkdir(parents=True, exist_ok=True)
    target = target_dir / f"{what.value}.csv"
    frame.to_csv(target, index=False)
    logger.info(f"Wrote {what.value} plot data to {target}")
    return target
