"""
Koopman Regularization: fit functionally independent coordinate functions by gradient
descent with a log-determinant barrier on the Jacobian.

Two objectives share the optimizer:

  unit_velocity  mean ||J_m(x) P(x) - 1||^2 over samples of a vector field P
  coordinates    mean ||V - J_phi(f0)^T alpha||^2 / ||V||^2 over all tangent rows V

and the barrier -beta * sum log det(J J^T + eps I) keeps J at full row rank on the data.
The coordinates objective uses the scale-free form of the barrier, log det G - M log(tr G / M),
which is unchanged when J is rescaled. Coordinate fits start by default
from a chart model whose Jacobian at each anchor already spans that anchor's tangent rows.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist
from tqdm import tqdm

from api.coordinate_model import CHART_REACH, CoordinateModel
from models.constants import DEGENERATE_ROW_NORM, SINGULAR_JACOBIAN_SV, AlphaMode, ModelInit, Objective
from models.errors import (DimensionMismatch, EmptyBundles, InvalidParameter, NonFiniteLoss,
                           SingularJacobian)
from models.koopman import AlphaTable, CoordinateInputs, FitReport, OptimizerConfig, VectorFieldSamples

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- unit velocity

def _check_field_model(model, samples):
    if model.input_dim != samples.dim or model.output_dim != samples.dim:
        raise DimensionMismatch(f"Unit-velocity model must map R^{samples.dim} to R^{samples.dim}, "
                                f"got R^{model.input_dim} -> R^{model.output_dim}")


def unit_velocity_terms(model, samples):
    """Loss and its gradient with respect to each point's Jacobian."""
    _check_field_model(model, samples)
    J = model.jacobian(samples.points)
    residual = np.einsum("pmn,pn->pm", J, samples.velocities) - 1.0
    count = len(samples)
    loss = float(np.sum(residual ** 2) / count)
    grad_J = (2.0 / count) * residual[:, :, None] * samples.velocities[:, None, :]
    return loss, grad_J


def loss_unit_velocity(model, samples):
    """
    Mean squared deviation of J_m(x) P(x) from the all-ones vector.

    Args:
        model (CoordinateModel): Map R^N -> R^N
        samples (VectorFieldSamples): Points and velocities

    Returns:
        float: Nonnegative loss
    """
    return unit_velocity_terms(model, samples)[0]


def _invertible_jacobian(model, point):
    J = model.jacobian(point)
    if J.shape[0] != J.shape[1]:
        raise DimensionMismatch(f"Field reconstruction needs a square Jacobian, got {J.shape}")
    smallest = np.linalg.svd(J, compute_uv=False)[-1]
    if smallest <= SINGULAR_JACOBIAN_SV:
        raise SingularJacobian(f"Jacobian is singular at the point (smallest singular value {smallest:.3e})")
    return J


def reconstruct_field(model, point):
    """Governing velocity P(x) = J_m(x)^-1 1 recovered from a trained unit-velocity model."""
    J = _invertible_jacobian(model, np.asarray(point, dtype=float))
    return np.linalg.solve(J, np.ones(J.shape[0]))


def reconstruct_field_reduced(model, alpha, point):
    """Velocity sum_i alpha_i grad m_i(x) for a model with fewer outputs than inputs."""
    alpha = np.asarray(alpha, dtype=float)
    J = model.jacobian(np.asarray(point, dtype=float))
    if alpha.shape != (J.shape[0],):
        raise DimensionMismatch(f"alpha has shape {alpha.shape}, expected ({J.shape[0]},)")
    return J.T @ alpha


# ---------------------------------------------------------------- coordinates

@dataclass(eq=False)
class TangentRows:
    """All tangent rows of a set of bundles, flattened, with their anchor and weight."""
    anchors: np.ndarray     # (P, N) anchor samples, one per bundle
    vectors: np.ndarray     # (R, N)
    owner: np.ndarray       # (R,) bundle position of each row
    weights: np.ndarray     # (R,) 1 / ||V||^2, 0 for skipped rows
    block_sizes: list

    @classmethod
    def from_bundles(cls, bundles, ds):
        bundles = list(bundles)
        if not bundles or all(bundle.row_count == 0 for bundle in bundles):
            raise EmptyBundles("No tangent rows to fit")
        if any(bundle.vectors.shape[1] != ds.ambient_dim for bundle in bundles if bundle.row_count):
            raise DimensionMismatch(f"Tangent rows do not have the ambient dimension {ds.ambient_dim}")

        anchors = np.vstack([ds.samples[bundle.anchor_index].values for bundle in bundles])
        vectors = np.vstack([bundle.vectors for bundle in bundles if bundle.row_count])
        owner = np.concatenate([np.full(bundle.row_count, p, dtype=int) for p, bundle in enumerate(bundles)])
        norms_sq = np.sum(vectors ** 2, axis=1)
        valid = np.sqrt(norms_sq) >= DEGENERATE_ROW_NORM
        if not np.any(valid):
            raise EmptyBundles("Every tangent row vanishes")
        weights = np.where(valid, 1.0 / np.where(valid, norms_sq, 1.0), 0.0)
        return cls(anchors=anchors, vectors=vectors, owner=owner, weights=weights,
                   block_sizes=[bundle.row_count for bundle in bundles])

    @property
    def valid_count(self):
        return int(np.count_nonzero(self.weights))

    def split(self, rows):
        """Cut an (R, M) array into per-bundle blocks."""
        return AlphaTable(np.split(rows, np.cumsum(self.block_sizes)[:-1]))


def _check_alphas(model, alphas, rows):
    if model.output_dim != alphas.width:
        raise DimensionMismatch(f"Model has {model.output_dim} outputs but alphas have width {alphas.width}")
    if [block.shape[0] for block in alphas.coefficients] != rows.block_sizes:
        raise DimensionMismatch("Alpha table does not have one coefficient vector per tangent row")


def coordinate_terms(model, rows, alpha_rows):
    """
    Relative decomposition residual and its gradients.

    Returns:
        tuple: (loss, dL/dJ per anchor (P, M, N), dL/dalpha (R, M))
    """
    J = model.jacobian(rows.anchors)
    J_rows = J[rows.owner]
    residual = rows.vectors - np.einsum("rm,rmn->rn", alpha_rows, J_rows)
    count = rows.valid_count
    loss = float(np.sum(rows.weights * np.sum(residual ** 2, axis=1)) / count)

    scale = (-2.0 / count) * rows.weights
    grad_rows = scale[:, None, None] * alpha_rows[:, :, None] * residual[:, None, :]
    grad_J = np.zeros_like(J)
    np.add.at(grad_J, rows.owner, grad_rows)
    grad_alpha = scale[:, None] * np.einsum("rmn,rn->rm", J_rows, residual)
    return loss, grad_J, grad_alpha


def loss_coordinates(model, alphas, bundles, ds):
    """
    Mean relative residual of decomposing each tangent on the coordinate gradients.

    Rows with norm below DEGENERATE_ROW_NORM are skipped.

    Args:
        model (CoordinateModel): Map R^N -> R^M
        alphas (AlphaTable): One M-vector per tangent row
        bundles (list of TangentBundle): Tangent bundles
        ds (DataSet): Data set the bundles are anchored in

    Returns:
        float: Nonnegative loss
    """
    if model.input_dim != ds.ambient_dim:
        raise DimensionMismatch(f"Model expects inputs of length {model.input_dim}, data has {ds.ambient_dim}")
    rows = TangentRows.from_bundles(bundles, ds)
    _check_alphas(model, alphas, rows)
    return coordinate_terms(model, rows, alphas.rows())[0]


def fit_alphas(model, rows):
    """Per-row least-squares coefficients against the current coordinate gradients."""
    J = model.jacobian(rows.anchors)
    solvers = np.linalg.pinv(np.transpose(J, (0, 2, 1)))
    return np.einsum("rmn,rn->rm", solvers[rows.owner], rows.vectors)


def tangent_frames(rows, output_dim, rng=None):
    """
    Orthonormal (M, N) frame per anchor spanning its leading tangent directions.

    The frame is the top M right singular vectors of the anchor's unit tangent rows,
    turned by a random rotation inside their span. Anchors with fewer than M usable rows
    are completed with random orthonormal directions.

    Returns:
        np.ndarray: (P, M, N)
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    count, dim = rows.anchors.shape
    if output_dim > dim:
        raise DimensionMismatch(f"Cannot fit {output_dim} orthonormal directions in R^{dim}")
    frames = np.empty((count, output_dim, dim))
    for p in range(count):
        mine = (rows.owner == p) & (rows.weights > 0)
        unit = rows.vectors[mine] * np.sqrt(rows.weights[mine])[:, None]
        basis = np.linalg.svd(unit, full_matrices=False)[2][:output_dim] if unit.shape[0] else np.empty((0, dim))
        if basis.shape[0] < output_dim:
            filler = rng.normal(size=(output_dim - basis.shape[0], dim))
            basis = np.linalg.qr(np.vstack([basis, filler]).T)[0].T
        rotation = np.linalg.qr(rng.normal(size=(output_dim, output_dim)))[0]
        frames[p] = rotation @ basis
    return frames


# ---------------------------------------------------------------- barrier

def barrier_terms(model, points, eps, beta, normalized=False):
    """
    Barrier value, its gradient per point Jacobian, and the number of near-singular points.

    The normalized form adds M log(tr(G) / M) per point, G = J J^T + eps I. It does not
    change when J is rescaled, is 0 when all singular values are equal and grows as J
    loses rank.
    """
    J = model.jacobian(np.atleast_2d(points))
    M = J.shape[1]
    gram = J @ np.transpose(J, (0, 2, 1)) + eps * np.eye(M)
    _, logdet = np.linalg.slogdet(gram)
    near_singular = int(np.sum(logdet <= M * np.log(eps)))
    if beta == 0:
        return 0.0, np.zeros_like(J), near_singular
    grad_J = -2.0 * beta * np.linalg.solve(gram, J)
    if normalized:
        trace = np.trace(gram, axis1=1, axis2=2)
        logdet = logdet - M * np.log(trace / M)
        grad_J = grad_J + (2.0 * beta * M / trace)[:, None, None] * J
    value = float(-beta * np.sum(logdet))
    return value, grad_J, near_singular


def barrier(model, points, eps, beta, normalized=False):
    """
    -beta * sum over points of log det(J J^T + eps I).

    Args:
        model (CoordinateModel): Coordinate map
        points (np.ndarray): (P, N) evaluation points
        eps (float): Regularization, > 0
        beta (float): Barrier weight, >= 0
        normalized (bool): Divide each Gram matrix by its mean eigenvalue first, so only
            the loss of rank is penalized and not the scale of J

    Returns:
        float: Barrier value (0 when beta is 0)
    """
    if not eps > 0 or beta < 0:
        raise InvalidParameter(f"barrier needs eps > 0 and beta >= 0, got eps={eps}, beta={beta}")
    value, _, near_singular = barrier_terms(model, points, eps, beta, normalized=normalized)
    if near_singular:
        logger.warning(f"det(J J^T + eps I) <= eps^M at {near_singular} points")
    return value


def min_jacobian_sv(model, points):
    J = model.jacobian(np.atleast_2d(points))
    return float(np.min(np.linalg.svd(J, compute_uv=False)[:, -1]))


# ---------------------------------------------------------------- optimizer

class _Adam:
    """First/second-moment adaptive steps over an array of fixed shape."""

    def __init__(self, shape, config):
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.lr = config.step_size
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _problem(objective, inputs):
    if objective == Objective.UNIT_VELOCITY:
        if not isinstance(inputs, VectorFieldSamples):
            raise InvalidParameter("unit_velocity expects VectorFieldSamples")
        return inputs.points, inputs.dim, inputs.dim, None
    if isinstance(inputs, (tuple, list)):
        inputs = CoordinateInputs(*inputs)
    if not isinstance(inputs, CoordinateInputs):
        raise InvalidParameter("coordinates expects CoordinateInputs(bundles, ds, output_dim)")
    if inputs.output_dim < 1:
        raise InvalidParameter(f"Number of coordinates must be at least 1, got {inputs.output_dim}")
    rows = TangentRows.from_bundles(inputs.bundles, inputs.ds)
    return rows.anchors, inputs.ds.ambient_dim, inputs.output_dim, rows


def _initial_model(config, input_dim, output_dim, points, rows, rng):
    """Chart model for coordinate fits with a hidden layer, seeded uniform weights otherwise."""
    if rows is not None and config.width > 0 and ModelInit(config.init) == ModelInit.CHART:
        if config.activation in CHART_REACH and output_dim <= input_dim:
            frames = tangent_frames(rows, output_dim, rng)
            logger.info(f"Chart initialization with {frames.shape[0] * output_dim} hidden units")
            return CoordinateModel.from_charts(rows.anchors, frames, activation=config.activation, data=points)
        logger.warning(f"Chart initialization needs activation in {sorted(CHART_REACH)} and M <= N, "
                       f"using uniform weights")
    return CoordinateModel.initialize(input_dim, output_dim, width=config.width, activation=config.activation,
                                      rng=rng, data=points)


def optimize(objective, inputs, config=None, model=None):
    """
    Minimize loss + barrier with adaptive gradient steps, returning the best-loss iterate.

    The barrier weight starts at config.barrier_beta and is multiplied by
    config.barrier_decay every config.decay_interval() steps.

    Args:
        objective (Objective): 'unit_velocity' or 'coordinates'
        inputs: VectorFieldSamples, or CoordinateInputs(bundles, ds, output_dim)
        config (OptimizerConfig): Seed, step count, step size, barrier schedule, architecture
        model (CoordinateModel, optional): Starting model; a seeded fresh one by default

    Returns:
        tuple: (CoordinateModel, AlphaTable or None, FitReport)
    """
    objective = Objective(objective)
    config = config or OptimizerConfig()
    points, input_dim, output_dim, rows = _problem(objective, inputs)

    rng = np.random.default_rng(config.seed)
    if model is None:
        model = _initial_model(config, input_dim, output_dim, points, rows, rng)
    else:
        model = model.copy()

    alpha_rows = fit_alphas(model, rows) if rows is not None else None
    theta = model.get_flat()
    adam = _Adam(theta.shape, config)
    adam_alpha = _Adam(alpha_rows.shape, config) if alpha_rows is not None else None
    refit = AlphaMode(config.alpha_mode) == AlphaMode.REFIT

    beta = config.barrier_beta
    interval = config.decay_interval()
    loss_history, beta_history = [], []
    best_loss, best_step, best_model, best_alphas = np.inf, 0, model.copy(), alpha_rows
    warnings_seen = 0

    logger.info(f"Optimizing {objective.value}: {config.steps} steps, width {model.width}, "
                f"{output_dim} outputs, {len(points)} points")
    for step in tqdm(range(config.steps), desc=f"Optimizing {objective.value}", disable=not config.progress):
        if step > 0 and step % interval == 0:
            beta *= config.barrier_decay

        if rows is None:
            loss, grad_J = unit_velocity_terms(model, inputs)
            grad_alpha = None
        else:
            if refit and step > 0:
                alpha_rows = fit_alphas(model, rows)
            loss, grad_J, grad_alpha = coordinate_terms(model, rows, alpha_rows)
        if not np.isfinite(loss):
            logger.error(f"Non-finite loss at step {step}")
            raise NonFiniteLoss(step)

        barrier_value, barrier_grad, near_singular = barrier_terms(model, points, config.barrier_eps, beta,
                                                                   normalized=rows is not None)
        if near_singular:
            warnings_seen += 1
            logger.debug(f"Step {step}: barrier near-singular at {near_singular} points")
        if not np.isfinite(barrier_value):
            logger.error(f"Non-finite barrier at step {step}")
            raise NonFiniteLoss(step, f"Non-finite barrier at optimizer step {step}")

        loss_history.append(loss)
        beta_history.append(beta)
        if loss < best_loss:
            best_loss, best_step = loss, step
            best_model = model.copy()
            best_alphas = alpha_rows.copy() if alpha_rows is not None else None

        grad = model.flatten_grad(model.jacobian_param_grad(points, grad_J + barrier_grad))
        if not np.all(np.isfinite(grad)):
            raise NonFiniteLoss(step, f"Non-finite gradient at optimizer step {step}")
        theta = theta - adam.step(grad)
        model.set_flat(theta)
        if grad_alpha is not None and not refit:
            alpha_rows = alpha_rows - adam_alpha.step(grad_alpha)
        if not model.is_finite():
            raise NonFiniteLoss(step, f"Parameters became non-finite at optimizer step {step}")

    if rows is None:
        alphas = None
        final_residual = loss_unit_velocity(best_model, inputs)
    else:
        alphas = rows.split(best_alphas)
        final_residual = coordinate_terms(best_model, rows, best_alphas)[0]

    improved = best_loss < loss_history[0]
    if not improved and config.steps > 1:
        logger.warning(f"No improvement over the initial loss {loss_history[0]:.6e} in {config.steps} steps")

    smallest = min_jacobian_sv(best_model, points)
    if smallest <= np.sqrt(config.barrier_eps):
        logger.warning(f"Smallest Jacobian singular value {smallest:.3e} at the data is below sqrt(eps)")
    logger.info(f"Best loss {best_loss:.6e} at step {best_step}, residual {final_residual:.6e}, "
                f"min Jacobian singular value {smallest:.3e}")

    report = FitReport(objective=objective.value, loss_history=loss_history, barrier_weight_history=beta_history,
                       final_residual=final_residual, min_jacobian_sv=smallest, best_step=best_step,
                       improved=improved, barrier_warnings=warnings_seen)
    return best_model, alphas, report


# ---------------------------------------------------------------- embedding

def embed(model, ds):
    """Coordinates phi(f) of every sample, shape (count, M)."""
    if model.input_dim != ds.ambient_dim:
        raise DimensionMismatch(f"Model expects inputs of length {model.input_dim}, data has {ds.ambient_dim}")
    return np.atleast_2d(model.forward(ds.matrix()))


def injectivity_gap(embedding):
    """Smallest pairwise distance between embedded points (inf for fewer than two)."""
    embedding = np.atleast_2d(np.asarray(embedding, dtype=float))
    if embedding.shape[0] < 2:
        return float("inf")
    return float(np.min(pdist(embedding)))


def push_tangents(model, bundle, ds):
    """Intrinsic-space velocities J_phi(f0) V for every row of a bundle, shape (rows, M)."""
    J = model.jacobian(ds.samples[bundle.anchor_index].values)
    return bundle.vectors @ J.T


def save_embedding_csv(embedding, ds, path):
    """sample_index, phi_1..phi_M, then one column per label key."""
    embedding = np.atleast_2d(embedding)
    frame = pd.DataFrame(embedding, columns=[f"phi_{j + 1}" for j in range(embedding.shape[1])])
    frame.insert(0, "sample_index", np.arange(embedding.shape[0]))
    labels = pd.DataFrame(ds.labels())
    if not labels.empty:
        frame = pd.concat([frame, labels], axis=1)
    frame.to_csv(path, index=False)
    return path


def save_alphas_csv(alphas, bundles, path):
    rows = []
    for bundle, block in zip(bundles, alphas.coefficients):
        for neighbor, coefficients in zip(bundle.neighbor_indices, block):
            rows.append([bundle.anchor_index, neighbor, *coefficients])
    columns = ["anchor", "neighbor"] + [f"alpha_{j + 1}" for j in range(alphas.width)]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    return path


class KoopmanRegularizer:
    """
    Fit-and-apply wrapper around optimize() for both objectives.

    After a fit, `model`, `alphas` and `report` hold the result.
    """

    def __init__(self, config=None):
        self.config = config or OptimizerConfig()
        self.model = None
        self.alphas = None
        self.report = None

    def fit_dynamics(self, samples):
        self.model, self.alphas, self.report = optimize(Objective.UNIT_VELOCITY, samples, self.config)
        return self

    def fit_coordinates(self, bundles, ds, output_dim):
        inputs = CoordinateInputs(bundles=bundles, ds=ds, output_dim=output_dim)
        self.model, self.alphas, self.report = optimize(Objective.COORDINATES, inputs, self.config)
        return self

    def _require_model(self):
        if self.model is None:
            raise InvalidParameter("KoopmanRegularizer has not been fitted")
        return self.model

    def embed(self, ds):
        return embed(self._require_model(), ds)

    def reconstruct(self, point):
        return reconstruct_field(self._require_model(), point)
