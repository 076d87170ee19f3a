"""
Differentiable coordinate map phi: R^N -> R^M with analytic Jacobians.

Inputs are standardized, z = (f - mean) * scale, then passed through one smooth hidden
layer and a linear output:

    h = W1 z + b1,   phi = W2 act(h) + b2,   J = W2 diag(act'(h)) W1 diag(scale)

With width 0 the model is linear, phi = W z + b. Every loss in koopman_reg depends on
the parameters only through J, so the model exposes the parameter gradient of an
arbitrary functional of its Jacobians given dL/dJ.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
from scipy.special import expit

from config.settings import CHECKPOINT_SCHEMA_FILE
from models.errors import DimensionMismatch, InvalidParameter, ParseFailure

logger = logging.getLogger(__name__)


def _tanh(h):
    t = np.tanh(h)
    return t, 1.0 - t ** 2, -2.0 * t * (1.0 - t ** 2)


def _sigmoid(h):
    s = expit(h)
    d = s * (1.0 - s)
    return s, d, d * (1.0 - 2.0 * s)


def _softplus(h):
    s = expit(h)
    return np.logaddexp(0.0, h), s, s * (1.0 - s)


# name -> h -> (act, act', act'')
ACTIVATIONS = {
    "tanh": _tanh,
    "sigmoid": _sigmoid,
    "softplus": _softplus,
}

# pre-activation distance at which a chart unit has gone flat
CHART_REACH = {
    "tanh": 4.0,
    "sigmoid": 8.0,
}
CHART_GAP_FLOOR = 1e-9

LINEAR_PARAMS = ("W", "b")
HIDDEN_PARAMS = ("W1", "b1", "W2", "b2")


def standardization(matrix):
    """
    Per-coordinate mean and inverse spread of a data matrix.

    Spreads are floored at their mean over all coordinates, so coordinates that are
    numerically empty are not blown up.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    mean = matrix.mean(axis=0)
    spread = matrix.std(axis=0)
    floor = spread.mean()
    if not floor > 0:
        return mean, np.ones_like(mean)
    return mean, 1.0 / np.maximum(spread, floor)


@dataclass(eq=False)
class CoordinateModel:
    """One-hidden-layer coordinate map; `params` holds W, b (width 0) or W1, b1, W2, b2."""
    input_dim: int
    output_dim: int
    width: int
    activation: str
    mean: np.ndarray
    scale: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidParameter(f"Unknown activation '{self.activation}', "
                                   f"expected one of {sorted(ACTIVATIONS)}")
        self.mean = np.asarray(self.mean, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if self.mean.shape != (self.input_dim,) or self.scale.shape != (self.input_dim,):
            raise DimensionMismatch(f"Standardization constants must have length {self.input_dim}")

    @classmethod
    def initialize(cls, input_dim, output_dim, width=64, activation="tanh", rng=None, data=None):
        """
        Fresh model with weights drawn uniformly in +-1/sqrt(fan_in).

        Args:
            input_dim (int): N
            output_dim (int): M
            width (int): Hidden width; 0 builds the linear model
            activation (str): 'tanh', 'sigmoid' or 'softplus'
            rng (np.random.Generator): Seeded generator
            data (np.ndarray, optional): Samples (P, N) used for input standardization
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        if data is not None:
            mean, scale = standardization(data)
        else:
            mean, scale = np.zeros(input_dim), np.ones(input_dim)

        def layer(fan_out, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=(fan_out, fan_in)), rng.uniform(-bound, bound, size=fan_out)

        if width == 0:
            W, b = layer(output_dim, input_dim)
            params = {"W": W, "b": b}
        else:
            W1, b1 = layer(width, input_dim)
            W2, b2 = layer(output_dim, width)
            params = {"W1": W1, "b1": b1, "W2": W2, "b2": b2}
        return cls(input_dim=input_dim, output_dim=output_dim, width=width, activation=activation,
                   mean=mean, scale=scale, params=params)

    @classmethod
    def identity(cls, n):
        return cls.linear(np.eye(n))

    @classmethod
    def linear(cls, weight, bias=None):
        """phi(f) = weight f + bias, without standardization."""
        weight = np.atleast_2d(np.asarray(weight, dtype=float))
        m, n = weight.shape
        bias = np.zeros(m) if bias is None else np.asarray(bias, dtype=float)
        return cls(input_dim=n, output_dim=m, width=0, activation="tanh",
                   mean=np.zeros(n), scale=np.ones(n), params={"W": weight.copy(), "b": bias.copy()})

    @classmethod
    def from_charts(cls, anchors, frames, activation="tanh", data=None):
        """
        Hidden layer with one unit per anchor and frame direction.

        Unit (p, i) looks along frames[p, i] and is centered on anchor p. Its sharpness puts
        every other anchor at least CHART_REACH[activation] away in pre-activation, so the
        Jacobian at each anchor is close to that anchor's own frame.

        Args:
            anchors (np.ndarray): (P, N) anchor samples
            frames (np.ndarray): (P, M, N) orthonormal rows per anchor
            activation (str): 'tanh' or 'sigmoid'
            data (np.ndarray, optional): Samples for input standardization (default: the anchors)

        Returns:
            CoordinateModel: Width P * M
        """
        if activation not in CHART_REACH:
            raise InvalidParameter(f"Chart initialization needs one of {sorted(CHART_REACH)}, got '{activation}'")
        anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
        frames = np.asarray(frames, dtype=float)
        count, output_dim, input_dim = frames.shape
        if anchors.shape != (count, input_dim):
            raise DimensionMismatch(f"Need one frame per anchor: frames {frames.shape}, anchors {anchors.shape}")
        mean, scale = standardization(anchors if data is None else data)

        directions = frames.reshape(count * output_dim, input_dim)
        units = np.arange(directions.shape[0])
        owner = units // output_dim

        # projections[q, j]: position of anchor q along unit j's direction
        projections = (anchors - mean) @ directions.T
        centers = projections[owner, units]
        gaps = np.abs(projections - centers)
        gaps[owner, units] = np.inf
        finite = gaps[np.isfinite(gaps)]
        floor = CHART_GAP_FLOOR * finite.max() if finite.size and finite.max() > 0 else 1.0
        nearest = gaps.min(axis=0)
        nearest = np.where(np.isfinite(nearest), np.maximum(nearest, floor), 1.0)
        sharpness = CHART_REACH[activation] / nearest

        slope = ACTIVATIONS[activation](np.zeros(1))[1][0]
        W2 = np.zeros((output_dim, units.size))
        W2[units % output_dim, units] = 1.0 / (sharpness * slope)
        params = {
            "W1": sharpness[:, None] * directions / scale,
            "b1": -sharpness * centers,
            "W2": W2,
            "b2": np.zeros(output_dim),
        }
        logger.debug(f"Chart units: sharpness {sharpness.min():.3e}..{sharpness.max():.3e}")
        return cls(input_dim=input_dim, output_dim=output_dim, width=units.size, activation=activation,
                   mean=mean, scale=scale, params=params)

    @property
    def param_names(self):
        return LINEAR_PARAMS if self.width == 0 else HIDDEN_PARAMS

    @property
    def is_linear(self):
        return self.width == 0

    def copy(self):
        return CoordinateModel(input_dim=self.input_dim, output_dim=self.output_dim, width=self.width,
                               activation=self.activation, mean=self.mean.copy(), scale=self.scale.copy(),
                               params={name: value.copy() for name, value in self.params.items()})

    def _inputs(self, samples):
        samples = np.asarray(samples, dtype=float)
        single = samples.ndim == 1
        samples = np.atleast_2d(samples)
        if samples.shape[1] != self.input_dim:
            raise DimensionMismatch(f"Model expects inputs of length {self.input_dim}, got {samples.shape[1]}")
        return (samples - self.mean) * self.scale, single

    def _hidden(self, z):
        h = z @ self.params["W1"].T + self.params["b1"]
        return (h, *ACTIVATIONS[self.activation](h))

    def forward(self, samples):
        """phi at one sample (N,) -> (M,) or at many (P, N) -> (P, M)."""
        z, single = self._inputs(samples)
        if self.is_linear:
            out = z @ self.params["W"].T + self.params["b"]
        else:
            _, a, _, _ = self._hidden(z)
            out = a @ self.params["W2"].T + self.params["b2"]
        return out[0] if single else out

    def jacobian(self, samples):
        """Jacobian of phi: (M, N) at one sample or (P, M, N) at many."""
        z, single = self._inputs(samples)
        if self.is_linear:
            J = np.broadcast_to(self.params["W"] * self.scale, (z.shape[0], self.output_dim, self.input_dim)).copy()
        else:
            _, _, d, _ = self._hidden(z)
            W1s = self.params["W1"] * self.scale
            J = np.einsum("mk,pk,kn->pmn", self.params["W2"], d, W1s)
        return J[0] if single else J

    def jacobian_param_grad(self, samples, grad_J):
        """
        Parameter gradient of a scalar L(J_1, ..., J_P) given G_p = dL/dJ_p.

        Args:
            samples (np.ndarray): (P, N) inputs the Jacobians were taken at
            grad_J (np.ndarray): (P, M, N) upstream gradient

        Returns:
            dict: Gradient per parameter name, same shapes as `params`
        """
        z, _ = self._inputs(samples)
        G = np.asarray(grad_J, dtype=float).reshape(z.shape[0], self.output_dim, self.input_dim)

        if self.is_linear:
            return {"W": G.sum(axis=0) * self.scale, "b": np.zeros(self.output_dim)}

        W1, W2 = self.params["W1"], self.params["W2"]
        _, _, d, dd_act = self._hidden(z)
        W1s = W1 * self.scale
        W2tG = np.einsum("mk,pmn->pkn", W2, G)

        dW2 = np.einsum("pmn,kn,pk->mk", G, W1s, d)
        dd = np.einsum("pkn,kn->pk", W2tG, W1s)
        dW1 = np.einsum("pk,pkn->kn", d, W2tG) * self.scale
        dh = dd * dd_act
        dW1 += dh.T @ z
        return {"W1": dW1, "b1": dh.sum(axis=0), "W2": dW2, "b2": np.zeros(self.output_dim)}

    def get_flat(self):
        return np.concatenate([self.params[name].ravel() for name in self.param_names])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        expected = sum(self.params[name].size for name in self.param_names)
        if theta.size != expected:
            raise DimensionMismatch(f"Flat parameter vector has {theta.size} entries, model has {expected}")
        offset = 0
        for name in self.param_names:
            shape = self.params[name].shape
            size = self.params[name].size
            self.params[name] = theta[offset:offset + size].reshape(shape).copy()
            offset += size

    def flatten_grad(self, grads):
        return np.concatenate([np.asarray(grads[name]).ravel() for name in self.param_names])

    def is_finite(self):
        return all(np.all(np.isfinite(value)) for value in self.params.values())

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "width": self.width,
            "activation": self.activation,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "parameters": {
                name: {"shape": list(self.params[name].shape), "values": self.params[name].ravel().tolist()}
                for name in self.param_names
            },
        }

    @classmethod
    def from_dict(cls, payload):
        params = {name: np.asarray(entry["values"], dtype=float).reshape(entry["shape"])
                  for name, entry in payload["parameters"].items()}
        model = cls(input_dim=payload["input_dim"], output_dim=payload["output_dim"], width=payload["width"],
                    activation=payload["activation"], mean=payload["mean"], scale=payload["scale"],
                    params=params)
        if set(params) != set(model.param_names):
            raise ParseFailure(f"Checkpoint parameters {sorted(params)} do not match "
                               f"a width-{model.width} model")
        return model


def _load_schema():
    with open(CHECKPOINT_SCHEMA_FILE, 'r', encoding='utf-8') as f:
        return json.load(f)


def validate_checkpoint(payload):
    try:
        jsonschema.validate(instance=payload, schema=_load_schema())
    except jsonschema.exceptions.ValidationError as e:
        raise ParseFailure(f"Checkpoint validation failed: {e.message}") from e


def save_checkpoint(model, path, **metadata):
    """Write the model as JSON (architecture, standardization, parameters) plus metadata."""
    payload = model.to_dict()
    payload.update(metadata)
    validate_checkpoint(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2)
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_checkpoint(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseFailure(f"Checkpoint {path} is not valid JSON: {e}") from e
    validate_checkpoint(payload)
    return CoordinateModel.from_dict(payload)
