"""
Small softplus MLP approximating the distance field of one link.

The network maps (p_x, p_y, p_z, theta, cos phi, sin phi) to a distance. Its
gradient with respect to the point is exact (reverse sweep), and so is the
parameter gradient of the training loss, Eikonal term included: the forward
pass carries the three tangents d/dp_x, d/dp_y, d/dp_z next to the values,
and one reverse sweep over the tangent-augmented graph produces the mixed
second derivatives.
"""
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ncedfpy import fileutil, streams
from ncedfpy.common import ConfigError, logger, prefix_logger
from ncedfpy.datagen import Dataset, DatasetSpec, ErrorMetrics, compute_error_metrics
from ncedfpy.kinematics import LinkConfig, LinkGeometry

INPUT_DIM = 6
POINT_DIM = 3
SOFTPLUS_THRESHOLD = 20.0
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
ACTIVATION = "softplus"
INPUT_ENCODING = "theta_cos_sin"


@dataclass
class MlpParams:
    """Weights shaped (out, in) and biases shaped (out,), input layer first."""

    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2:
            raise ValueError("A network needs at least an input and an output layer")
        if self.layer_dims[0] != INPUT_DIM or self.layer_dims[-1] != 1:
            raise ValueError(
                "Expected input dim {} and output dim 1, got {}".format(INPUT_DIM, self.layer_dims)
            )
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("Layer count does not match layer_dims {}".format(self.layer_dims))
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[k + 1], self.layer_dims[k])
            if W.shape != shape or b.shape != (shape[0],):
                raise ValueError(
                    "Layer {} has shapes {} and {}, expected {}".format(k, W.shape, b.shape, shape)
                )

    @property
    def hidden_layers(self) -> int:
        return len(self.layer_dims) - 2

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    def arrays(self) -> List[np.ndarray]:
        """All parameter arrays in a fixed order: W_0, b_0, W_1, b_1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    @classmethod
    def from_arrays(cls, layer_dims: Sequence[int], arrays: Sequence[np.ndarray]) -> "MlpParams":
        return cls(list(layer_dims), list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "MlpParams":
        return MlpParams.from_arrays(self.layer_dims, [a.copy() for a in self.arrays()])

    def astype(self, dtype) -> "MlpParams":
        return MlpParams.from_arrays(self.layer_dims, [a.astype(dtype) for a in self.arrays()])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    batch_size: int = 256
    epochs: int = 100
    lambda_E: float = 0.05
    lambda_O: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("learning_rate, batch_size and epochs must be positive")
        if self.lambda_E < 0 or self.lambda_O < 0:
            raise ConfigError("Loss weights must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "lambda_E": self.lambda_E,
            "lambda_O": self.lambda_O,
            "seed": self.seed,
        }


@dataclass
class AdamState:
    step: int
    m: List[np.ndarray]
    v: List[np.ndarray]
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros(cls, params: MlpParams) -> "AdamState":
        return cls(
            step=0,
            m=[np.zeros_like(a) for a in params.arrays()],
            v=[np.zeros_like(a) for a in params.arrays()],
        )


class LossTerms(NamedTuple):
    total: float
    distance: float
    eikonal: float
    overestimation: float


class EpochRecord(NamedTuple):
    epoch: int
    train_loss: float
    val_mae: float
    val_rmse: float
    val_moe: float


@dataclass
class LinkModel:
    """A trained network plus the geometry and run metadata it was trained with."""

    params: MlpParams
    geometry: LinkGeometry
    training_meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def box(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """The workspace sampling box of the training set, when recorded."""
        spec = self.training_meta.get("dataset", {})
        if "box_min" not in spec or "box_max" not in spec:
            return None
        return np.array(spec["box_min"], dtype=float), np.array(spec["box_max"], dtype=float)

    @property
    def audit_slack(self) -> Optional[float]:
        """
        Final validation MOE plus the label error bound of the training recipe:
        how far the estimate may exceed an exact distance. None when the model
        file does not record both.
        """
        moe = self.training_meta.get("final", {}).get("val_moe")
        spec = self.training_meta.get("dataset")
        if moe is None or not spec:
            return None
        return float(moe) + DatasetSpec.from_dict(spec).label_error_bound(self.geometry)


def network_shape(layers: int, width: int) -> List[int]:
    """layer_dims for `layers` hidden layers of `width` units."""
    if layers < 0 or width < 1:
        raise ConfigError("Invalid network shape {} x {}".format(layers, width))
    return [INPUT_DIM] + [width] * layers + [1]


def parse_net_shape(text: str) -> Tuple[int, int]:
    """Parses "layers,width" strings such as "4,16"."""
    try:
        layers, width = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError("Invalid network shape '{}', expected LAYERS,WIDTH".format(text)) from None
    network_shape(layers, width)
    return layers, width


def init_params(layer_dims: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(list(layer_dims), weights, biases)


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return np.where(
        x > SOFTPLUS_THRESHOLD,
        x + np.log1p(np.exp(-np.maximum(x, SOFTPLUS_THRESHOLD))),
        np.log1p(np.exp(np.minimum(x, SOFTPLUS_THRESHOLD))),
    )


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Derivative of softplus."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def encode_input(p: Sequence[float], q: LinkConfig) -> np.ndarray:
    return np.array([p[0], p[1], p[2], q.theta, math.cos(q.phi), math.sin(q.phi)], dtype=float)


def encode_batch(points: np.ndarray, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Network inputs (n, 6) for points (n, 3) and per-row link angles (n,)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (len(points),))
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (len(points),))
    return np.column_stack([points, theta, np.cos(phi), np.sin(phi)])


def encode_dataset(dataset: Dataset) -> np.ndarray:
    return encode_batch(dataset.points, dataset.theta, dataset.phi)


def _check_inputs(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=params.dtype)
    if inputs.ndim != 2 or inputs.shape[1] != params.layer_dims[0]:
        raise ValueError(
            "Expected inputs shaped (n, {}), got {}".format(params.layer_dims[0], inputs.shape)
        )
    return inputs


def mlp_forward_batch(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """Distance estimates (n,) for encoded inputs (n, 6)."""
    h = _check_inputs(params, inputs)
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        h = softplus(h @ W.T + b)
    return (h @ params.weights[-1].T + params.biases[-1])[:, 0]


def mlp_forward_rows(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """
    mlp_forward_batch accumulated one input unit at a time, so that every row
    comes out bit for bit the same whatever batch it is evaluated in.
    """
    h = _check_inputs(params, inputs)
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = np.repeat(b[None, :], len(h), axis=0)
        for j in range(W.shape[1]):
            z += h[:, j, None] * W[:, j]
        h = z if k == last else softplus(z)
    return h[:, 0]


def mlp_forward(params: MlpParams, inputs: Sequence[float]) -> float:
    inputs = np.asarray(inputs)
    if inputs.shape != (params.layer_dims[0],):
        raise ValueError("Expected a {}-vector, got shape {}".format(params.layer_dims[0], inputs.shape))
    return float(mlp_forward_batch(params, inputs[None, :])[0])


def input_gradients(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """Gradients (n, 3) of the output with respect to the point coordinates."""
    h = _check_inputs(params, inputs)
    pre = []
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ W.T + b
        pre.append(z)
        h = softplus(z)
    grad = np.broadcast_to(params.weights[-1], (len(h), params.weights[-1].shape[1]))
    for W, z in zip(reversed(params.weights[:-1]), reversed(pre)):
        grad = (grad * sigmoid(z)) @ W
    return np.array(grad[:, :POINT_DIM])


def mlp_input_gradient(params: MlpParams, inputs: Sequence[float]) -> np.ndarray:
    inputs = np.asarray(inputs)
    if inputs.shape != (params.layer_dims[0],):
        raise ValueError("Expected a {}-vector, got shape {}".format(params.layer_dims[0], inputs.shape))
    return input_gradients(params, inputs[None, :])[0]


def eikonal_residual(params: MlpParams, inputs: np.ndarray) -> float:
    """Mean |‖∇_p Γ̂‖ − 1| over the inputs."""
    grads = input_gradients(params, inputs)
    return float(np.mean(np.abs(np.linalg.norm(grads, axis=1) - 1.0)))


def lipschitz_bound(params: MlpParams) -> float:
    """Product of the layer spectral norms; softplus is 1-Lipschitz."""
    bound = 1.0
    for W in params.weights:
        bound *= float(np.linalg.norm(W, 2))
    return bound


def _forward_with_tangents(params: MlpParams, inputs: np.ndarray):
    """
    Forward pass carrying the tangents along the three point directions.
    Returns the output (n,), its point gradient (n, 3) and the per-layer
    (h, hdot, z, zdot) needed by the reverse sweep.
    """
    n = len(inputs)
    h = inputs
    hdot = np.zeros((POINT_DIM, n, inputs.shape[1]))
    for k in range(POINT_DIM):
        hdot[k, :, k] = 1.0
    tape = []
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ W.T + b
        zdot = hdot @ W.T
        tape.append((h, hdot, z, zdot))
        s = sigmoid(z)
        h = softplus(z)
        hdot = s * zdot
    W_out, b_out = params.weights[-1], params.biases[-1]
    y = (h @ W_out.T + b_out)[:, 0]
    g = (hdot @ W_out.T)[:, :, 0].T
    return y, g, h, hdot, tape


def _loss_and_gradients(
    params: MlpParams, inputs: np.ndarray, targets: np.ndarray, lambda_E: float, lambda_O: float
) -> Tuple[LossTerms, MlpParams]:
    n = len(inputs)
    if n == 0:
        raise ValueError("Cannot evaluate the loss of an empty batch")
    inputs = _check_inputs(params, inputs)
    y, g, h, hdot, tape = _forward_with_tangents(params, inputs)
    residual = y - targets
    over = np.maximum(0.0, residual)
    norm = np.linalg.norm(g, axis=1)
    terms = LossTerms(
        total=0.0,
        distance=float(np.mean(residual ** 2)),
        eikonal=float(np.mean((norm - 1.0) ** 2)),
        overestimation=float(np.mean(over ** 2)),
    )
    terms = terms._replace(
        total=terms.distance + lambda_E * terms.eikonal + lambda_O * terms.overestimation
    )

    y_bar = (2.0 * residual + 2.0 * lambda_O * over) / n
    safe = np.where(norm > 0.0, norm, 1.0)
    g_bar = np.where(
        (norm > 0.0)[:, None], (lambda_E * 2.0 * (norm - 1.0) / n / safe)[:, None] * g, 0.0
    )

    W_out = params.weights[-1]
    grad_W = [np.empty(0)] * len(params.weights)
    grad_b = [np.empty(0)] * len(params.weights)
    grad_W[-1] = (y_bar @ h + np.einsum("nk,kni->i", g_bar, hdot))[None, :]
    grad_b[-1] = np.array([y_bar.sum()])
    h_bar = y_bar[:, None] * W_out
    hdot_bar = g_bar.T[:, :, None] * W_out[None, :, :]

    for layer in range(len(tape) - 1, -1, -1):
        h_in, hdot_in, z, zdot = tape[layer]
        s = sigmoid(z)
        ds = s * (1.0 - s)
        z_bar = h_bar * s + np.sum(hdot_bar * zdot, axis=0) * ds
        zdot_bar = hdot_bar * s
        W = params.weights[layer]
        grad_W[layer] = z_bar.T @ h_in + np.einsum("kno,kni->oi", zdot_bar, hdot_in)
        grad_b[layer] = z_bar.sum(axis=0)
        if layer > 0:
            h_bar = z_bar @ W
            hdot_bar = zdot_bar @ W

    return terms, MlpParams(list(params.layer_dims), grad_W, grad_b)


def loss_terms(
    params: MlpParams, inputs: np.ndarray, targets: np.ndarray, lambda_E: float, lambda_O: float
) -> LossTerms:
    return _loss_and_gradients(params, inputs, targets, lambda_E, lambda_O)[0]


def loss_and_param_gradients(
    params: MlpParams, batch: Dataset, lambda_E: float, lambda_O: float
) -> Tuple[float, MlpParams]:
    """Total loss of the batch and its exact gradient shaped like params."""
    if len(batch) == 0:
        raise ValueError("Cannot evaluate the loss of an empty batch")
    terms, grads = _loss_and_gradients(params, encode_dataset(batch), batch.d, lambda_E, lambda_O)
    return terms.total, grads


def adam_step(
    params: MlpParams, grads: MlpParams, state: AdamState, lr: float
) -> Tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(state.m) != len(p_arrays):
        raise ValueError("Parameter, gradient and optimizer state layouts differ")
    step = state.step + 1
    c1 = 1.0 - state.beta1 ** step
    c2 = 1.0 - state.beta2 ** step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape or v.shape != p.shape:
            raise ValueError("Shape mismatch {} vs {}".format(p.shape, g.shape))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(step, new_m, new_v, state.beta1, state.beta2, state.eps)
    return MlpParams.from_arrays(params.layer_dims, new_p), new_state


def validation_metrics(params: MlpParams, dataset: Dataset) -> ErrorMetrics:
    return compute_error_metrics(mlp_forward_batch(params, encode_dataset(dataset)), dataset.d)


def train(
    dataset: Dataset,
    val_dataset: Dataset,
    layer_dims: Sequence[int],
    cfg: TrainConfig,
) -> Tuple[MlpParams, List[EpochRecord]]:
    """
    Mini-batch Adam on the full loss. Batches come from a seeded permutation per
    epoch; the returned parameters are those of the final epoch.
    """
    if len(dataset) == 0:
        raise ValueError("Cannot train on an empty dataset")
    log = prefix_logger("net {},{}".format(len(layer_dims) - 2, max(layer_dims[1:-1], default=0)))
    params = init_params(layer_dims, streams.stream(cfg.seed, streams.TRAINING, 0))
    state = AdamState.zeros(params)
    shuffle = streams.stream(cfg.seed, streams.TRAINING, 1)
    inputs, targets = encode_dataset(dataset), dataset.d
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            terms, grads = _loss_and_gradients(
                params, inputs[idx], targets[idx], cfg.lambda_E, cfg.lambda_O
            )
            params, state = adam_step(params, grads, state, cfg.learning_rate)
            total += terms.total * len(idx)
            log.debug("epoch %d batch %d loss %.6g", epoch, start // cfg.batch_size, terms.total)
        metrics = validation_metrics(params, val_dataset)
        record = EpochRecord(epoch, total / len(order), metrics.mae, metrics.rmse, metrics.moe)
        history.append(record)
        log.info(
            "epoch %d loss %.6g val MAE %.5f RMSE %.5f MOE %.5f",
            epoch, record.train_loss, record.val_mae, record.val_rmse, record.val_moe,
        )
    return params, history


def mean_query_ms(params: MlpParams, inputs: np.ndarray) -> float:
    """Mean wall-clock time of single-input forward passes, in milliseconds."""
    inputs = np.asarray(inputs, dtype=float)
    start = time.perf_counter()
    for row in inputs:
        mlp_forward(params, row)
    return 1000.0 * (time.perf_counter() - start) / max(1, len(inputs))


def save_model(
    path: str, params: MlpParams, geometry: LinkGeometry, training_meta: Dict[str, Any]
) -> None:
    fileutil.write_json_atomic(
        path,
        {
            "layer_dims": list(params.layer_dims),
            "activation": ACTIVATION,
            "weights": [W.astype(float).reshape(-1).tolist() for W in params.weights],
            "biases": [b.astype(float).tolist() for b in params.biases],
            "link_geometry": geometry.to_dict(),
            "input_encoding": INPUT_ENCODING,
            "training_meta": training_meta,
        },
    )
    logger().info("Wrote model %s", path)


def load_model(path: str) -> LinkModel:
    data = fileutil.read_json(path)
    try:
        if data["activation"] != ACTIVATION or data["input_encoding"] != INPUT_ENCODING:
            raise ConfigError(
                "Unsupported model '{}': activation {} encoding {}".format(
                    path, data["activation"], data["input_encoding"]
                )
            )
        dims = [int(d) for d in data["layer_dims"]]
        weights = [
            np.array(w, dtype=float).reshape(dims[k + 1], dims[k])
            for k, w in enumerate(data["weights"])
        ]
        biases = [np.array(b, dtype=float) for b in data["biases"]]
        params = MlpParams(dims, weights, biases)
        geometry = LinkGeometry.from_dict(data["link_geometry"])
    except (KeyError, TypeError, ValueError, IndexError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("Invalid model file '{}': {}".format(path, e)) from None
    return LinkModel(params, geometry, data.get("training_meta", {}))
