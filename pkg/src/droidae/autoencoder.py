"""Dense autoencoder written from scratch on numpy arrays.

Forward pass, summed squared reconstruction error, hand-derived
backpropagation and plain mini-batch gradient descent. 64-bit reals
throughout; everything is seeded and bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("sigmoid", "relu", "tanh", "linear")
INIT_SCHEMES = ("uniform-scaled", "normal-scaled")

DEFAULT_LAYER_SIZES = (40, 200, 100, 100, 40)
DEFAULT_ACTIVATIONS = ("sigmoid", "relu", "tanh", "sigmoid")


class AutoencoderError(Exception):
    pass


class DimensionMismatch(AutoencoderError):
    pass


class NonFiniteInput(AutoencoderError):
    pass


class DivergenceDetected(AutoencoderError):
    """Training hit a non-finite loss; carries the partial loss curve."""

    def __init__(self, message: str, loss_curve: list[float]):
        super().__init__(message)
        self.loss_curve = loss_curve


@dataclass(frozen=True)
class LayerSpec:
    input_size: int
    output_size: int
    activation: str

    def __post_init__(self):
        if self.input_size < 1 or self.output_size < 1:
            raise ValueError("layer sizes must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError("unknown activation %r" % self.activation)


@dataclass
class Layer:
    weights: np.ndarray  # (output_size, input_size)
    biases: np.ndarray  # (output_size,)
    activation: str

    @property
    def spec(self) -> LayerSpec:
        out_size, in_size = self.weights.shape
        return LayerSpec(in_size, out_size, self.activation)


@dataclass
class Network:
    layers: list[Layer]
    seed: int
    init_scheme: str = "uniform-scaled"
    tied: bool = False

    @property
    def input_size(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_size(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def layer_parameter_counts(self) -> tuple[int, ...]:
        return tuple(l.weights.size + l.biases.size for l in self.layers)

    @property
    def parameter_count(self) -> int:
        """Trainable parameters; tied decoder matrices are not re-counted."""
        total = sum(self.layer_parameter_counts)
        if self.tied:
            total -= sum(
                self.layers[len(self.layers) - 1 - k].weights.size
                for k in range(len(self.layers) // 2)
            )
        return total


def _check_chain(specs: list[LayerSpec]) -> None:
    for previous, current in zip(specs, specs[1:]):
        if previous.output_size != current.input_size:
            raise DimensionMismatch(
                "layer sizes do not chain: %d -> %d"
                % (previous.output_size, current.input_size)
            )


def _init_weights(rng: np.random.Generator, spec: LayerSpec, scheme: str) -> np.ndarray:
    fan = spec.input_size + spec.output_size
    shape = (spec.output_size, spec.input_size)
    if scheme == "uniform-scaled":
        limit = math.sqrt(6.0 / fan)
        return rng.uniform(-limit, limit, shape)
    if scheme == "normal-scaled":
        return rng.normal(0.0, math.sqrt(2.0 / fan), shape)
    raise ValueError("unknown init scheme %r" % scheme)


def build_network(
    layer_sizes: tuple[int, ...],
    activations: tuple[str, ...],
    seed: int,
    init_scheme: str = "uniform-scaled",
    tied: bool = False,
) -> Network:
    if len(activations) != len(layer_sizes) - 1:
        raise DimensionMismatch(
            "%d layer transitions but %d activations"
            % (len(layer_sizes) - 1, len(activations))
        )
    specs = [
        LayerSpec(layer_sizes[i], layer_sizes[i + 1], activations[i])
        for i in range(len(activations))
    ]
    _check_chain(specs)
    if tied and list(layer_sizes) != list(reversed(layer_sizes)):
        raise DimensionMismatch(
            "tied weights need a palindromic layer stack, got %r" % (layer_sizes,)
        )
    rng = np.random.default_rng(seed)
    layers = [
        Layer(
            weights=_init_weights(rng, spec, init_scheme),
            biases=np.zeros(spec.output_size),
            activation=spec.activation,
        )
        for spec in specs
    ]
    if tied:
        # Decoder matrices are transposed views of their encoder mirrors, so
        # one storage backs both and updates through either alias the same
        # parameters.
        for k in range(len(layers) // 2):
            layers[len(layers) - 1 - k].weights = layers[k].weights.T
    return Network(layers=layers, seed=seed, init_scheme=init_scheme, tied=tied)


def build_default_network(seed: int, init_scheme: str = "uniform-scaled") -> Network:
    """The default 40-200-100-100-40 stack, sigmoid/relu/tanh/sigmoid."""
    return build_network(
        DEFAULT_LAYER_SIZES, DEFAULT_ACTIVATIONS, seed, init_scheme
    )


def clone_network(net: Network) -> Network:
    layers = [
        Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in net.layers
    ]
    if net.tied:
        for k in range(len(layers) // 2):
            layers[len(layers) - 1 - k].weights = layers[k].weights.T
    return Network(
        layers=layers, seed=net.seed, init_scheme=net.init_scheme, tied=net.tied
    )


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        out = np.empty_like(z)
        positive = z >= 0
        out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
        exp_z = np.exp(z[~positive])
        out[~positive] = exp_z / (1.0 + exp_z)
        return out
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z  # linear


def _derivative_from_output(name: str, a: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "relu":
        # Zero pre-activation maps to zero output: subgradient 0 there.
        return (a > 0.0).astype(a.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(a)


def _as_batch(net: Network, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[1] != net.input_size:
        raise DimensionMismatch(
            "expected vectors of length %d, got shape %r"
            % (net.input_size, np.shape(x))
        )
    if not np.isfinite(arr).all():
        raise NonFiniteInput("input contains non-finite components")
    return arr


def _forward_batch(net: Network, batch: np.ndarray) -> list[np.ndarray]:
    activations = [batch]
    current = batch
    for layer in net.layers:
        current = _activate(
            layer.activation, current @ layer.weights.T + layer.biases
        )
        activations.append(current)
    return activations


def forward(net: Network, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run one vector through the stack.

    Returns the output plus every layer's post-activation values (input
    first), which backpropagation reuses.
    """
    activations = _forward_batch(net, _as_batch(net, x))
    return activations[-1][0], [a[0] for a in activations]


def reconstruction_error(net: Network, x) -> float:
    """Summed squared deviation between the input and its reconstruction."""
    batch = _as_batch(net, x)
    output = _forward_batch(net, batch)[-1]
    return float(np.sum((output - batch) ** 2))


def reconstruction_errors(net: Network, matrix) -> np.ndarray:
    """Per-row reconstruction errors for a batch of vectors."""
    batch = _as_batch(net, matrix)
    output = _forward_batch(net, batch)[-1]
    return np.sum((output - batch) ** 2, axis=1)


def _batch_gradients(
    net: Network, batch: np.ndarray, activations: list[np.ndarray]
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Mean over the batch of the per-sample loss gradient."""
    n = batch.shape[0]
    output = activations[-1]
    delta = 2.0 * (output - batch)
    delta = delta * _derivative_from_output(net.layers[-1].activation, output)
    gradients: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        gradients[k] = (
            delta.T @ activations[k] / n,
            delta.mean(axis=0),
        )
        if k > 0:
            delta = (delta @ net.layers[k].weights) * _derivative_from_output(
                net.layers[k - 1].activation, activations[k]
            )
    return gradients


def backward(net: Network, x) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact gradient of reconstruction_error w.r.t. every weight and bias."""
    batch = _as_batch(net, x)
    if batch.shape[0] != 1:
        raise DimensionMismatch("backward takes a single vector")
    activations = _forward_batch(net, batch)
    return _batch_gradients(net, batch, activations)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    shuffle_seed: int = 0
    init_scheme: str = "uniform-scaled"

    def __post_init__(self):
        if not math.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ValueError("learning rate must be finite and positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError("unknown init scheme %r" % self.init_scheme)


def train(
    net: Network, data, cfg: TrainConfig = TrainConfig()
) -> tuple[Network, list[float]]:
    """Mini-batch gradient descent on the reconstruction objective.

    Returns a trained copy (the input network is untouched) and the per-epoch
    mean reconstruction error. Deterministic given the network and
    cfg.shuffle_seed. Raises DivergenceDetected on any non-finite loss.
    """
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise DimensionMismatch("training data must be a non-empty 2-d batch")
    batch_all = _as_batch(net, matrix)
    n = batch_all.shape[0]

    trained = clone_network(net)
    rng = np.random.default_rng(cfg.shuffle_seed)
    curve: list[float] = []
    # Overflow on a diverging run is expected and caught via the finiteness
    # check, so the floating-point warnings stay quiet here.
    with np.errstate(over="ignore", invalid="ignore"):
        for _epoch in range(cfg.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, cfg.batch_size):
                batch = batch_all[order[start : start + cfg.batch_size]]
                activations = _forward_batch(trained, batch)
                batch_loss = float(np.sum((activations[-1] - batch) ** 2))
                if not math.isfinite(batch_loss):
                    raise DivergenceDetected(
                        "non-finite loss in epoch %d" % _epoch, curve
                    )
                epoch_loss += batch_loss
                gradients = _batch_gradients(trained, batch, activations)
                for layer, (grad_w, grad_b) in zip(trained.layers, gradients):
                    layer.weights -= cfg.learning_rate * grad_w
                    layer.biases -= cfg.learning_rate * grad_b
            mean_loss = epoch_loss / n
            if not math.isfinite(mean_loss):
                raise DivergenceDetected("non-finite epoch loss", curve)
            curve.append(mean_loss)
    return trained, curve


def network_to_dict(net: Network) -> dict:
    """Self-describing form whose floats round-trip exactly through JSON."""
    return {
        "format": "droidae-network",
        "version": 1,
        "seed": net.seed,
        "init_scheme": net.init_scheme,
        "tied": net.tied,
        "layers": [
            {
                "input_size": layer.spec.input_size,
                "output_size": layer.spec.output_size,
                "activation": layer.activation,
                "weights": layer.weights.tolist(),  # row-major
                "biases": layer.biases.tolist(),
            }
            for layer in net.layers
        ],
    }


def network_from_dict(payload: dict) -> Network:
    if payload.get("format") != "droidae-network":
        raise ValueError("not a network document")
    layers = [
        Layer(
            weights=np.array(entry["weights"], dtype=np.float64),
            biases=np.array(entry["biases"], dtype=np.float64),
            activation=entry["activation"],
        )
        for entry in payload["layers"]
    ]
    net = Network(
        layers=layers,
        seed=int(payload["seed"]),
        init_scheme=payload["init_scheme"],
        tied=bool(payload.get("tied", False)),
    )
    if net.tied:
        for k in range(len(layers) // 2):
            layers[len(layers) - 1 - k].weights = layers[k].weights.T
    _check_chain([layer.spec for layer in layers])
    return net
