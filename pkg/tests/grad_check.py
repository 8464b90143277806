"""Central-difference gradient oracle, independent of the analytic path."""

from __future__ import annotations

import numpy as np

from droidae.autoencoder import Network, reconstruction_error


def finite_difference_layer(
    net: Network, layer_index: int, x, h: float = 1e-5
) -> tuple[np.ndarray, np.ndarray]:
    """Numeric d(error)/d(param) for one layer's weights and biases.

    Perturbs parameters in place and restores them; on tied networks a
    perturbation through the encoder storage moves the decoder view too, so
    the result is the derivative with respect to the shared parameter.
    """
    layer = net.layers[layer_index]
    grad_w = np.zeros_like(layer.weights)
    for idx in np.ndindex(*layer.weights.shape):
        original = layer.weights[idx]
        layer.weights[idx] = original + h
        upper = reconstruction_error(net, x)
        layer.weights[idx] = original - h
        lower = reconstruction_error(net, x)
        layer.weights[idx] = original
        grad_w[idx] = (upper - lower) / (2.0 * h)
    grad_b = np.zeros_like(layer.biases)
    for idx in np.ndindex(*layer.biases.shape):
        original = layer.biases[idx]
        layer.biases[idx] = original + h
        upper = reconstruction_error(net, x)
        layer.biases[idx] = original - h
        lower = reconstruction_error(net, x)
        layer.biases[idx] = original
        grad_b[idx] = (upper - lower) / (2.0 * h)
    return grad_w, grad_b


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(
        1e-8, np.abs(analytic) + np.abs(numeric)
    )
