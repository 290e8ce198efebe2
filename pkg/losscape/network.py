"""Feedforward network definition and forward pass.

F_1 = sigma(X W_1 + 1_N b_1^T) and F_k = sigma(F_{k-1} W_k + 1_N b_k^T) for
k in [2, L]. Layers are numbered from 1; F_0 denotes the input X.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from losscape.activations import Activation
from losscape.linalg import Matrix, as_matrix

Vector = npt.NDArray[np.float64]


class ShapeError(ValueError):
    """Exception raised when parameters, data or caches disagree in shape."""

    pass


@dataclass(frozen=True)
class Architecture:
    """Layer widths [n_0, ..., n_L] with n_0 = d and n_L = m."""

    widths: Tuple[int, ...]
    activation: Activation

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ShapeError(
                "An architecture needs at least an input and an output width"
            )
        if any(w < 1 for w in widths):
            raise ShapeError(f"Every width must be at least 1, got {list(widths)}")

    @property
    def depth(self) -> int:
        """Number of layers L."""
        return len(self.widths) - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def layer_shape(self, layer: int) -> Tuple[int, int]:
        """Shape n_{l-1} x n_l of W_l."""
        return self.widths[layer - 1], self.widths[layer]

    def num_parameters(self) -> int:
        return sum(
            (self.widths[layer - 1] + 1) * self.widths[layer]
            for layer in range(1, self.depth + 1)
        )


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Weights W_1..W_L (n_{k-1} x n_k) and biases b_1..b_L (length n_k)."""

    weights: Tuple[Matrix, ...]
    biases: Tuple[Vector, ...]
    activation: Activation

    def __post_init__(self) -> None:
        weights = tuple(as_matrix(w, f"W_{i + 1}") for i, w in enumerate(self.weights))
        biases = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

        if not weights:
            raise ShapeError("A network needs at least one layer")
        if len(weights) != len(biases):
            raise ShapeError(
                f"{len(weights)} weight matrices but {len(biases)} bias vectors"
            )
        for layer, (w, b) in enumerate(zip(weights, biases), start=1):
            if layer > 1 and w.shape[0] != weights[layer - 2].shape[1]:
                raise ShapeError(
                    f"W_{layer} has {w.shape[0]} rows but layer {layer - 1} "
                    f"has {weights[layer - 2].shape[1]} units"
                )
            if b.shape[0] != w.shape[1]:
                raise ShapeError(
                    f"b_{layer} has length {b.shape[0]}, expected {w.shape[1]}"
                )
            if not np.all(np.isfinite(b)):
                raise ShapeError(f"b_{layer} contains NaN or Inf entries")

    @property
    def architecture(self) -> Architecture:
        widths = (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)
        return Architecture(widths, self.activation)

    @property
    def depth(self) -> int:
        return len(self.weights)

    def replace_layer(
        self, layer: int, weight: Matrix, bias: Vector
    ) -> "NetworkParams":
        """Copy with (W_layer, b_layer) replaced."""
        weights = list(self.weights)
        biases = list(self.biases)
        weights[layer - 1] = weight
        biases[layer - 1] = bias
        return NetworkParams(tuple(weights), tuple(biases), self.activation)


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Pre-activations G_k and activations F_k (N x n_k) for k in [L]."""

    X: Matrix
    G: Tuple[Matrix, ...]
    F: Tuple[Matrix, ...]

    @property
    def output(self) -> Matrix:
        """F_L, the network output on all samples."""
        return self.F[-1]

    @property
    def num_samples(self) -> int:
        return self.X.shape[0]

    def features(self, layer: int) -> Matrix:
        """F_layer, with F_0 = X."""
        if layer == 0:
            return self.X
        if not 1 <= layer <= len(self.F):
            raise ShapeError(f"Layer {layer} outside [0, {len(self.F)}]")
        return self.F[layer - 1]


def forward(params: NetworkParams, X: Matrix) -> ForwardCache:
    """Run the network on all samples, caching every layer.

    Raises:
        ShapeError: If X does not have n_0 columns
    """
    X = as_matrix(X, "X")
    if X.shape[1] != params.weights[0].shape[0]:
        expected = params.weights[0].shape[0]
        raise ShapeError(
            f"X has {X.shape[1]} columns but the network expects {expected}"
        )

    G: List[Matrix] = []
    F: List[Matrix] = []
    previous = X
    for W, b in zip(params.weights, params.biases):
        pre = previous @ W + b[np.newaxis, :]
        G.append(pre)
        previous = params.activation.value(pre)
        F.append(previous)

    return ForwardCache(X=X, G=tuple(G), F=tuple(F))


def init_params(
    arch: Architecture, rng: np.random.Generator, init_scale: float = 1.0
) -> NetworkParams:
    """Normal weights scaled by init_scale / sqrt(fan-in), zero biases."""
    weights = []
    biases = []
    for layer in range(1, arch.depth + 1):
        fan_in, fan_out = arch.layer_shape(layer)
        W = rng.standard_normal((fan_in, fan_out)) * init_scale
        weights.append(W / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return NetworkParams(tuple(weights), tuple(biases), arch.activation)


def random_params(
    arch: Architecture,
    rng: np.random.Generator,
    scale: float = 1.0,
    layers: Sequence[int] = (),
) -> NetworkParams:
    """I.i.d. normal weights and biases scaled by ``scale``.

    Args:
        arch: Architecture to draw for
        rng: Generator to draw from
        scale: Standard deviation of every entry
        layers: If given, only these layers are drawn; others are zero
    """
    selected = set(layers) if layers else set(range(1, arch.depth + 1))
    weights = []
    biases = []
    for layer in range(1, arch.depth + 1):
        fan_in, fan_out = arch.layer_shape(layer)
        if layer in selected:
            weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            biases.append(rng.standard_normal(fan_out) * scale)
        else:
            weights.append(np.zeros((fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
    return NetworkParams(tuple(weights), tuple(biases), arch.activation)
