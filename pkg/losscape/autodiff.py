"""Backpropagation and finite-difference oracles for losscape.

This module handles:
1. Exact gradients of Phi by the Delta recursion
   Delta_L = l'(F_L - Y) o sigma'(G_L)
   Delta_k = (Delta_{k+1} W_{k+1}^T) o sigma'(G_k)
2. Flattening parameters into a single vector and back
3. Central-difference gradients and block Hessians
4. Non-degeneracy verdicts on (block) Hessians
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from losscape.activations import Activation
from losscape.linalg import EPS, LinalgError, Matrix, as_matrix, singular_values
from losscape.losses import LabeledDataset, Loss, output_loss_terms
from losscape.network import (
    Architecture,
    ForwardCache,
    NetworkParams,
    ShapeError,
    forward,
    random_params,
)

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
ObjectiveMap = Callable[[Vector], float]
GradientMap = Callable[[Vector], Vector]

GRADIENT_STEP = 1e-6
HESSIAN_STEP = float(np.cbrt(EPS))
ASYMMETRY_LIMIT = 1e-3
NONDEGENERACY_FACTOR = 1e-6


class NonFiniteObjectiveError(ArithmeticError):
    """Raised when a finite-difference probe evaluates to NaN or Inf."""

    def __init__(self, coordinate: int, value: float):
        super().__init__(f"Objective is {value} when probing coordinate {coordinate}")
        self.coordinate = coordinate
        self.value = value


@dataclass(frozen=True, eq=False)
class BackwardCache:
    """Sensitivities Delta_k and gradients for every layer k in [L]."""

    deltas: Tuple[Matrix, ...]
    grad_W: Tuple[Matrix, ...]
    grad_b: Tuple[Vector, ...]

    def gradient_vector(self) -> Vector:
        """Gradient in ParamLayout order: vec(W_1), b_1, ..., vec(W_L), b_L."""
        parts: List[Vector] = []
        for gW, gb in zip(self.grad_W, self.grad_b):
            parts.append(gW.reshape(-1))
            parts.append(gb)
        return np.concatenate(parts)

    def gradient_norm(self) -> float:
        return float(np.linalg.norm(self.gradient_vector()))


@dataclass(frozen=True)
class ParamLayout:
    """Index map between NetworkParams and a flat parameter vector.

    Layer l occupies vec(W_l) (row-major) followed by b_l; layers are stored
    in increasing order, so layers 1..k form a prefix of the vector.
    """

    widths: Tuple[int, ...]

    @classmethod
    def of(cls, params: NetworkParams) -> "ParamLayout":
        return cls(params.architecture.widths)

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def size(self) -> int:
        return self.offset(self.depth + 1)

    def offset(self, layer: int) -> int:
        """Index of the first coordinate of layer ``layer`` (1-based)."""
        return sum((self.widths[i - 1] + 1) * self.widths[i] for i in range(1, layer))

    def extent(self, layer: int) -> int:
        return (self.widths[layer - 1] + 1) * self.widths[layer]

    def weight_slice(self, layer: int) -> slice:
        start = self.offset(layer)
        return slice(start, start + self.widths[layer - 1] * self.widths[layer])

    def bias_slice(self, layer: int) -> slice:
        end = self.offset(layer) + self.extent(layer)
        return slice(end - self.widths[layer], end)

    def layer_indices(self, layers: Iterable[int]) -> npt.NDArray[np.int64]:
        """Coordinates of (W_l, b_l) for every listed layer, in layout order."""
        selected = sorted(set(layers))
        for layer in selected:
            if not 1 <= layer <= self.depth:
                raise ShapeError(f"Layer {layer} outside [1, {self.depth}]")
        ranges = [
            np.arange(self.offset(layer), self.offset(layer) + self.extent(layer))
            for layer in selected
        ]
        return np.concatenate(ranges) if ranges else np.array([], dtype=np.int64)

    def flatten(self, params: NetworkParams) -> Vector:
        if params.architecture.widths != self.widths:
            raise ShapeError("Parameters do not match the layout")
        parts: List[Vector] = []
        for W, b in zip(params.weights, params.biases):
            parts.append(W.reshape(-1))
            parts.append(b)
        return np.concatenate(parts)

    def unflatten(self, theta: Vector, activation: Activation) -> NetworkParams:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.size,):
            raise ShapeError(
                f"Expected a vector of length {self.size}, got shape {theta.shape}"
            )
        weights = []
        biases = []
        for layer in range(1, self.depth + 1):
            shape = (self.widths[layer - 1], self.widths[layer])
            weights.append(theta[self.weight_slice(layer)].reshape(shape))
            biases.append(theta[self.bias_slice(layer)])
        return NetworkParams(tuple(weights), tuple(biases), activation)


def propagate_delta(
    delta_next: Matrix, W_next: Matrix, G: Matrix, activation: Activation
) -> Matrix:
    """Delta_k = (Delta_{k+1} W_{k+1}^T) o sigma'(G_k)."""
    return (delta_next @ W_next.T) * activation.derivative(G)


def _check_cache(
    cache: ForwardCache, params: NetworkParams, data: LabeledDataset
) -> None:
    if len(cache.G) != params.depth:
        raise ShapeError(f"Cache has {len(cache.G)} layers, network has {params.depth}")
    if cache.X.shape != data.X.shape or not np.array_equal(cache.X, data.X):
        raise ShapeError("Cache was computed on different inputs")
    for layer, (G, W) in enumerate(zip(cache.G, params.weights), start=1):
        if G.shape != (data.num_samples, W.shape[1]):
            expected = (data.num_samples, W.shape[1])
            raise ShapeError(
                f"Cached G_{layer} has shape {G.shape}, expected {expected}"
            )


def backward(
    cache: ForwardCache, params: NetworkParams, data: LabeledDataset, loss: Loss
) -> BackwardCache:
    """Exact gradient of Phi with respect to every W_k and b_k.

    Args:
        cache: Output of forward(params, data.X)
        params: The network parameters
        data: Training data
        loss: Regression loss, or the separable pair

    Returns:
        BackwardCache with Delta_k, grad W_k = F_{k-1}^T Delta_k and
        grad b_k = Delta_k^T 1_N

    Raises:
        ShapeError: If the cache does not belong to params and data
    """
    _check_cache(cache, params, data)
    activation = params.activation

    _, loss_slope = output_loss_terms(loss, cache.output, data)
    deltas: List[Matrix] = [loss_slope * activation.derivative(cache.G[-1])]
    for layer in range(params.depth - 1, 0, -1):
        deltas.append(
            propagate_delta(
                deltas[-1], params.weights[layer], cache.G[layer - 1], activation
            )
        )
    deltas.reverse()

    grad_W = tuple(
        cache.features(layer - 1).T @ deltas[layer - 1]
        for layer in range(1, params.depth + 1)
    )
    grad_b = tuple(delta.sum(axis=0) for delta in deltas)
    return BackwardCache(deltas=tuple(deltas), grad_W=grad_W, grad_b=grad_b)


class Objective:
    """Phi as a map on flat parameter vectors, with its exact gradient."""

    def __init__(self, params: NetworkParams, data: LabeledDataset, loss: Loss):
        self.layout = ParamLayout.of(params)
        self.activation = params.activation
        self.data = data
        self.loss = loss

    def params(self, theta: Vector) -> NetworkParams:
        return self.layout.unflatten(theta, self.activation)

    def value(self, theta: Vector) -> float:
        cache = forward(self.params(theta), self.data.X)
        values, _ = output_loss_terms(self.loss, cache.output, self.data)
        return float(np.sum(values))

    def gradient(self, theta: Vector) -> Vector:
        return self.value_and_gradient(theta)[1]

    def value_and_gradient(self, theta: Vector) -> Tuple[float, Vector]:
        params = self.params(theta)
        cache = forward(params, self.data.X)
        values, _ = output_loss_terms(self.loss, cache.output, self.data)
        grads = backward(cache, params, self.data, self.loss)
        return float(np.sum(values)), grads.gradient_vector()

    def __call__(self, theta: Vector) -> float:
        return self.value(theta)


def make_objective(
    params: NetworkParams, data: LabeledDataset, loss: Loss
) -> Objective:
    """Objective with the layout and activation of ``params``."""
    return Objective(params, data, loss)


def _steps(theta: Vector, h: Optional[float], relative: float) -> Vector:
    if h is None:
        return relative * (1.0 + np.abs(theta))
    if not h > 0:
        raise ValueError(f"Finite-difference step must be positive, got {h}")
    return np.full(theta.shape, float(h))


def _probe(objective: ObjectiveMap, point: Vector, coordinate: int) -> float:
    value = float(objective(point))
    if not np.isfinite(value):
        raise NonFiniteObjectiveError(coordinate, value)
    return value


def gradient_fd(
    objective: ObjectiveMap, theta: Vector, h: Optional[float] = None
) -> Vector:
    """Central-difference gradient (Phi(theta + h e_i) - Phi(theta - h e_i)) / 2h.

    Args:
        objective: Pure map from parameter vectors to reals
        theta: Point of evaluation
        h: Absolute step; by default 1e-6 (1 + |theta_i|) per coordinate

    Raises:
        NonFiniteObjectiveError: With the coordinate whose probe was not finite
    """
    theta = np.asarray(theta, dtype=np.float64)
    steps = _steps(theta, h, GRADIENT_STEP)
    grad = np.empty_like(theta)
    for i, step in enumerate(steps):
        plus = theta.copy()
        minus = theta.copy()
        plus[i] += step
        minus[i] -= step
        difference = _probe(objective, plus, i) - _probe(objective, minus, i)
        grad[i] = difference / (2.0 * step)
    return grad


@dataclass(frozen=True, eq=False)
class HessianEstimate:
    """A symmetrized finite-difference (block) Hessian."""

    matrix: Matrix
    indices: Tuple[int, ...]
    asymmetry: float

    @property
    def reliable(self) -> bool:
        scale = float(np.linalg.norm(self.matrix, 2))
        return self.asymmetry <= ASYMMETRY_LIMIT * (1.0 + scale)


def block_hessian(
    objective: ObjectiveMap,
    theta: Vector,
    subset: Sequence[int],
    h: Optional[float] = None,
    gradient: Optional[GradientMap] = None,
) -> HessianEstimate:
    """Hessian restricted to the coordinates in ``subset``.

    Without ``gradient`` the entries are second central differences of the
    objective. With it, column j is the central difference of the gradient
    along coordinate j; the raw matrix is then symmetrized and the largest
    entry of |H - H^T| recorded as its asymmetry.

    Args:
        objective: Pure map from parameter vectors to reals
        theta: Point of evaluation
        subset: Distinct 0-based coordinates
        h: Absolute step; by default cbrt(eps) (1 + |theta_i|) per coordinate
        gradient: Optional exact gradient map

    Returns:
        HessianEstimate of shape |subset| x |subset|
    """
    theta = np.asarray(theta, dtype=np.float64)
    idx = [int(i) for i in subset]
    if not idx:
        raise LinalgError("Block Hessian needs a non-empty subset")
    if len(set(idx)) != len(idx) or min(idx) < 0 or max(idx) >= theta.size:
        raise LinalgError(
            f"Invalid coordinate subset for a vector of length {theta.size}"
        )

    steps = _steps(theta, h, HESSIAN_STEP)[idx]
    n = len(idx)
    H = np.empty((n, n))

    if gradient is not None:
        for col, (i, step) in enumerate(zip(idx, steps)):
            plus = theta.copy()
            minus = theta.copy()
            plus[i] += step
            minus[i] -= step
            g_plus = np.asarray(gradient(plus))[idx]
            g_minus = np.asarray(gradient(minus))[idx]
            if not (np.all(np.isfinite(g_plus)) and np.all(np.isfinite(g_minus))):
                raise NonFiniteObjectiveError(i, float("nan"))
            H[:, col] = (g_plus - g_minus) / (2.0 * step)
        asymmetry = float(np.max(np.abs(H - H.T)))
        H = 0.5 * (H + H.T)
    else:
        center = _probe(objective, theta, -1)

        def shifted(shifts: Sequence[Tuple[int, float]]) -> float:
            point = theta.copy()
            for coordinate, amount in shifts:
                point[coordinate] += amount
            return _probe(objective, point, shifts[0][0])

        for a, (i, hi) in enumerate(zip(idx, steps)):
            H[a, a] = (shifted([(i, hi)]) - 2.0 * center + shifted([(i, -hi)])) / hi**2
            for b in range(a + 1, n):
                j, hj = idx[b], steps[b]
                value = (
                    shifted([(i, hi), (j, hj)])
                    - shifted([(i, hi), (j, -hj)])
                    - shifted([(i, -hi), (j, hj)])
                    + shifted([(i, -hi), (j, -hj)])
                ) / (4.0 * hi * hj)
                H[a, b] = H[b, a] = value
        asymmetry = 0.0

    estimate = HessianEstimate(matrix=H, indices=tuple(idx), asymmetry=asymmetry)
    if not estimate.reliable:
        logger.warning(
            "Finite-difference Hessian is asymmetric (%.3g); treat it as unreliable",
            asymmetry,
        )
    return estimate


def full_hessian(
    objective: ObjectiveMap,
    theta: Vector,
    h: Optional[float] = None,
    gradient: Optional[GradientMap] = None,
) -> HessianEstimate:
    """block_hessian over every coordinate."""
    coordinates = range(np.asarray(theta).size)
    return block_hessian(objective, theta, coordinates, h=h, gradient=gradient)


@dataclass(frozen=True)
class NondegeneracyVerdict:
    """Whether a Hessian is non-singular, with its smallest singular value as margin."""

    nondegenerate: bool
    margin: float
    threshold: float


def default_threshold(H: Matrix) -> float:
    """1e-6 * max(1, largest singular value of H)."""
    return NONDEGENERACY_FACTOR * max(1.0, float(singular_values(H)[0]))


def check_nondegenerate(H: Matrix, tau: Optional[float] = None) -> NondegeneracyVerdict:
    """Non-singularity test: smallest singular value of H above tau.

    Args:
        H: Square, symmetric (block) Hessian
        tau: Threshold; by default 1e-6 * max(1, sigma_max(H))
    """
    H = as_matrix(H, "H")
    if H.shape[0] != H.shape[1]:
        raise LinalgError(f"Hessian must be square, got {H.shape}")
    s = singular_values(H)
    if np.max(np.abs(H - H.T)) > 1e-8 * (1.0 + s[0]):
        raise LinalgError("Hessian is not symmetric")
    threshold = default_threshold(H) if tau is None else float(tau)
    margin = float(s[-1])
    return NondegeneracyVerdict(
        nondegenerate=margin > threshold, margin=margin, threshold=threshold
    )


def relative_error(g: Vector, g_ref: Vector) -> float:
    """||g - g_ref||_inf / (1 + ||g_ref||_inf)."""
    g = np.asarray(g, dtype=np.float64)
    g_ref = np.asarray(g_ref, dtype=np.float64)
    return float(np.max(np.abs(g - g_ref)) / (1.0 + np.max(np.abs(g_ref))))


@dataclass(frozen=True)
class GradientCheck:
    """Backprop against central differences on one random configuration."""

    widths: Tuple[int, ...]
    activation: str
    loss: str
    num_samples: int
    error: float


def gradient_check(
    rng: np.random.Generator,
    activation: Activation,
    loss: Loss,
    max_depth: int = 4,
    max_width: int = 6,
    max_samples: int = 8,
) -> GradientCheck:
    """Draw a random network and dataset, then compare backward() with gradient_fd.

    Depth is drawn from [1, max_depth], every width from [1, max_width] and the
    number of samples from [1, max_samples]. Targets lie in (0.2, 0.8), inside
    the range of every activation.
    """
    depth = int(rng.integers(1, max_depth + 1))
    widths = tuple(int(w) for w in rng.integers(1, max_width + 1, size=depth + 1))
    num_samples = int(rng.integers(1, max_samples + 1))

    arch = Architecture(widths, activation)
    params = random_params(arch, rng, scale=0.5)
    X = rng.standard_normal((num_samples, widths[0]))
    Y = rng.uniform(0.2, 0.8, size=(num_samples, widths[-1]))
    data = LabeledDataset(X=X, Y=Y)

    objective = make_objective(params, data, loss)
    theta = objective.layout.flatten(params)
    error = relative_error(objective.gradient(theta), gradient_fd(objective, theta))
    logger.debug(
        "Gradient check on %s with N=%d: relative error %.3g",
        widths,
        num_samples,
        error,
    )
    return GradientCheck(
        widths, activation.describe(), loss.describe(), num_samples, error
    )
