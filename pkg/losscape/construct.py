"""Constructive full-rank machinery.

This module handles:
1. Directions that keep the projections of distinct rows distinct
2. The alpha-escalation wide layer reaching rank([F_k, 1_N]) = N
3. Whole networks with a full-rank wide layer at k
4. Random rank probes and the rank bound of linear networks
5. Exact interpolation of the output layer through sigma^{-1}
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from losscape.activations import (
    Activation,
    ActivationError,
    activation_inverse,
    require_certifiable,
)
from losscape.certify import PreconditionError
from losscape.linalg import (
    Matrix,
    Tolerance,
    append_ones,
    as_matrix,
    numerical_rank,
    singular_values,
)
from losscape.losses import DatasetError, find_duplicate_rows
from losscape.network import (
    Architecture,
    NetworkParams,
    forward,
    init_params,
    random_params,
)

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]

DEFAULT_ALPHA_SCHEDULE: Tuple[float, ...] = tuple(2.0**i for i in range(16))
MAX_DIRECTION_ATTEMPTS = 100
MAX_REDRAWS = 3
MAX_LAYER_DRAWS = 100
RELATIVE_GAP_FLOOR = 1e-12
LINEAR_RANK_FACTOR = 1e-10


class ConstructionError(RuntimeError):
    """Raised when a construction cannot reach the required rank."""

    def __init__(self, message: str, best_rank: int = 0):
        super().__init__(message)
        self.best_rank = best_rank


@dataclass(frozen=True, eq=False)
class ConstructionTrace:
    """How a wide layer was built."""

    direction: Vector
    beta: float
    alpha_schedule: Tuple[float, ...]
    alpha_final: float
    achieved_rank: int
    layer_seeds: Tuple[int, ...] = ()
    redraws: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "direction": [float(x) for x in self.direction],
            "beta": self.beta,
            "alpha_schedule": list(self.alpha_schedule),
            "alpha_final": self.alpha_final,
            "achieved_rank": self.achieved_rank,
            "layer_seeds": list(self.layer_seeds),
            "redraws": self.redraws,
        }


def default_beta(activation: Activation) -> float:
    """0 for bounded kinds, 1 for softplus (so that sigma(beta) != 0)."""
    return 1.0 if activation.name == "softplus" else 0.0


def _require_distinct_rows(Z: Matrix) -> None:
    duplicate = find_duplicate_rows(Z)
    if duplicate is not None:
        raise DatasetError(f"Rows {duplicate[0]} and {duplicate[1]} are identical")


def _projections_distinct(projections: Vector) -> bool:
    if projections.size < 2:
        return True
    ordered = np.sort(projections)
    floor = RELATIVE_GAP_FLOOR * max(1.0, float(np.max(np.abs(ordered))))
    return bool(np.min(np.diff(ordered)) > floor)


def distinct_rows_direction(
    Z: Matrix, rng: np.random.Generator, max_attempts: int = MAX_DIRECTION_ATTEMPTS
) -> Vector:
    """A standard-normal direction a with pairwise distinct projections a^T z_i.

    Raises:
        DatasetError: If Z has identical rows
        ConstructionError: If max_attempts draws all produce a tie
    """
    Z = as_matrix(Z, "Z")
    _require_distinct_rows(Z)
    for attempt in range(1, max_attempts + 1):
        a = rng.standard_normal(Z.shape[1])
        if _projections_distinct(Z @ a):
            logger.debug("Distinct direction found after %d draw(s)", attempt)
            return a
    raise ConstructionError(
        f"No direction with distinct projections in {max_attempts} draws"
    )


def _wide_layer_at(
    Z: Matrix, width: int, direction: Vector, beta: float, alpha: float
) -> Tuple[Matrix, Vector]:
    projections = np.sort(Z @ direction)
    W = np.zeros((Z.shape[1], width))
    b = np.zeros(width)
    # only the first N-1 columns carry the construction
    for j in range(Z.shape[0] - 1):
        W[:, j] = -alpha * direction
        b[j] = alpha * projections[j] + beta
    return W, b


def build_wide_layer(
    Z: Matrix,
    width: int,
    activation: Activation,
    rng: np.random.Generator,
    beta: Optional[float] = None,
    alpha_schedule: Sequence[float] = DEFAULT_ALPHA_SCHEDULE,
    direction: Optional[Vector] = None,
    rank_tol: Tolerance = "auto",
) -> Tuple[Matrix, Vector, ConstructionTrace]:
    """Build (W_k, b_k) so that [sigma(Z W_k + 1 b_k^T), 1_N] has rank N.

    Column j < N-1 gets w_j = -alpha a and v_j = alpha a^T z_(j) + beta, where
    z_(j) are the rows sorted by a^T z; other columns are zero. alpha runs
    through the schedule until the rank is reached. When the schedule is
    exhausted with a drawn direction, a new direction is drawn.

    Args:
        Z: Inputs to the layer, N distinct rows
        width: n_k >= N - 1
        activation: sigmoid, tanh or softplus
        rng: Source of directions
        beta: Offset; defaults to default_beta(activation)
        alpha_schedule: Strictly increasing positive scales
        direction: Fixed direction a, skipping the draw

    Raises:
        ConstructionError: If no alpha in the schedule reaches rank N
    """
    Z = as_matrix(Z, "Z")
    n_samples = Z.shape[0]
    _require_distinct_rows(Z)
    require_certifiable(activation)
    if width < n_samples - 1:
        raise PreconditionError(
            f"Wide layer needs at least {n_samples - 1} units, got {width}"
        )

    schedule = tuple(float(alpha) for alpha in alpha_schedule)
    increasing = all(a < b for a, b in zip(schedule, schedule[1:]))
    if not schedule or schedule[0] <= 0 or not increasing:
        raise PreconditionError(
            "alpha_schedule must be non-empty, positive and strictly increasing"
        )

    offset = default_beta(activation) if beta is None else float(beta)
    if activation.name == "softplus" and activation.value(offset) == 0:
        raise PreconditionError(f"softplus({offset}) vanishes; choose another beta")

    fixed = direction is not None
    if fixed:
        a = np.asarray(direction, dtype=np.float64)
    else:
        a = distinct_rows_direction(Z, rng)
    if fixed and not _projections_distinct(Z @ a):
        raise PreconditionError("The given direction does not separate the rows of Z")

    best_rank = 0
    for redraw in range(MAX_REDRAWS + 1):
        for alpha in schedule:
            W, b = _wide_layer_at(Z, width, a, offset, alpha)
            F = activation.value(Z @ W + b[np.newaxis, :])
            rank = numerical_rank(append_ones(F), rank_tol)
            best_rank = max(best_rank, rank)
            if rank == n_samples:
                logger.info("Wide layer reached rank %d at alpha=%g", rank, alpha)
                trace = ConstructionTrace(
                    direction=a,
                    beta=offset,
                    alpha_schedule=schedule,
                    alpha_final=alpha,
                    achieved_rank=rank,
                    redraws=redraw,
                )
                return W, b, trace
        if fixed:
            break
        logger.warning(
            "alpha schedule exhausted at rank %d; drawing a new direction", best_rank
        )
        a = distinct_rows_direction(Z, rng)

    raise ConstructionError(
        f"Wide layer reached rank {best_rank} < {n_samples} over the whole schedule",
        best_rank=best_rank,
    )


def construct_full_rank_net(
    X: Matrix,
    arch: Architecture,
    k: int,
    rng: np.random.Generator,
    init_scale: float = 1.0,
    beta: Optional[float] = None,
    alpha_schedule: Sequence[float] = DEFAULT_ALPHA_SCHEDULE,
) -> Tuple[NetworkParams, ConstructionTrace]:
    """Network whose layer k satisfies rank([F_k, 1_N]) = N.

    Layers 1..k-1 are random draws, each from its own seed taken from rng and
    redrawn until the rows of F_l stay distinct. Layer k comes from
    build_wide_layer on F_{k-1}; layers above k come from init_params.

    Raises:
        DatasetError: If X has identical rows
        PreconditionError: If k is outside [1, L] or n_k < N - 1
    """
    X = as_matrix(X, "X")
    _require_distinct_rows(X)
    if not 1 <= k <= arch.depth:
        raise PreconditionError(f"k must lie in [1, {arch.depth}], got {k}")
    if X.shape[1] != arch.input_dim:
        raise PreconditionError(
            f"X has {X.shape[1]} columns, architecture expects {arch.input_dim}"
        )
    if arch.widths[k] < X.shape[0] - 1:
        raise PreconditionError(
            f"n_{k} = {arch.widths[k]} is below N - 1 = {X.shape[0] - 1}"
        )

    params = init_params(arch, rng, init_scale)
    features = X
    seeds: List[int] = []
    for layer in range(1, k):
        fan_in, fan_out = arch.layer_shape(layer)
        for _ in range(MAX_LAYER_DRAWS):
            seed = int(rng.integers(0, 2**32))
            layer_rng = np.random.default_rng(seed)
            W = layer_rng.standard_normal((fan_in, fan_out)) * init_scale
            W /= np.sqrt(fan_in)
            b = layer_rng.standard_normal(fan_out) * init_scale
            candidate = arch.activation.value(features @ W + b[np.newaxis, :])
            if find_duplicate_rows(candidate) is None:
                break
            logger.debug("Layer %d merged two rows; redrawing", layer)
        else:
            raise ConstructionError(
                f"Layer {layer} kept merging rows in {MAX_LAYER_DRAWS} draws"
            )
        seeds.append(seed)
        params = params.replace_layer(layer, W, b)
        features = candidate

    W_k, b_k, trace = build_wide_layer(
        features,
        arch.widths[k],
        arch.activation,
        rng,
        beta=beta,
        alpha_schedule=alpha_schedule,
    )
    params = params.replace_layer(k, W_k, b_k)
    trace = ConstructionTrace(
        direction=trace.direction,
        beta=trace.beta,
        alpha_schedule=trace.alpha_schedule,
        alpha_final=trace.alpha_final,
        achieved_rank=trace.achieved_rank,
        layer_seeds=tuple(seeds),
        redraws=trace.redraws,
    )
    return params, trace


def interpolate_output_layer(
    params: NetworkParams, X: Matrix, Y: Matrix, rank_tol: Tolerance = "auto"
) -> NetworkParams:
    """Replace (W_L, b_L) so that F_L = Y exactly.

    Solves [F_{L-1}, 1_N] (W_L; b_L) = sigma^{-1}(Y) in the minimum-norm
    least-squares sense, which is exact when [F_{L-1}, 1_N] has rank N.

    Raises:
        ConstructionError: If [F_{L-1}, 1_N] is rank deficient
        ActivationError: If a target lies outside the range of the activation
    """
    Y = as_matrix(Y, "Y")
    Z = append_ones(forward(params, X).features(params.depth - 1))
    rank = numerical_rank(Z, rank_tol)
    if rank < Z.shape[0]:
        raise ConstructionError(
            f"[F_{params.depth - 1}, 1] has rank {rank} < {Z.shape[0]}; "
            "cannot interpolate",
            best_rank=rank,
        )
    targets = activation_inverse(params.activation, Y)
    solution, *_ = np.linalg.lstsq(Z, targets, rcond=None)
    return params.replace_layer(params.depth, solution[:-1], solution[-1])


@dataclass(frozen=True)
class RankProbe:
    """Ranks of [F_k, 1_N] over independent random draws."""

    ranks: Tuple[int, ...]
    required: int

    @property
    def trials(self) -> int:
        return len(self.ranks)

    @property
    def deficient(self) -> int:
        return sum(1 for rank in self.ranks if rank < self.required)

    @property
    def fraction(self) -> float:
        return self.deficient / self.trials if self.trials else 0.0


def rank_probe(
    arch: Architecture,
    X: Matrix,
    k: int,
    trials: int,
    init_scale: float = 1.0,
    seed: Union[int, np.random.SeedSequence] = 0,
    rank_tol: Tolerance = "auto",
) -> RankProbe:
    """Draw layers 1..k i.i.d. normal (std init_scale) and record rank([F_k, 1_N]).

    Trial t uses the t-th child of SeedSequence(seed), so results do not
    depend on how trials are scheduled.
    """
    X = as_matrix(X, "X")
    if not 1 <= k <= arch.depth:
        raise PreconditionError(f"k must lie in [1, {arch.depth}], got {k}")
    if trials < 1:
        raise PreconditionError(f"trials must be positive, got {trials}")

    truncated = Architecture(arch.widths[: k + 1], arch.activation)
    if isinstance(seed, np.random.SeedSequence):
        sequence = seed
    else:
        sequence = np.random.SeedSequence(seed)
    ranks = []
    for child in sequence.spawn(trials):
        rng = np.random.default_rng(child)
        params = random_params(truncated, rng, scale=init_scale)
        F = forward(params, X).output
        ranks.append(numerical_rank(append_ones(F), rank_tol))

    probe = RankProbe(ranks=tuple(ranks), required=X.shape[0])
    logger.info("Rank probe: %d of %d draws deficient", probe.deficient, probe.trials)
    return probe


@dataclass(frozen=True)
class LinearLayerRank:
    layer: int
    rank_previous: int
    rank_weight: int
    rank_features: int

    @property
    def satisfied(self) -> bool:
        return self.rank_features <= min(self.rank_previous, self.rank_weight) + 1


@dataclass(frozen=True)
class LinearRankBound:
    """Per-layer and iterated rank bounds of a linear network up to layer k."""

    layers: Tuple[LinearLayerRank, ...]
    iterated: bool

    @property
    def satisfied(self) -> bool:
        return self.iterated and all(layer.satisfied for layer in self.layers)


def _relative_rank(M: Matrix) -> int:
    s = singular_values(M)
    return int(np.count_nonzero(s > LINEAR_RANK_FACTOR * s[0]))


def linear_rank_bound(params: NetworkParams, X: Matrix, k: int) -> LinearRankBound:
    """Check rank(F_l) <= min(rank(F_{l-1}), rank(W_l)) + 1 for l <= k, and
    rank(F_k) <= rank(W_l) + k - l + 1 for every l in [k].

    Raises:
        ActivationError: If the network is not linear
    """
    if params.activation.name != "identity":
        raise ActivationError("The rank bound only holds for identity activations")
    if not 1 <= k <= params.depth:
        raise PreconditionError(f"k must lie in [1, {params.depth}], got {k}")

    cache = forward(params, X)
    feature_ranks = [_relative_rank(cache.features(layer)) for layer in range(k + 1)]
    weight_ranks = [_relative_rank(W) for W in params.weights[:k]]

    layers = tuple(
        LinearLayerRank(
            layer,
            feature_ranks[layer - 1],
            weight_ranks[layer - 1],
            feature_ranks[layer],
        )
        for layer in range(1, k + 1)
    )
    iterated = all(
        feature_ranks[k] <= weight_ranks[layer - 1] + k - layer + 1
        for layer in range(1, k + 1)
    )
    return LinearRankBound(layers=layers, iterated=iterated)
