"""Hypothesis checks and global-optimality certifiers.

Each certifier measures the hypotheses of one optimality theorem at a given
point and returns a CertificationReport. A failed hypothesis is a verdict;
only malformed requests (a layer subset without k+1, a wide layer outside
[1, L-1]) raise.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy.optimize import linprog

from losscape.activations import require_certifiable
from losscape.autodiff import (
    ASYMMETRY_LIMIT,
    block_hessian,
    check_nondegenerate,
    default_threshold,
    full_hessian,
    make_objective,
)
from losscape.linalg import Matrix, Tolerance, append_ones, as_matrix, numerical_rank
from losscape.losses import (
    DatasetError,
    LabeledDataset,
    Loss,
    SeparableLoss,
    encode_labels,
    global_minimum_reference,
)
from losscape.models import ConditionDocument
from losscape.network import ForwardCache, NetworkParams, forward

logger = logging.getLogger(__name__)

PERCEPTRON_MAX_PASSES = 100_000


class PreconditionError(ValueError):
    """Exception raised when a certification request is malformed."""

    pass


class Verdict(str, Enum):
    CERTIFIED = "certified_global_minimum"
    CONDITIONS_NOT_MET = "conditions_not_met"
    NOT_CRITICAL = "not_critical"


class SeparabilityStatus(str, Enum):
    SEPARABLE = "separable"
    NOT_SEPARABLE = "not_separable"
    UNDETERMINED = "undetermined"


class SeparabilityMethod(str, Enum):
    EXACT_SOLVE = "exact_solve"
    LINEAR_PROGRAM = "linear_program"
    PERCEPTRON = "perceptron"


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds shared by every certifier.

    Attributes:
        eps_crit: A point is critical when the gradient norm is at most this
        eps_phi: Slack allowed between Phi and the global minimum reference
        rank_tol: Rank threshold, or "auto"
        tau_nd: Non-degeneracy threshold; None scales with the Hessian
    """

    eps_crit: float = 1e-7
    eps_phi: float = 1e-6
    rank_tol: Tolerance = "auto"
    tau_nd: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.eps_crit > 0 or not self.eps_phi > 0:
            raise PreconditionError("eps_crit and eps_phi must be positive")
        if self.rank_tol != "auto" and not float(self.rank_tol) > 0:
            raise PreconditionError(
                f"rank_tol must be positive or 'auto', got {self.rank_tol}"
            )
        if self.tau_nd is not None and not self.tau_nd > 0:
            raise PreconditionError(f"tau_nd must be positive, got {self.tau_nd}")


@dataclass(frozen=True)
class Condition:
    """One measured hypothesis: satisfied, with the value compared to the threshold."""

    name: str
    satisfied: bool
    value: Optional[float]
    threshold: Optional[float]

    def to_dict(self) -> ConditionDocument:
        return {
            "name": self.name,
            "satisfied": self.satisfied,
            "value": self.value,
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class RankCheck:
    satisfied: bool
    rank: int
    required: int


@dataclass(frozen=True)
class LayerRank:
    layer: int
    rank: int
    width: int

    @property
    def full_column_rank(self) -> bool:
        return self.rank == self.width


@dataclass(frozen=True)
class ColumnRankReport:
    """Column ranks of W_l for l >= from_layer, with the pyramidal-width flag."""

    layers: Tuple[LayerRank, ...]
    pyramidal: bool

    @property
    def satisfied(self) -> bool:
        return all(layer.full_column_rank for layer in self.layers)

    def conditions(self) -> List[Condition]:
        return [
            Condition(
                f"column_rank_W{r.layer}",
                r.full_column_rank,
                float(r.rank),
                float(r.width),
            )
            for r in self.layers
        ]


@dataclass(frozen=True, eq=False)
class SeparabilityCertificate:
    """One-vs-rest linear separability of feature rows.

    When separable, witnesses[j] = (a_j, b_j) with a_j^T f_i + b_j > 0 exactly
    for the rows of class j, and min_margin is the smallest signed margin.
    When not separable, failing_class names a class with no separating plane.
    """

    status: SeparabilityStatus
    method: Optional[SeparabilityMethod]
    witnesses: Optional[Tuple[Tuple[npt.NDArray[np.float64], float], ...]] = None
    min_margin: Optional[float] = None
    failing_class: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "method": self.method.value if self.method else None,
            "min_margin": self.min_margin,
            "failing_class": self.failing_class,
        }


@dataclass(frozen=True, eq=False)
class CertificationReport:
    """Measured hypotheses of one theorem at one point, and the verdict."""

    theorem: str
    conditions: Tuple[Condition, ...]
    grad_norm: float
    objective: float
    global_min_reference: Optional[float]
    verdict: Verdict
    consistent: Optional[bool]
    separability: Optional[SeparabilityCertificate] = field(default=None)

    @property
    def certified(self) -> bool:
        return self.verdict is Verdict.CERTIFIED

    def failed_conditions(self) -> List[str]:
        return [c.name for c in self.conditions if not c.satisfied]

    def to_dict(self) -> Dict[str, Any]:
        conditions: List[ConditionDocument] = [c.to_dict() for c in self.conditions]
        document: Dict[str, Any] = {
            "theorem": self.theorem,
            "conditions": conditions,
            "grad_norm": self.grad_norm,
            "objective": self.objective,
            "global_min_reference": self.global_min_reference,
            "verdict": self.verdict.value,
            "consistent": self.consistent,
        }
        if self.separability is not None:
            document["separability"] = self.separability.to_dict()
        return document


def check_linear_independence(X: Matrix, rank_tol: Tolerance = "auto") -> RankCheck:
    """rank([X, 1_N]) = N."""
    Z = append_ones(X)
    rank = numerical_rank(Z, rank_tol)
    return RankCheck(satisfied=rank == Z.shape[0], rank=rank, required=Z.shape[0])


def check_column_ranks(
    params: NetworkParams, from_layer: int, rank_tol: Tolerance = "auto"
) -> ColumnRankReport:
    """Full column rank of W_l for every l in [from_layer, L].

    from_layer = L + 1 is accepted and yields an empty, vacuously satisfied
    report (the wide layer sits just below the output layer).
    """
    depth = params.depth
    if not 2 <= from_layer <= depth + 1:
        raise PreconditionError(
            f"from_layer must lie in [2, {depth + 1}], got {from_layer}"
        )

    widths = params.architecture.widths
    tail = widths[from_layer - 1 :]
    pyramidal = all(a >= b for a, b in zip(tail, tail[1:]))

    layers = tuple(
        LayerRank(
            layer, numerical_rank(params.weights[layer - 1], rank_tol), widths[layer]
        )
        for layer in range(from_layer, depth + 1)
    )
    return ColumnRankReport(layers=layers, pyramidal=pyramidal)


def check_feature_rank(
    cache: ForwardCache, k: int, rank_tol: Tolerance = "auto"
) -> RankCheck:
    """rank([F_k, 1_N]) = N, with F_0 = X."""
    Z = append_ones(cache.features(k))
    rank = numerical_rank(Z, rank_tol)
    return RankCheck(satisfied=rank == Z.shape[0], rank=rank, required=Z.shape[0])


def perceptron_separator(
    Z: Matrix, targets: npt.NDArray[np.float64], max_passes: int = PERCEPTRON_MAX_PASSES
) -> Optional[npt.NDArray[np.float64]]:
    """Perceptron on the rows of Z with +1/-1 targets.

    Returns:
        h with targets_i * (Z h)_i > 0 for every row, or None after max_passes
        passes with a mistake in each
    """
    h = np.zeros(Z.shape[1])
    signed = Z * targets[:, np.newaxis]
    for _ in range(max_passes):
        mistakes = 0
        for row in signed:
            if row @ h <= 0:
                h += row
                mistakes += 1
        if mistakes == 0:
            return h
    return None


def _linear_program_separator(
    Z: Matrix, targets: npt.NDArray[np.float64]
) -> Tuple[Optional[bool], Optional[npt.NDArray[np.float64]]]:
    # strict separation is feasibility of targets_i (Z h)_i >= 1 after rescaling h
    result = linprog(
        c=np.zeros(Z.shape[1]),
        A_ub=-(Z * targets[:, np.newaxis]),
        b_ub=-np.ones(Z.shape[0]),
        bounds=[(None, None)] * Z.shape[1],
        method="highs",
    )
    if result.status == 0:
        h = np.asarray(result.x, dtype=np.float64)
        if np.all(targets * (Z @ h) > 0):
            return True, h
        return None, None
    if result.status == 2:
        return False, None
    logger.debug("Linear program for separability ended with status %d", result.status)
    return None, None


def check_separability(
    F: Matrix,
    classes: npt.ArrayLike,
    num_classes: Optional[int] = None,
    max_passes: int = PERCEPTRON_MAX_PASSES,
) -> SeparabilityCertificate:
    """Decide one-vs-rest linear separability of the rows of F.

    With rank([F, 1_N]) = N the +1/-1 targets are solved for exactly. Otherwise
    each class is decided by a feasibility linear program; the perceptron is
    only tried when the solver fails, and status is undetermined if it also
    fails within max_passes passes.

    Args:
        F: Feature rows, one per sample
        classes: 0-based class per row
        num_classes: m; defaults to the largest label plus one

    Raises:
        DatasetError: If a label lies outside [0, m-1]
    """
    Z = append_ones(as_matrix(F, "F"))
    labels = np.asarray(classes, dtype=np.int64).reshape(-1)
    if labels.shape[0] != Z.shape[0]:
        raise DatasetError(f"{labels.shape[0]} labels for {Z.shape[0]} feature rows")
    m = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= m:
        raise DatasetError(f"Class labels must lie in [0, {m - 1}]")

    T = encode_labels(labels, m, (1.0, -1.0))

    if numerical_rank(Z) == Z.shape[0]:
        H, *_ = np.linalg.lstsq(Z, T, rcond=None)
        margins = T * (Z @ H)
        if np.all(margins > 0):
            witnesses = tuple((H[:-1, j].copy(), float(H[-1, j])) for j in range(m))
            return SeparabilityCertificate(
                status=SeparabilityStatus.SEPARABLE,
                method=SeparabilityMethod.EXACT_SOLVE,
                witnesses=witnesses,
                min_margin=float(margins.min()),
            )

    method = SeparabilityMethod.LINEAR_PROGRAM
    columns: List[npt.NDArray[np.float64]] = []
    for j in range(m):
        feasible, h = _linear_program_separator(Z, T[:, j])
        if feasible is False:
            return SeparabilityCertificate(
                status=SeparabilityStatus.NOT_SEPARABLE,
                method=SeparabilityMethod.LINEAR_PROGRAM,
                failing_class=j,
            )
        if h is None:
            logger.warning(
                "Linear program failed for class %d; falling back to the perceptron", j
            )
            h = perceptron_separator(Z, T[:, j], max_passes)
            method = SeparabilityMethod.PERCEPTRON
            if h is None:
                return SeparabilityCertificate(
                    status=SeparabilityStatus.UNDETERMINED,
                    method=SeparabilityMethod.PERCEPTRON,
                    failing_class=j,
                )
        columns.append(h)

    H = np.column_stack(columns)
    margins = T * (Z @ H)
    return SeparabilityCertificate(
        status=SeparabilityStatus.SEPARABLE,
        method=method,
        witnesses=tuple((H[:-1, j].copy(), float(H[-1, j])) for j in range(m)),
        min_margin=float(margins.min()),
    )


def _check_wide_layer(params: NetworkParams, k: int, allow_input: bool = False) -> None:
    lowest = 0 if allow_input else 1
    if not lowest <= k <= params.depth - 1:
        raise PreconditionError(
            f"Wide layer k must lie in [{lowest}, {params.depth - 1}], got {k}"
        )


def _finish(
    theorem: str,
    conditions: List[Condition],
    grad_norm: float,
    objective_value: float,
    reference: Optional[float],
    tolerances: Tolerances,
    separability: Optional[SeparabilityCertificate] = None,
) -> CertificationReport:
    if grad_norm > tolerances.eps_crit:
        verdict = Verdict.NOT_CRITICAL
    elif all(c.satisfied for c in conditions):
        verdict = Verdict.CERTIFIED
    else:
        verdict = Verdict.CONDITIONS_NOT_MET

    consistent = (
        None if reference is None else objective_value <= reference + tolerances.eps_phi
    )
    if verdict is Verdict.CERTIFIED and consistent is False:
        logger.warning(
            "%s certified a point with Phi=%.6g above the global minimum %.6g; "
            "tolerances are too loose for this problem",
            theorem,
            objective_value,
            reference,
        )
    logger.info(
        "%s: %s (grad_norm=%.3g, Phi=%.6g)",
        theorem,
        verdict.value,
        grad_norm,
        objective_value,
    )
    return CertificationReport(
        theorem=theorem,
        conditions=tuple(conditions),
        grad_norm=grad_norm,
        objective=objective_value,
        global_min_reference=reference,
        verdict=verdict,
        consistent=consistent,
        separability=separability,
    )


def _critical_condition(grad_norm: float, tolerances: Tolerances) -> Condition:
    eps = tolerances.eps_crit
    return Condition("critical", grad_norm <= eps, grad_norm, eps)


def _wide_condition(params: NetworkParams, data: LabeledDataset, k: int) -> Condition:
    width = params.architecture.widths[k]
    required = data.num_samples - 1
    return Condition(
        f"wide_layer_{k}", width >= required, float(width), float(required)
    )


def certify_independent_inputs(
    params: NetworkParams,
    data: LabeledDataset,
    loss: Loss,
    tolerances: Tolerances = Tolerances(),
) -> CertificationReport:
    """Linearly independent inputs.

    Critical points with full-column-rank W_2..W_L are global minima.
    """
    require_certifiable(params.activation)
    objective = make_objective(params, data, loss)
    value, gradient = objective.value_and_gradient(objective.layout.flatten(params))
    grad_norm = float(np.linalg.norm(gradient))

    independence = check_linear_independence(data.X, tolerances.rank_tol)
    conditions = [
        _critical_condition(grad_norm, tolerances),
        Condition(
            "linear_independence",
            independence.satisfied,
            float(independence.rank),
            float(independence.required),
        ),
    ]
    conditions.extend(check_column_ranks(params, 2, tolerances.rank_tol).conditions())

    reference = global_minimum_reference(loss, data, params.activation)
    return _finish(
        "independent_inputs", conditions, grad_norm, value, reference, tolerances
    )


def certify_main(
    params: NetworkParams,
    data: LabeledDataset,
    loss: Loss,
    k: int,
    subset: Sequence[int],
    tolerances: Tolerances = Tolerances(),
) -> CertificationReport:
    """Wide layer k: critical points non-degenerate on the layers in ``subset``
    with full-column-rank W_{k+2}..W_L are global minima.

    Args:
        k: Wide layer in [1, L-1]
        subset: Layers I with k+1 in I, all within [k+1, L]

    Raises:
        PreconditionError: If k or the subset is malformed
    """
    _check_wide_layer(params, k)
    layers = sorted(set(int(layer) for layer in subset))
    if k + 1 not in layers:
        raise PreconditionError(f"The layer subset {layers} must contain k+1 = {k + 1}")
    if layers[0] < k + 1 or layers[-1] > params.depth:
        raise PreconditionError(
            f"The layer subset {layers} must lie in [{k + 1}, {params.depth}]"
        )
    require_certifiable(params.activation)

    objective = make_objective(params, data, loss)
    theta = objective.layout.flatten(params)
    value, gradient = objective.value_and_gradient(theta)
    grad_norm = float(np.linalg.norm(gradient))

    estimate = block_hessian(
        objective,
        theta,
        objective.layout.layer_indices(layers),
        gradient=objective.gradient,
    )
    verdict = check_nondegenerate(estimate.matrix, tolerances.tau_nd)
    symmetry_limit = ASYMMETRY_LIMIT * (1.0 + float(np.linalg.norm(estimate.matrix, 2)))

    conditions = [
        _wide_condition(params, data, k),
        _critical_condition(grad_norm, tolerances),
        Condition(
            "nondegenerate_block",
            verdict.nondegenerate,
            verdict.margin,
            verdict.threshold,
        ),
        Condition(
            "hessian_symmetry", estimate.reliable, estimate.asymmetry, symmetry_limit
        ),
    ]
    ranks = check_column_ranks(params, k + 2, tolerances.rank_tol)
    conditions.extend(ranks.conditions())

    reference = global_minimum_reference(loss, data, params.activation)
    return _finish("main", conditions, grad_norm, value, reference, tolerances)


def certify_nondegenerate_minimum(
    params: NetworkParams,
    data: LabeledDataset,
    loss: Loss,
    k: int,
    tolerances: Tolerances = Tolerances(),
) -> CertificationReport:
    """Wide layer k: non-degenerate local minima with full-column-rank
    W_{k+2}..W_L are global.

    A positive definite full Hessian is non-singular on every block, in
    particular on the layers k+1..L.
    """
    _check_wide_layer(params, k)
    require_certifiable(params.activation)

    objective = make_objective(params, data, loss)
    theta = objective.layout.flatten(params)
    value, gradient = objective.value_and_gradient(theta)
    grad_norm = float(np.linalg.norm(gradient))

    estimate = full_hessian(objective, theta, gradient=objective.gradient)
    threshold = tolerances.tau_nd
    if threshold is None:
        threshold = default_threshold(estimate.matrix)
    smallest = float(np.linalg.eigvalsh(estimate.matrix)[0])

    conditions = [
        _wide_condition(params, data, k),
        _critical_condition(grad_norm, tolerances),
        Condition(
            "positive_definite_hessian", smallest > threshold, smallest, threshold
        ),
    ]
    ranks = check_column_ranks(params, k + 2, tolerances.rank_tol)
    conditions.extend(ranks.conditions())

    reference = global_minimum_reference(loss, data, params.activation)
    return _finish(
        "nondegenerate_minimum", conditions, grad_norm, value, reference, tolerances
    )


def certify_separable(
    params: NetworkParams,
    data: LabeledDataset,
    k: int,
    tolerances: Tolerances = Tolerances(),
) -> CertificationReport:
    """Separable loss: critical points with separable F_k and full-column-rank
    W_{k+2}..W_L are global minima. k = 0 tests the raw inputs.

    Raises:
        PreconditionError: If the data has no class labels or k is outside [0, L-1]
    """
    if not data.is_classification:
        raise PreconditionError("Separable certification needs class labels")
    _check_wide_layer(params, k, allow_input=True)
    require_certifiable(params.activation)

    loss = SeparableLoss()
    objective = make_objective(params, data, loss)
    value, gradient = objective.value_and_gradient(objective.layout.flatten(params))
    grad_norm = float(np.linalg.norm(gradient))

    features = data.X if k == 0 else forward(params, data.X).features(k)
    certificate = check_separability(
        features, data.classes, data.output_dim  # type: ignore[arg-type]
    )

    conditions = [
        _critical_condition(grad_norm, tolerances),
        Condition(
            f"separable_F{k}",
            certificate.status is SeparabilityStatus.SEPARABLE,
            certificate.min_margin,
            0.0,
        ),
    ]
    ranks = check_column_ranks(params, k + 2, tolerances.rank_tol)
    conditions.extend(ranks.conditions())

    reference = global_minimum_reference(loss, data, params.activation)
    return _finish(
        "separable", conditions, grad_norm, value, reference, tolerances, certificate
    )
