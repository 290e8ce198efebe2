"""Steepest descent with backtracking line search.

Finds approximate critical points of Phi for the certifiers. Every accepted
step satisfies the sufficient-decrease condition, so the recorded objective
never increases.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Tuple

import numpy as np
import numpy.typing as npt
import pandas as pd  # type: ignore[import-untyped]

from losscape.activations import Activation
from losscape.autodiff import make_objective
from losscape.linalg import Matrix
from losscape.losses import LabeledDataset, Loss, SeparableLoss
from losscape.network import Architecture, NetworkParams, init_params

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
ValueAndGradient = Callable[[Vector], Tuple[float, Vector]]

HISTORY_COLUMNS = ["iteration", "objective", "grad_norm", "step"]
TARGET_MARGIN = 0.05


class TrainConfigError(ValueError):
    """Exception raised for inconsistent training settings."""

    pass


class TrainStatus(str, Enum):
    CONVERGED = "converged"
    MAXITER = "maxiter"
    DIVERGED = "diverged"
    STALLED = "stalled"


@dataclass(frozen=True)
class TrainConfig:
    """Settings of one descent run.

    Attributes:
        max_iters: Iteration cap
        eps_crit: Stop once the gradient norm is at most this
        initial_step: Largest step tried by the line search
        shrink: Backtracking factor in (0, 1)
        sufficient_decrease: Armijo constant in (0, 0.5]
        step_growth: The next search starts at min(initial_step, growth * last step)
        max_backtracks: Backtracking cap per iteration
        seed: Seed of the initialization
        init_scale: Weights are normal * init_scale / sqrt(fan-in)
    """

    max_iters: int = 20_000
    eps_crit: float = 1e-7
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    step_growth: float = 2.0
    max_backtracks: int = 60
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise TrainConfigError(
                f"max_iters must be at least 1, got {self.max_iters}"
            )
        if not self.eps_crit > 0:
            raise TrainConfigError(f"eps_crit must be positive, got {self.eps_crit}")
        if not self.initial_step > 0:
            raise TrainConfigError(
                f"initial_step must be positive, got {self.initial_step}"
            )
        if not 0 < self.shrink < 1:
            raise TrainConfigError(f"shrink must lie in (0, 1), got {self.shrink}")
        if not 0 < self.sufficient_decrease <= 0.5:
            raise TrainConfigError(
                "sufficient_decrease must lie in (0, 0.5], "
                f"got {self.sufficient_decrease}"
            )
        if self.step_growth < 1:
            raise TrainConfigError(
                f"step_growth must be at least 1, got {self.step_growth}"
            )
        if self.max_backtracks < 1:
            raise TrainConfigError(
                f"max_backtracks must be at least 1, got {self.max_backtracks}"
            )
        if not self.init_scale > 0:
            raise TrainConfigError(
                f"init_scale must be positive, got {self.init_scale}"
            )


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    objective: float
    grad_norm: float
    step: float


@dataclass(frozen=True, eq=False)
class TrainResult:
    theta: Vector
    objective: float
    grad_norm: float
    status: TrainStatus
    history: Tuple[HistoryRecord, ...]

    @property
    def iterations(self) -> int:
        return self.history[-1].iteration

    def history_frame(self) -> pd.DataFrame:
        """History as a DataFrame with columns iteration, objective, grad_norm, step."""
        return pd.DataFrame(
            [(r.iteration, r.objective, r.grad_norm, r.step) for r in self.history],
            columns=HISTORY_COLUMNS,
        )


def _finite(value: float, gradient: Vector) -> bool:
    return bool(np.isfinite(value) and np.all(np.isfinite(gradient)))


def minimize(fun: ValueAndGradient, theta0: Vector, cfg: TrainConfig) -> TrainResult:
    """Steepest descent with Armijo backtracking.

    Args:
        fun: Map returning (Phi(theta), grad Phi(theta))
        theta0: Starting point
        cfg: Step policy and stopping rule

    Returns:
        TrainResult; status is converged once ||grad|| <= eps_crit, maxiter at
        the iteration cap, stalled when no step decreases Phi, and diverged
        when every trial point or its objective is non-finite (theta is then
        the last finite iterate)
    """
    theta = np.array(theta0, dtype=np.float64)
    value, gradient = fun(theta)
    value = float(value)
    if not _finite(value, gradient):
        logger.warning("Objective is not finite at the starting point")
        record = HistoryRecord(0, value, float("nan"), 0.0)
        return TrainResult(theta, value, float("nan"), TrainStatus.DIVERGED, (record,))

    grad_norm = float(np.linalg.norm(gradient))
    history: List[HistoryRecord] = [HistoryRecord(0, value, grad_norm, 0.0)]
    step = cfg.initial_step
    status = TrainStatus.MAXITER

    for iteration in range(1, cfg.max_iters + 1):
        if grad_norm <= cfg.eps_crit:
            status = TrainStatus.CONVERGED
            break

        trial = min(cfg.initial_step, cfg.step_growth * step)
        decrease = cfg.sufficient_decrease * grad_norm * grad_norm
        accepted = False
        saw_finite = False
        for _ in range(cfg.max_backtracks):
            with np.errstate(over="ignore", invalid="ignore"):
                candidate = theta - trial * gradient
            if not np.all(np.isfinite(candidate)):
                trial *= cfg.shrink
                continue
            if np.array_equal(candidate, theta):
                # step below the resolution of theta
                saw_finite = True
                break
            cand_value, cand_gradient = fun(candidate)
            cand_value = float(cand_value)
            if _finite(cand_value, cand_gradient):
                saw_finite = True
                if cand_value <= value - trial * decrease:
                    accepted = True
                    break
            trial *= cfg.shrink

        if not accepted:
            status = TrainStatus.STALLED if saw_finite else TrainStatus.DIVERGED
            logger.info(
                "Line search failed at iteration %d (%s)", iteration, status.value
            )
            break

        theta, value, gradient, step = candidate, cand_value, cand_gradient, trial
        grad_norm = float(np.linalg.norm(gradient))
        history.append(HistoryRecord(iteration, value, grad_norm, step))
        if iteration % 1000 == 0:
            logger.debug(
                "Iteration %d: Phi=%.6g grad_norm=%.3g", iteration, value, grad_norm
            )
    else:
        if grad_norm <= cfg.eps_crit:
            status = TrainStatus.CONVERGED

    logger.info(
        "Descent %s after %d iterations: Phi=%.6g grad_norm=%.3g",
        status.value,
        history[-1].iteration,
        value,
        grad_norm,
    )
    return TrainResult(theta, value, grad_norm, status, tuple(history))


@dataclass(frozen=True)
class CriticalityCheck:
    critical: bool
    grad_norm: float


def is_critical(
    params: NetworkParams, data: LabeledDataset, loss: Loss, eps: float
) -> CriticalityCheck:
    """||grad Phi||_2 <= eps, with the gradient from backpropagation."""
    objective = make_objective(params, data, loss)
    gradient = objective.gradient(objective.layout.flatten(params))
    grad_norm = float(np.linalg.norm(gradient))
    return CriticalityCheck(critical=grad_norm <= eps, grad_norm=grad_norm)


def validate_targets(
    Y: Matrix, activation: Activation, margin: float = TARGET_MARGIN
) -> bool:
    """Whether targets lie in the interior window of the activation's range.

    For bounded kinds the window is (mu + margin * range, gamma - margin * range);
    softplus needs positive targets. A warning is logged when the check fails.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if activation.name == "identity":
        return True
    if activation.name == "softplus":
        inside = bool(np.all(Y > 0))
    else:
        low, high = activation.bounds  # type: ignore[misc]
        pad = margin * (high - low)
        inside = bool(np.all((Y > low + pad) & (Y < high - pad)))
    if not inside:
        logger.warning(
            "Some targets lie outside the attainable window of %s; "
            "Phi = 0 may be unreachable",
            activation.describe(),
        )
    return inside


def initial_params(arch: Architecture, cfg: TrainConfig) -> NetworkParams:
    """init_params seeded from cfg.seed."""
    return init_params(arch, np.random.default_rng(cfg.seed), cfg.init_scale)


def train_network(
    params0: NetworkParams, data: LabeledDataset, loss: Loss, cfg: TrainConfig
) -> Tuple[NetworkParams, TrainResult]:
    """Flatten, minimize Phi, and unflatten the final iterate."""
    if not isinstance(loss, SeparableLoss):
        validate_targets(data.Y, params0.activation)
    objective = make_objective(params0, data, loss)
    theta0 = objective.layout.flatten(params0)
    result = minimize(objective.value_and_gradient, theta0, cfg)
    return objective.params(result.theta), result
