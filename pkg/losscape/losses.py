"""Loss families and training objectives for losscape.

This module handles:
1. Regression losses l(a) on the residual a = f - y, with closed-form l'(a)
2. The separable classification pair (l1 on the true class, l2 elsewhere)
3. Labeled datasets and the objectives Phi summed over samples and outputs
4. A numerical audit of "l'(a) = 0 implies a is a global minimum"
"""

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.special import expit, logsumexp

from losscape.activations import Activation
from losscape.linalg import Matrix, as_matrix
from losscape.network import NetworkParams, ShapeError, forward

logger = logging.getLogger(__name__)

RegressionLossName = Literal[
    "squared", "pseudo_huber", "blake_zisserman", "corrupted_gaussian", "cauchy"
]
REGRESSION_LOSS_NAMES: Tuple[RegressionLossName, ...] = (
    "squared",
    "pseudo_huber",
    "blake_zisserman",
    "corrupted_gaussian",
    "cauchy",
)

Array = npt.NDArray[np.float64]

AUDIT_HALF_WIDTH = 20.0
AUDIT_POINTS = 10_000
STATIONARY_THRESHOLD = 1e-9
MINIMUM_TOLERANCE = 1e-6


class LossError(ValueError):
    """Exception raised for invalid loss parameters."""

    pass


class DatasetError(ValueError):
    """Exception raised for datasets that violate the training-data assumptions."""

    pass


@dataclass(frozen=True)
class RegressionLoss:
    """A regression loss on residuals.

    Attributes:
        name: Loss family
        delta: Scale of pseudo_huber and cauchy, floor of blake_zisserman
        mix: Mixture weight of the narrow component of corrupted_gaussian
        width: Width w of the broad component of corrupted_gaussian
    """

    name: RegressionLossName = "squared"
    delta: float = 1.0
    mix: float = 0.5
    width: float = 1.0

    def __post_init__(self) -> None:
        if self.name not in REGRESSION_LOSS_NAMES:
            raise LossError(f"Unknown regression loss '{self.name}'")
        if self.name in ("pseudo_huber", "blake_zisserman") and not self.delta > 0:
            raise LossError(f"{self.name} requires delta > 0, got {self.delta}")
        if self.name == "cauchy" and self.delta == 0:
            raise LossError("cauchy requires delta != 0")
        if self.name == "corrupted_gaussian":
            if not 0.0 <= self.mix <= 1.0:
                raise LossError(
                    f"corrupted_gaussian requires mix in [0, 1], got {self.mix}"
                )
            if not self.width > 0:
                raise LossError(
                    f"corrupted_gaussian requires width > 0, got {self.width}"
                )

    def evaluate(self, a: Union[float, Array]) -> Tuple[Array, Array]:
        """Return (l(a), l'(a)) elementwise."""
        a = np.asarray(a, dtype=np.float64)

        if self.name == "squared":
            return a**2, 2.0 * a

        if self.name == "pseudo_huber":
            root = np.sqrt(1.0 + (a / self.delta) ** 2)
            # 2 delta^2 (root - 1) without cancellation near a = 0
            return 2.0 * a**2 / (root + 1.0), 2.0 * a / root

        if self.name == "cauchy":
            ratio = (a / self.delta) ** 2
            return self.delta**2 * np.log1p(ratio), 2.0 * a / (1.0 + ratio)

        if self.name == "blake_zisserman":
            log_delta = np.log(self.delta)
            value = -np.logaddexp(-(a**2), log_delta)
            return value, 2.0 * a * expit(-(a**2) - log_delta)

        # corrupted_gaussian, stabilized by log-sum-exp
        w = self.width
        log_terms = np.stack([-(a**2), -((a / w) ** 2)])
        weights = np.array([self.mix, (1.0 - self.mix) / w])
        weights = weights.reshape((2,) + (1,) * a.ndim)
        lse = logsumexp(log_terms, axis=0, b=weights)
        responsibility = weights * np.exp(log_terms - lse)
        derivative = 2.0 * a * (responsibility[0] + responsibility[1] / w**2)
        return -lse, derivative

    def minimum_value(self) -> float:
        """l(0); every implemented kind attains its global minimum at a = 0."""
        return float(self.evaluate(0.0)[0])

    def describe(self) -> str:
        if self.name in ("pseudo_huber", "blake_zisserman", "cauchy"):
            return f"{self.name}(delta={self.delta:g})"
        if self.name == "corrupted_gaussian":
            return f"{self.name}(mix={self.mix:g}, width={self.width:g})"
        return self.name


@dataclass(frozen=True)
class SeparableLoss:
    """The pair l1(a) = min(a, 0)^2 on the true class and l2(a) = max(a, 0)^2
    on the other classes."""

    name: Literal["separable"] = "separable"

    def evaluate(
        self, a: Union[float, Array], in_class: Union[bool, npt.NDArray[np.bool_]]
    ) -> Tuple[Array, Array]:
        """Return (l(a), l'(a)) using l1 where in_class holds and l2 elsewhere."""
        a = np.asarray(a, dtype=np.float64)
        clipped = np.where(in_class, np.minimum(a, 0.0), np.maximum(a, 0.0))
        return clipped**2, 2.0 * clipped

    def describe(self) -> str:
        return self.name


Loss = Union[RegressionLoss, SeparableLoss]


def make_loss(
    name: str, delta: float = 1.0, mix: float = 0.5, width: float = 1.0
) -> Loss:
    """Build a loss from its name, as found in configs and CLI flags."""
    if name == "separable":
        return SeparableLoss()
    return RegressionLoss(
        name=name, delta=delta, mix=mix, width=width  # type: ignore[arg-type]
    )


def regression_loss_eval(kind: RegressionLoss, a: float) -> Tuple[float, float]:
    """Evaluate (l(a), l'(a)) at a single residual."""
    value, derivative = kind.evaluate(a)
    return float(value), float(derivative)


def separable_loss_eval(a: float, in_class: bool) -> Tuple[float, float]:
    """Evaluate l1 (in_class) or l2 (otherwise) at a single residual."""
    value, derivative = SeparableLoss().evaluate(a, in_class)
    return float(value), float(derivative)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Training data X (N x d), targets Y (N x m) and optional class labels.

    Attributes:
        X: Inputs, one sample per row, no two rows identical
        Y: Targets
        classes: 0-based class index per sample; when present Y must follow
            the one-vs-rest encoding (high on the true class, low elsewhere)
        label_encoding: (high, low), +1/-1 by default
    """

    X: Matrix
    Y: Matrix
    classes: Optional[npt.NDArray[np.int64]] = None
    label_encoding: Tuple[float, float] = field(default=(1.0, -1.0))

    def __post_init__(self) -> None:
        X = as_matrix(self.X, "X")
        Y = as_matrix(self.Y, "Y")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if X.shape[0] != Y.shape[0]:
            raise DatasetError(f"X has {X.shape[0]} samples but Y has {Y.shape[0]}")

        duplicate = find_duplicate_rows(X)
        if duplicate is not None:
            i, j = duplicate
            raise DatasetError(f"Samples {i} and {j} are identical")

        if self.classes is None:
            return

        classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "classes", classes)
        high, low = self.label_encoding
        if not high > low:
            raise DatasetError(
                f"Label encoding needs high > low, got {self.label_encoding}"
            )
        if classes.shape[0] != X.shape[0]:
            raise DatasetError(f"{classes.shape[0]} labels for {X.shape[0]} samples")
        m = Y.shape[1]
        if classes.size and (classes.min() < 0 or classes.max() >= m):
            raise DatasetError(f"Class labels must lie in [0, {m - 1}]")
        if not np.array_equal(Y, encode_labels(classes, m, self.label_encoding)):
            raise DatasetError("Y does not follow the one-vs-rest label encoding")

    @classmethod
    def from_classes(
        cls,
        X: Matrix,
        classes: npt.ArrayLike,
        num_classes: Optional[int] = None,
        label_encoding: Tuple[float, float] = (1.0, -1.0),
    ) -> "LabeledDataset":
        """Build a classification dataset with one-vs-rest targets."""
        labels = np.asarray(classes, dtype=np.int64).reshape(-1)
        if labels.size and labels.min() < 0:
            raise DatasetError("Class labels must be non-negative")
        m = int(num_classes) if num_classes is not None else int(labels.max()) + 1
        if labels.size and labels.max() >= m:
            raise DatasetError(f"Class labels must lie in [0, {m - 1}]")
        Y = encode_labels(labels, m, label_encoding)
        return cls(X=X, Y=Y, classes=labels, label_encoding=label_encoding)

    @property
    def num_samples(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def output_dim(self) -> int:
        return self.Y.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.classes is not None

    def in_class_mask(self) -> npt.NDArray[np.bool_]:
        """Boolean N x m matrix, True where x_i belongs to C_j."""
        if self.classes is None:
            raise DatasetError("Dataset has no class labels")
        mask = np.zeros(self.Y.shape, dtype=bool)
        mask[np.arange(self.num_samples), self.classes] = True
        return mask


def encode_labels(
    classes: npt.NDArray[np.int64],
    num_classes: int,
    label_encoding: Tuple[float, float],
) -> Matrix:
    high, low = label_encoding
    Y = np.full((classes.shape[0], num_classes), float(low))
    Y[np.arange(classes.shape[0]), classes] = float(high)
    return Y


def find_duplicate_rows(X: Matrix) -> Optional[Tuple[int, int]]:
    """First pair (i, j), i < j, of exactly identical rows, or None."""
    _, first_index, inverse = np.unique(
        X, axis=0, return_index=True, return_inverse=True
    )
    inverse = np.asarray(inverse).reshape(-1)
    for j, group in enumerate(inverse):
        i = int(first_index[group])
        if i != j:
            return (min(i, j), max(i, j))
    return None


def output_loss_terms(
    loss: Loss, outputs: Matrix, data: LabeledDataset
) -> Tuple[Array, Array]:
    """Entrywise (l, l') of F_L - Y, dispatching on the loss family."""
    if outputs.shape != data.Y.shape:
        raise ShapeError(
            f"Network output {outputs.shape} does not match targets {data.Y.shape}"
        )
    residual = outputs - data.Y
    if isinstance(loss, SeparableLoss):
        return loss.evaluate(residual, data.in_class_mask())
    return loss.evaluate(residual)


def _check_data(params: NetworkParams, data: LabeledDataset) -> None:
    arch = params.architecture
    if data.input_dim != arch.input_dim or data.output_dim != arch.output_dim:
        raise ShapeError(
            f"Data is {data.input_dim} -> {data.output_dim} but the network is "
            f"{arch.input_dim} -> {arch.output_dim}"
        )


def objective_regression(
    params: NetworkParams, data: LabeledDataset, kind: RegressionLoss
) -> float:
    """Phi = sum_i sum_j l((F_L)_ij - Y_ij)."""
    _check_data(params, data)
    values, _ = output_loss_terms(kind, forward(params, data.X).output, data)
    return float(np.sum(values))


def objective_separable(params: NetworkParams, data: LabeledDataset) -> float:
    """Phi with l1 on true-class entries and l2 on the others.

    Raises:
        DatasetError: If the dataset has no class labels
    """
    if not data.is_classification:
        raise DatasetError("The separable objective needs class labels")
    _check_data(params, data)
    values, _ = output_loss_terms(SeparableLoss(), forward(params, data.X).output, data)
    return float(np.sum(values))


def objective(params: NetworkParams, data: LabeledDataset, loss: Loss) -> float:
    """Phi for either loss family."""
    if isinstance(loss, SeparableLoss):
        return objective_separable(params, data)
    return objective_regression(params, data, loss)


def squared_hinge(outputs: Matrix, Y: Matrix) -> float:
    """sum_ij max{0, 1 - y_ij f_ij}^2, the +1/-1 form of the separable objective."""
    return float(np.sum(np.maximum(0.0, 1.0 - Y * outputs) ** 2))


def targets_attainable(Y: Matrix, activation: Activation) -> bool:
    """True when every target lies strictly inside the range of the activation."""
    if activation.name == "identity":
        return True
    if activation.name == "softplus":
        return bool(np.all(Y > 0))
    low, high = activation.bounds  # type: ignore[misc]
    return bool(np.all((Y > low) & (Y < high)))


def global_minimum_reference(
    loss: Loss, data: LabeledDataset, activation: Activation
) -> Optional[float]:
    """The attainable optimum of Phi, or None when it is not known exactly.

    The separable objective is bounded below by zero. For regression losses,
    a certified critical point has F_L = Y, so the optimum is N m l(0) whenever
    every target is reachable by the output activation.
    """
    if isinstance(loss, SeparableLoss):
        return 0.0
    if not targets_attainable(data.Y, activation):
        logger.warning(
            "Targets are not strictly inside the range of %s; "
            "no exact global minimum reference",
            activation.describe(),
        )
        return None
    return data.num_samples * data.output_dim * loss.minimum_value()


@dataclass(frozen=True)
class LossAudit:
    """Outcome of the stationary-point audit of a regression loss."""

    passed: bool
    grid_minimum: float
    violations: int
    first_violation: Optional[float]


def audit_loss(
    kind: RegressionLoss,
    grid: Optional[Array] = None,
    stationary_threshold: float = STATIONARY_THRESHOLD,
    tolerance: float = MINIMUM_TOLERANCE,
) -> LossAudit:
    """Check numerically that near-stationary points of l are global minima.

    A grid point is a violation when |l'(a)| is below the threshold, l(a) is
    not within tolerance of the grid minimum, and l'(a) does not point away
    from the minimizer (a loss that is still strictly descending toward its
    minimum is not stationary, however flat).
    """
    if grid is None:
        a = np.linspace(-AUDIT_HALF_WIDTH, AUDIT_HALF_WIDTH, AUDIT_POINTS)
    else:
        a = np.asarray(grid, dtype=np.float64)
    values, derivatives = kind.evaluate(a)
    best = int(np.argmin(values))
    grid_minimum = float(values[best])

    near_stationary = np.abs(derivatives) < stationary_threshold
    far_from_minimum = values > grid_minimum + tolerance
    descending = np.sign(derivatives) == np.sign(a - a[best])
    violated = near_stationary & far_from_minimum & ~descending

    count = int(np.count_nonzero(violated))
    first = float(a[np.argmax(violated)]) if count else None
    return LossAudit(
        passed=count == 0,
        grid_minimum=grid_minimum,
        violations=count,
        first_violation=first,
    )
