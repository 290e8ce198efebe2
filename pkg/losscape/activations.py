"""Analytic activation functions for losscape.

Every activation is a fixed kind with closed-form value, derivative and
inverse, so that assumption audits are exact per kind. The identity kind is
only constructible with ``linear=True`` and is rejected on certification paths.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.special import expit, logit

logger = logging.getLogger(__name__)

ActivationName = Literal["sigmoid", "tanh", "softplus", "identity"]
ACTIVATION_NAMES: Tuple[ActivationName, ...] = (
    "sigmoid",
    "tanh",
    "softplus",
    "identity",
)

Array = npt.NDArray[np.float64]
GrowthConstants = Tuple[float, float, float, float]

MIN_AUDIT_HALF_WIDTH = 50.0
MIN_AUDIT_POINTS = 10_000
GROWTH_SLACK = 1e-12


class ActivationError(ValueError):
    """Exception raised for invalid activation kinds or audit requests."""

    pass


@dataclass(frozen=True)
class Activation:
    """An activation kind applied at every layer.

    Attributes:
        name: One of sigmoid, tanh, softplus, identity
        alpha: Sharpness of softplus, sigma(t) = log(1 + exp(alpha t)) / alpha
        linear: Must be True to build the identity kind
    """

    name: ActivationName
    alpha: float = 1.0
    linear: bool = False

    def __post_init__(self) -> None:
        if self.name not in ACTIVATION_NAMES:
            raise ActivationError(f"Unknown activation '{self.name}'")
        if self.name == "softplus" and not self.alpha > 0:
            raise ActivationError(f"softplus requires alpha > 0, got {self.alpha}")
        if self.name == "identity" and not self.linear:
            raise ActivationError(
                "The identity activation is only available for linear-network "
                "rank checks; pass linear=True"
            )

    @property
    def bounds(self) -> Optional[Tuple[float, float]]:
        """Range (mu, gamma) for bounded kinds, None otherwise."""
        if self.name == "sigmoid":
            return (0.0, 1.0)
        if self.name == "tanh":
            return (-1.0, 1.0)
        return None

    @property
    def is_certifiable(self) -> bool:
        return self.name != "identity"

    def value(self, t: Union[float, Array]) -> Array:
        t = np.asarray(t, dtype=np.float64)
        if self.name == "sigmoid":
            return np.asarray(expit(t))
        if self.name == "tanh":
            return np.tanh(t)
        if self.name == "softplus":
            return np.logaddexp(0.0, self.alpha * t) / self.alpha
        return t.copy()

    def derivative(self, t: Union[float, Array]) -> Array:
        # products of expit at +t and -t stay positive where 1 - sigma(t)^2 underflows
        t = np.asarray(t, dtype=np.float64)
        if self.name == "sigmoid":
            return np.asarray(expit(t) * expit(-t))
        if self.name == "tanh":
            return np.asarray(4.0 * expit(2.0 * t) * expit(-2.0 * t))
        if self.name == "softplus":
            return np.asarray(expit(self.alpha * t))
        return np.ones_like(t)

    def inverse(self, y: Union[float, Array]) -> Array:
        """sigma^{-1}(y) for y strictly inside the range.

        Raises:
            ActivationError: If some value lies outside the open range
        """
        y = np.asarray(y, dtype=np.float64)
        if self.name == "identity":
            return y.copy()
        if self.name == "softplus":
            if np.any(y <= 0):
                raise ActivationError("softplus is only invertible on (0, inf)")
            z = self.alpha * y
            # log(expm1(z)) without overflow for large z
            return (z + np.log(-np.expm1(-z))) / self.alpha

        low, high = self.bounds  # type: ignore[misc]
        if np.any(y <= low) or np.any(y >= high):
            raise ActivationError(f"{self.name} is only invertible on ({low}, {high})")
        if self.name == "sigmoid":
            return np.asarray(logit(y))
        return np.arctanh(y)

    def bound_gaps(self, t: Array) -> Tuple[Array, Array]:
        """Closed-form distances (sigma(t) - mu, gamma - sigma(t)) for bounded kinds."""
        if self.name == "sigmoid":
            return np.asarray(expit(t)), np.asarray(expit(-t))
        if self.name == "tanh":
            return np.asarray(2.0 * expit(2.0 * t)), np.asarray(2.0 * expit(-2.0 * t))
        raise ActivationError(f"{self.name} has no finite bounds")

    def describe(self) -> str:
        if self.name == "softplus":
            return f"softplus(alpha={self.alpha:g})"
        return self.name


def make_activation(
    name: str, alpha: float = 1.0, allow_identity: bool = False
) -> Activation:
    """Build an activation from its name, as found in configs and CLI flags."""
    if name == "identity" and not allow_identity:
        raise ActivationError("identity is not allowed here")
    return Activation(
        name=name, alpha=alpha, linear=name == "identity"  # type: ignore[arg-type]
    )


def require_certifiable(activation: Activation) -> None:
    """Reject kinds excluded by the certification theorems."""
    if not activation.is_certifiable:
        raise ActivationError(
            "identity activation is excluded from certification; "
            "it is only used for linear rank-bound checks"
        )


def activation_eval(kind: Activation, t: float) -> Tuple[float, float]:
    """Evaluate (sigma(t), sigma'(t)) at a single point.

    Args:
        kind: The activation
        t: Finite input

    Returns:
        Tuple of (value, derivative)
    """
    if not np.isfinite(t):
        raise ActivationError(f"Activation input must be finite, got {t}")
    return float(kind.value(t)), float(kind.derivative(t))


def activation_inverse(kind: Activation, y: Union[float, Array]) -> Array:
    """sigma^{-1}(y) elementwise; see Activation.inverse."""
    return kind.inverse(y)


@dataclass(frozen=True)
class AuditResult:
    """Outcome of an assumption audit over a sampling grid."""

    passed: bool
    mode: str
    first_violation: Optional[float]
    detail: str


def audit_grid(
    half_width: float = MIN_AUDIT_HALF_WIDTH, points: int = MIN_AUDIT_POINTS
) -> Array:
    """Uniform grid on [-half_width, half_width].

    Raises:
        ActivationError: If the grid is narrower or coarser than the audit minimum
    """
    if half_width < MIN_AUDIT_HALF_WIDTH:
        raise ActivationError(
            f"Audit grid must cover at least [-50, 50], got T={half_width}"
        )
    if points < MIN_AUDIT_POINTS:
        raise ActivationError(f"Audit grid needs at least 10^4 points, got {points}")
    return np.linspace(-half_width, half_width, points)


def audit_activation(
    kind: Activation,
    rho: Union[GrowthConstants, Literal["bounded"]],
    grid: Optional[Array] = None,
) -> AuditResult:
    """Audit the activation assumptions on a grid.

    In "bounded" mode checks mu < sigma(t) < gamma and strict monotonicity of the
    sampled values. In growth mode checks |sigma(t)| <= rho1 exp(rho2 t) for
    t < 0 and |sigma(t)| <= rho3 t + rho4 for t >= 0.

    Args:
        kind: The activation to audit
        rho: The constants (rho1, rho2, rho3, rho4), or "bounded"
        grid: Sample points; defaults to audit_grid()

    Returns:
        AuditResult with the first violating t, if any

    Raises:
        ActivationError: If a rho is not positive, or "bounded" is used on an
            unbounded kind
    """
    t = audit_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if grid is not None:
        audit_grid(float(max(-t.min(), t.max())), t.size)
    t = np.sort(t)

    if rho == "bounded":
        if kind.bounds is None:
            raise ActivationError(
                f"{kind.describe()} is unbounded; use growth constants"
            )
        lower_gap, upper_gap = kind.bound_gaps(t)
        inside = (lower_gap > 0) & (upper_gap > 0)
        if not np.all(inside):
            bad = float(t[np.argmin(inside)])
            detail = f"sigma({bad:g}) leaves {kind.bounds}"
            return AuditResult(False, "bounded", bad, detail)

        increasing = (np.diff(lower_gap) > 0) | (np.diff(upper_gap) < 0)
        if not np.all(increasing):
            bad = float(t[1:][np.argmin(increasing)])
            detail = f"not strictly increasing at t={bad:g}"
            return AuditResult(False, "bounded", bad, detail)
        mu, gamma = kind.bounds
        return AuditResult(True, "bounded", None, f"range ({mu:g}, {gamma:g})")

    rho1, rho2, rho3, rho4 = (float(r) for r in rho)
    if min(rho1, rho2, rho3, rho4) <= 0:
        raise ActivationError(f"Growth constants must be positive, got {rho}")

    magnitude = np.abs(kind.value(t))
    bound = np.where(t < 0, rho1 * np.exp(rho2 * np.minimum(t, 0.0)), rho3 * t + rho4)
    violated = magnitude > bound * (1.0 + GROWTH_SLACK)
    if np.any(violated):
        bad = float(t[np.argmax(violated)])
        return AuditResult(False, "growth", bad, f"growth bound violated at t={bad:g}")

    detail = f"rho=({rho1:g}, {rho2:g}, {rho3:g}, {rho4:g})"
    return AuditResult(True, "growth", None, detail)


def softplus_growth_constants(alpha: float) -> GrowthConstants:
    """The growth constants (1/alpha, alpha, 1, log(2)/alpha) satisfied by softplus."""
    return (1.0 / alpha, alpha, 1.0, float(np.log(2.0)) / alpha)
