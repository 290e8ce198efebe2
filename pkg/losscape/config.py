"""Configuration handling for losscape.

One YAML or JSON document describes an experiment. Command-line flags
override it; the LOSSCAPE_SEED environment variable supplies the seed when
neither does.
"""

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union, cast

import yaml

from losscape.activations import Activation, ActivationError, make_activation
from losscape.certify import PreconditionError, Tolerances
from losscape.losses import Loss, LossError, make_loss
from losscape.network import Architecture, ShapeError
from losscape.trainer import TrainConfig, TrainConfigError

ENV_SEED = "LOSSCAPE_SEED"
DEFAULT_SEED = 0

TOP_LEVEL_KEYS = (
    "dataset",
    "widths",
    "activation",
    "loss",
    "k",
    "subset",
    "tolerances",
    "train",
    "seeds",
    "output_dir",
    "label_encoding",
)
ACTIVATION_KEYS = ("name", "alpha")
LOSS_KEYS = ("name", "delta", "mix", "width")
TOLERANCE_KEYS = ("eps_crit", "eps_phi", "rank_tol", "tau_nd")
TRAIN_KEYS = (
    "max_iters",
    "initial_step",
    "shrink",
    "sufficient_decrease",
    "step_growth",
    "max_backtracks",
    "init_scale",
)


class ConfigError(ValueError):
    """Exception raised for malformed configuration documents."""

    pass


@dataclass(frozen=True)
class ActivationSettings:
    name: str = "sigmoid"
    alpha: float = 1.0

    def build(self) -> Activation:
        return make_activation(self.name, self.alpha)


@dataclass(frozen=True)
class LossSettings:
    name: str = "squared"
    delta: float = 1.0
    mix: float = 0.5
    width: float = 1.0

    def build(self) -> Loss:
        return make_loss(self.name, self.delta, self.mix, self.width)


@dataclass(frozen=True)
class ExperimentConfig:
    """A parsed experiment document."""

    dataset: Optional[str] = None
    widths: Tuple[int, ...] = ()
    activation: ActivationSettings = field(default_factory=ActivationSettings)
    loss: LossSettings = field(default_factory=LossSettings)
    k: Optional[int] = None
    subset: Tuple[int, ...] = ()
    tolerances: Tolerances = field(default_factory=Tolerances)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: Tuple[int, ...] = (DEFAULT_SEED,)
    output_dir: str = "results"
    label_encoding: Tuple[float, float] = (1.0, -1.0)

    def architecture(self) -> Architecture:
        if not self.widths:
            raise ConfigError("widths: an architecture is required for this command")
        return Architecture(self.widths, self.activation.build())

    def train_config(self, seed: int) -> TrainConfig:
        """Training settings for one seed, stopping at tolerances.eps_crit."""
        return replace(self.train, seed=seed, eps_crit=self.tolerances.eps_crit)

    def to_dict(self) -> Dict[str, Any]:
        """A document that parse_config turns back into an equal config."""
        return {
            "dataset": self.dataset,
            "widths": list(self.widths),
            "activation": {
                "name": self.activation.name,
                "alpha": self.activation.alpha,
            },
            "loss": {
                "name": self.loss.name,
                "delta": self.loss.delta,
                "mix": self.loss.mix,
                "width": self.loss.width,
            },
            "k": self.k,
            "subset": list(self.subset),
            "tolerances": {
                "eps_crit": self.tolerances.eps_crit,
                "eps_phi": self.tolerances.eps_phi,
                "rank_tol": self.tolerances.rank_tol,
                "tau_nd": self.tolerances.tau_nd,
            },
            "train": {key: getattr(self.train, key) for key in TRAIN_KEYS},
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "label_encoding": list(self.label_encoding),
        }


def _section(
    document: Mapping[str, Any], key: str, allowed: Sequence[str]
) -> Dict[str, Any]:
    value = document.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: expected a mapping, got {type(value).__name__}")
    unknown = sorted(set(value) - set(allowed))
    if unknown:
        raise ConfigError(f"{key}.{unknown[0]}: unknown key")
    return dict(value)


def _int_list(value: Any, key: str) -> Tuple[int, ...]:
    if isinstance(value, str):
        return parse_int_list(value, key)
    if not isinstance(value, list) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in value
    ):
        raise ConfigError(f"{key}: expected a list of integers")
    return tuple(value)


def parse_int_list(text: str, key: str = "subset") -> Tuple[int, ...]:
    """Parse "2,3" into (2, 3)."""
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(
            f"{key}: expected comma-separated integers, got '{text}'"
        ) from None


def env_seed() -> Optional[int]:
    """Seed from LOSSCAPE_SEED, if set."""
    raw = os.environ.get(ENV_SEED)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_SEED}: expected an integer, got '{raw}'") from None


def resolve_seed(flag: Optional[int] = None) -> int:
    """Command-line seed, else LOSSCAPE_SEED, else 0."""
    if flag is not None:
        return flag
    seed = env_seed()
    return DEFAULT_SEED if seed is None else seed


def parse_config(document: Any) -> ExperimentConfig:
    """Validate a loaded document and build an ExperimentConfig.

    Raises:
        ConfigError: Naming the offending key
    """
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError("Configuration must be a mapping at the top level")
    unknown = sorted(set(document) - set(TOP_LEVEL_KEYS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")

    try:
        section = _section(document, "activation", ACTIVATION_KEYS)
        activation = ActivationSettings(**section)
        activation.build()
    except (ActivationError, TypeError) as e:
        raise ConfigError(f"activation: {e}") from None

    try:
        loss = LossSettings(**_section(document, "loss", LOSS_KEYS))
        loss.build()
    except (LossError, TypeError) as e:
        raise ConfigError(f"loss: {e}") from None

    try:
        tolerances = Tolerances(**_section(document, "tolerances", TOLERANCE_KEYS))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"tolerances: {e}") from None

    try:
        train = TrainConfig(**_section(document, "train", TRAIN_KEYS))
    except (TrainConfigError, TypeError) as e:
        raise ConfigError(f"train: {e}") from None

    widths = _int_list(document.get("widths") or [], "widths")
    if widths:
        try:
            Architecture(widths, activation.build())
        except ShapeError as e:
            raise ConfigError(f"widths: {e}") from None

    k = document.get("k")
    if k is not None and (not isinstance(k, int) or isinstance(k, bool) or k < 0):
        raise ConfigError(f"k: expected a non-negative integer, got {k!r}")

    if document.get("seeds") is not None:
        seeds = _int_list(document["seeds"], "seeds")
        if not seeds:
            raise ConfigError("seeds: expected at least one seed")
    else:
        seeds = (resolve_seed(),)

    encoding = document.get("label_encoding", [1.0, -1.0])
    if (
        not isinstance(encoding, list)
        or len(encoding) != 2
        or not all(isinstance(v, (int, float)) for v in encoding)
        or not encoding[0] > encoding[1]
    ):
        raise ConfigError("label_encoding: expected [high, low] with high > low")

    dataset = document.get("dataset")
    if dataset is not None and not isinstance(dataset, str):
        raise ConfigError("dataset: expected a path")
    output_dir = document.get("output_dir", "results")
    if not isinstance(output_dir, str):
        raise ConfigError("output_dir: expected a path")

    return ExperimentConfig(
        dataset=dataset,
        widths=widths,
        activation=activation,
        loss=loss,
        k=k,
        subset=_int_list(document.get("subset") or [], "subset"),
        tolerances=tolerances,
        train=train,
        seeds=seeds,
        output_dir=output_dir,
        label_encoding=(float(encoding[0]), float(encoding[1])),
    )


def load_config(config_path: Union[str, Path]) -> ExperimentConfig:
    """Load an experiment from a YAML or JSON file.

    Raises:
        ConfigError: If the file is missing, unparsable or invalid
    """
    try:
        with open(config_path, "r") as f:
            document = cast(Any, yaml.safe_load(f))
    except FileNotFoundError:
        raise ConfigError(f"Configuration file not found at {config_path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in configuration file: {e}") from None
    return parse_config(document)


FLAG_TARGETS: Dict[str, Tuple[str, str]] = {
    "activation_name": ("activation", "name"),
    "alpha": ("activation", "alpha"),
    "loss_name": ("loss", "name"),
    "delta": ("loss", "delta"),
    "mix": ("loss", "mix"),
    "width": ("loss", "width"),
    "eps_crit": ("tolerances", "eps_crit"),
    "eps_phi": ("tolerances", "eps_phi"),
    "rank_tol": ("tolerances", "rank_tol"),
    "tau_nd": ("tolerances", "tau_nd"),
    "max_iters": ("train", "max_iters"),
    "initial_step": ("train", "initial_step"),
    "init_scale": ("train", "init_scale"),
}


def override(config: ExperimentConfig, **flags: Any) -> ExperimentConfig:
    """Apply the command-line flags that were given (not None) on top of a config.

    Raises:
        ConfigError: If a flag is unknown or its value is invalid
    """
    known = {f.name for f in fields(ExperimentConfig)}
    top: Dict[str, Any] = {}
    nested: Dict[str, Dict[str, Any]] = {}
    for key, value in flags.items():
        if value is None:
            continue
        if key in FLAG_TARGETS:
            section, name = FLAG_TARGETS[key]
            nested.setdefault(section, {})[name] = value
        elif key in known:
            top[key] = value
        else:
            raise ConfigError(f"{key}: unknown setting")

    try:
        for section, changes in nested.items():
            top[section] = replace(getattr(config, section), **changes)
        updated = replace(config, **top)
        updated.activation.build()
        updated.loss.build()
    except (ActivationError, LossError, PreconditionError, TrainConfigError) as e:
        raise ConfigError(str(e)) from None
    return updated
