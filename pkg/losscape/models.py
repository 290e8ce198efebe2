"""Supported activations and losses, and the shapes of files losscape writes."""

from typing import Dict, List, Literal, Optional, TypedDict


class ActivationInfo(TypedDict):
    name: str
    formula: str
    kind: Literal["bounded", "growth", "linear"]
    parameters: Dict[str, str]
    certifiable: bool


class LossInfo(TypedDict):
    name: str
    formula: str
    family: Literal["regression", "classification"]
    parameters: Dict[str, str]


class ParamsDocument(TypedDict):
    widths: List[int]
    activation: str
    alpha: float
    weights: List[List[List[float]]]
    biases: List[List[float]]


class ConditionDocument(TypedDict):
    name: str
    satisfied: bool
    value: Optional[float]
    threshold: Optional[float]


SUPPORTED_ACTIVATIONS: Dict[str, ActivationInfo] = {
    "sigmoid": {
        "name": "Sigmoid",
        "formula": "1 / (1 + exp(-t))",
        "kind": "bounded",
        "parameters": {},
        "certifiable": True,
    },
    "tanh": {
        "name": "Hyperbolic tangent",
        "formula": "tanh(t)",
        "kind": "bounded",
        "parameters": {},
        "certifiable": True,
    },
    "softplus": {
        "name": "Softplus",
        "formula": "log(1 + exp(alpha t)) / alpha",
        "kind": "growth",
        "parameters": {"alpha": "sharpness, > 0"},
        "certifiable": True,
    },
    "identity": {
        "name": "Identity",
        "formula": "t",
        "kind": "linear",
        "parameters": {},
        "certifiable": False,  # linear rank bounds only
    },
}


SUPPORTED_LOSSES: Dict[str, LossInfo] = {
    "squared": {
        "name": "Squared",
        "formula": "a^2",
        "family": "regression",
        "parameters": {},
    },
    "pseudo_huber": {
        "name": "Pseudo-Huber",
        "formula": "2 delta^2 (sqrt(1 + (a/delta)^2) - 1)",
        "family": "regression",
        "parameters": {"delta": "scale, > 0"},
    },
    "cauchy": {
        "name": "Cauchy",
        "formula": "delta^2 log(1 + (a/delta)^2)",
        "family": "regression",
        "parameters": {"delta": "scale, != 0"},
    },
    "blake_zisserman": {
        "name": "Blake-Zisserman",
        "formula": "-log(exp(-a^2) + delta)",
        "family": "regression",
        "parameters": {"delta": "outlier floor, > 0"},
    },
    "corrupted_gaussian": {
        "name": "Corrupted Gaussian",
        "formula": "-log(mix exp(-a^2) + (1 - mix) exp(-a^2/w^2) / w)",
        "family": "regression",
        "parameters": {"mix": "weight in [0, 1]", "width": "w, > 0"},
    },
    "separable": {
        "name": "Separable pair",
        "formula": "min(a, 0)^2 on the true class, max(a, 0)^2 elsewhere",
        "family": "classification",
        "parameters": {},
    },
}
