# network/layers.py
# Parameter-spec builders and the small conv / norm / linear blocks every module is made of

from collections import OrderedDict
from typing import Callable, Dict, Literal, Mapping, Optional

import numpy as np

from network.weights import ParamSpec
from numerics.tensor import ConvSpec, batch_norm, conv2d, layer_norm, linear, prelu, relu, sigmoid, silu

Specs = Dict[str, ParamSpec]
Activation = Literal["silu", "relu", "sigmoid", "none"]

PRELU_SLOPE = 0.25

_ACTIVATIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "silu": silu,
    "relu": relu,
    "sigmoid": sigmoid,
    "none": lambda x: x,
}


# ---------------- spec builders ---------------- #

def conv_specs(prefix: str, spec: ConvSpec, bn: bool = False) -> Specs:
    specs: Specs = OrderedDict()
    specs[f"{prefix}.weight"] = ParamSpec(spec.weight_shape, "fan_in", spec.fan_in)
    if spec.has_bias:
        specs[f"{prefix}.bias"] = ParamSpec((spec.out_channels,), "fan_in", spec.fan_in)
    if bn:
        specs.update(bn_specs(f"{prefix}.bn", spec.out_channels))
    return specs


def bn_specs(prefix: str, channels: int) -> Specs:
    return OrderedDict([
        (f"{prefix}.gamma", ParamSpec((channels,), "ones")),
        (f"{prefix}.beta", ParamSpec((channels,), "zeros")),
        (f"{prefix}.mean", ParamSpec((channels,), "zeros")),
        (f"{prefix}.var", ParamSpec((channels,), "ones")),
    ])


def linear_specs(prefix: str, in_features: int, out_features: int) -> Specs:
    return OrderedDict([
        (f"{prefix}.weight", ParamSpec((out_features, in_features), "fan_in", in_features)),
        (f"{prefix}.bias", ParamSpec((out_features,), "fan_in", in_features)),
    ])


def ln_specs(prefix: str, features: int) -> Specs:
    return OrderedDict([
        (f"{prefix}.gamma", ParamSpec((features,), "ones")),
        (f"{prefix}.beta", ParamSpec((features,), "zeros")),
    ])


def prelu_specs(prefix: str, channels: int) -> Specs:
    return OrderedDict([(f"{prefix}.slope", ParamSpec((channels,), "const", value=PRELU_SLOPE))])


# ---------------- blocks ---------------- #

def conv(x, weights: Mapping[str, np.ndarray], prefix: str, spec: ConvSpec) -> np.ndarray:
    bias = weights[f"{prefix}.bias"] if spec.has_bias else None
    return conv2d(x, weights[f"{prefix}.weight"], bias, spec)


def bn(x, weights: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    return batch_norm(
        x,
        weights[f"{prefix}.gamma"],
        weights[f"{prefix}.beta"],
        weights[f"{prefix}.mean"],
        weights[f"{prefix}.var"],
    )


def conv_bn_act(x, weights: Mapping[str, np.ndarray], prefix: str, spec: ConvSpec,
                act: Activation = "silu") -> np.ndarray:
    """Conv -> BatchNorm -> activation; BN parameters live under `{prefix}.bn`."""
    return _ACTIVATIONS[act](bn(conv(x, weights, prefix, spec), weights, f"{prefix}.bn"))


def conv_act(x, weights: Mapping[str, np.ndarray], prefix: str, spec: ConvSpec,
             act: Activation = "none") -> np.ndarray:
    return _ACTIVATIONS[act](conv(x, weights, prefix, spec))


def dense(x, weights: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    return linear(x, weights[f"{prefix}.weight"], weights[f"{prefix}.bias"])


def norm(x, weights: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    return layer_norm(x, weights[f"{prefix}.gamma"], weights[f"{prefix}.beta"])


def prelu_at(x, weights: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    return prelu(x, weights[f"{prefix}.slope"])


def merge(*groups: Optional[Specs]) -> Specs:
    merged: Specs = OrderedDict()
    for group in groups:
        if group:
            merged.update(group)
    return merged
