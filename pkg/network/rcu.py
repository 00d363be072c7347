# network/rcu.py
# Residual compensation units: chained channel-spatial attention blocks fusing two feature maps

import logging
from typing import Mapping, Optional

import numpy as np

from guardrails import check_rank, check_same_shape
from network.layers import Specs, conv, conv_bn_act, conv_specs, dense, linear_specs, merge
from numerics.tensor import ConvSpec, as_tensor, channel_pool, concat, global_pool, relu, sigmoid
from schemas.config import CsabSpec, RcuConfig

logger = logging.getLogger(__name__)

RCU_UNITS = ("rcu.1", "rcu.2", "rcu.3")


def _hidden(width: int, reduction: int) -> int:
    return max(1, width // reduction)


def csab_specs(prefix: str, width: int, spec: CsabSpec) -> Specs:
    return merge(
        conv_specs(f"{prefix}.conv", ConvSpec.same(width, width), bn=True),
        linear_specs(f"{prefix}.cab.fc1", width, _hidden(width, spec.reduction)) if spec.cab else None,
        linear_specs(f"{prefix}.cab.fc2", _hidden(width, spec.reduction), width) if spec.cab else None,
        conv_specs(f"{prefix}.sab.conv", ConvSpec.same(2, 1, kernel=spec.sab_kernel)) if spec.sab else None,
    )


def rcu_unit_specs(prefix: str, channels: int, spec: CsabSpec) -> Specs:
    width = 2 * channels
    return merge(
        *(csab_specs(f"{prefix}.csab{j}", width, spec) for j in range(spec.m)),
        conv_specs(f"{prefix}.proj", ConvSpec.pointwise(width, channels)),
    )


def rcu_param_specs(channels: int, cfg: RcuConfig = RcuConfig()) -> Specs:
    units = {"none": 0, "a": 1, "b": 2, "c": 3}[cfg.variant]
    return merge(*(rcu_unit_specs(prefix, channels, cfg.csab) for prefix in RCU_UNITS[:units]))


def cab_scale(x, weights: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    """Per-channel scale sigmoid(MLP(avg) + MLP(max)) in (0,1), shape [C]."""
    x = as_tensor(x)

    def mlp(v):
        return dense(relu(dense(v, weights, f"{prefix}.fc1")), weights, f"{prefix}.fc2")

    return sigmoid(mlp(global_pool(x, "avg")) + mlp(global_pool(x, "max")))


def cab(x, weights: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    x = as_tensor(x)
    return as_tensor(x * cab_scale(x, weights, prefix)[:, None, None])


def sab_scale(x, weights: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    """Per-pixel scale sigmoid(Conv_k(channel_pool(x))), shape [1,H,W]."""
    kernel = weights[f"{prefix}.conv.weight"].shape[-1]
    return sigmoid(conv(channel_pool(x), weights, f"{prefix}.conv", ConvSpec.same(2, 1, kernel=kernel)))


def sab(x, weights: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    x = as_tensor(x)
    return as_tensor(x * sab_scale(x, weights, prefix))


def csab(x, spec: CsabSpec, weights: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    """SAB(CAB(ReLU(BN(Conv3x3(x))))) + x."""
    x = as_tensor(x)
    width = x.shape[0]
    body = conv_bn_act(x, weights, f"{prefix}.conv", ConvSpec.same(width, width), "relu")
    if spec.cab:
        body = cab(body, weights, f"{prefix}.cab")
    if spec.sab:
        body = sab(body, weights, f"{prefix}.sab")
    return as_tensor(body + x)


def rcu_fuse(a, b, spec: CsabSpec, weights: Mapping[str, np.ndarray], prefix: str = "rcu.1") -> np.ndarray:
    """m CSABs over Concat[a, b] (2C), then a 1x1 projection back to C."""
    a, b = as_tensor(a), as_tensor(b)
    check_rank(a, 3, "rcu input a")
    check_same_shape(a, b, ("a", "b"))
    channels = a.shape[0]
    x = concat([a, b])
    for j in range(spec.m):
        x = csab(x, spec, weights, f"{prefix}.csab{j}")
    return conv(x, weights, f"{prefix}.proj", ConvSpec.pointwise(2 * channels, channels))


def rcu_tree(F_lf, F_gf, F_st, spec: CsabSpec, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """F_stf = RCU_3(RCU_1(F_lf, F_st), RCU_2(F_gf, F_st))."""
    check_same_shape(as_tensor(F_lf), as_tensor(F_st), ("F_lf", "F_st"))
    check_same_shape(as_tensor(F_gf), as_tensor(F_st), ("F_gf", "F_st"))
    stf1 = rcu_fuse(F_lf, F_st, spec, weights, "rcu.1")
    stf2 = rcu_fuse(F_gf, F_st, spec, weights, "rcu.2")
    return rcu_fuse(stf1, stf2, spec, weights, "rcu.3")


def rcu_forward(F_lf, F_gf, F_st, cfg: RcuConfig, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Fusion of the frequency and spatio-temporal features for the configured variant."""
    F_lf, F_gf, F_st = as_tensor(F_lf), as_tensor(F_gf), as_tensor(F_st)
    check_same_shape(F_lf, F_st, ("F_lf", "F_st"))
    check_same_shape(F_gf, F_st, ("F_gf", "F_st"))
    variant = cfg.variant
    if variant == "none":
        out = as_tensor(F_st + F_lf + F_gf)
    elif variant == "a":
        out = rcu_fuse(F_lf, F_st, cfg.csab, weights, "rcu.1")
    elif variant == "b":
        out = as_tensor(rcu_fuse(F_lf, F_st, cfg.csab, weights, "rcu.1")
                        + rcu_fuse(F_gf, F_st, cfg.csab, weights, "rcu.2"))
    else:
        out = rcu_tree(F_lf, F_gf, F_st, cfg.csab, weights)
    logger.debug("rcu: variant %s -> %s", variant, out.shape)
    return out
