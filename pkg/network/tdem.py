# network/tdem.py
# Temporal dynamics: adjacent-frame differences, motion encoding and dual residual enhancement

import logging
from typing import Mapping, Optional

import numpy as np

from guardrails import ShapeError, check_rank
from network.layers import Specs, conv, conv_specs, merge, prelu_at, prelu_specs
from numerics.tensor import ConvSpec, as_tensor, pool2d, upsample_nearest
from schemas.config import TdemConfig

logger = logging.getLogger(__name__)


def residual_specs(prefix: str, channels: int) -> Specs:
    spec = ConvSpec.same(channels, channels)
    return merge(conv_specs(f"{prefix}.conv1", spec), prelu_specs(prefix, channels),
                 conv_specs(f"{prefix}.conv2", spec))


def tdem_param_specs(window: int, channels: int, cfg: TdemConfig = TdemConfig()) -> Specs:
    if not cfg.enabled:
        return {}
    return merge(
        conv_specs("tdem.motion", ConvSpec.same((window - 1) * channels, channels)),
        conv_specs("tdem.shared", ConvSpec.same(channels, channels)),
        residual_specs("tdem.resb1", channels) if cfg.resb1 else None,
        residual_specs("tdem.resb2", channels) if cfg.resb2 else None,
    )


def frame_diffs(F_c) -> np.ndarray:
    """[T,C,H,W] -> [(T-1)C,H,W]; block i holds F_{i+1} - F_i."""
    F_c = as_tensor(F_c)
    check_rank(F_c, 4, "F_c [T,C,H,W]")
    window, channels, height, width = F_c.shape
    if window < 2:
        raise ShapeError(f"F_c: dimension 0 (T) must be >= 2, got {window}")
    return as_tensor((F_c[1:] - F_c[:-1]).reshape((window - 1) * channels, height, width))


def encode_motion(diffs, weights: Mapping[str, np.ndarray], channels: Optional[int] = None) -> np.ndarray:
    """F_D = AvgPool2(Conv3x3(diffs))."""
    diffs = as_tensor(diffs)
    check_rank(diffs, 3, "diffs")
    if diffs.shape[1] < 2 or diffs.shape[2] < 2:
        raise ShapeError(f"diffs: spatial extents must be >= 2 for stride-2 pooling, got {diffs.shape[1:]}")
    w = weights["tdem.motion.weight"]
    channels = channels or w.shape[0]
    x = conv(diffs, weights, "tdem.motion", ConvSpec.same(diffs.shape[0], channels))
    return pool2d(x, "avg", kernel=2, stride=2)


def residual_block(x, weights: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    """x + conv2(PReLU(conv1(x)))."""
    x = as_tensor(x)
    spec = ConvSpec.same(x.shape[0], x.shape[0])
    return as_tensor(x + conv(prelu_at(conv(x, weights, f"{prefix}.conv1", spec), weights, prefix),
                              weights, f"{prefix}.conv2", spec))


def enhance(F_t, F_D, weights: Mapping[str, np.ndarray], cfg: TdemConfig = TdemConfig()) -> np.ndarray:
    """
    F_u = F_t + up(Conv(F_D))
    F_T = ResB2(F_u) + up(ResB1(Conv(F_D)))
    A disabled residual block is replaced by the identity.
    """
    F_t, F_D = as_tensor(F_t), as_tensor(F_D)
    check_rank(F_t, 3, "F_t")
    check_rank(F_D, 3, "F_D")
    if F_t.shape[0] != F_D.shape[0]:
        raise ShapeError(f"dimension 0 (channels): F_t has {F_t.shape[0]}, F_D has {F_D.shape[0]}")
    for dim in (1, 2):
        if F_t.shape[dim] != 2 * F_D.shape[dim]:
            raise ShapeError(
                f"dimension {dim}: F_t extent {F_t.shape[dim]} must be twice F_D extent {F_D.shape[dim]}"
            )
    channels = F_t.shape[0]
    motion = conv(F_D, weights, "tdem.shared", ConvSpec.same(channels, channels))
    F_u = F_t + upsample_nearest(motion, 2)
    first = residual_block(F_u, weights, "tdem.resb2") if cfg.resb2 else F_u
    second = residual_block(motion, weights, "tdem.resb1") if cfg.resb1 else motion
    return as_tensor(first + upsample_nearest(second, 2))


def tdem_forward(F_c, cfg: TdemConfig, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Temporal branch output F_T; the keyframe features when disabled."""
    F_c = as_tensor(F_c)
    check_rank(F_c, 4, "F_c [T,C,H,W]")
    F_t = F_c[-1]
    if not cfg.enabled:
        return F_t
    F_D = encode_motion(frame_diffs(F_c), weights, F_c.shape[1])
    F_T = enhance(F_t, F_D, weights, cfg)
    logger.debug("tdem: F_D %s, F_T %s", F_D.shape, F_T.shape)
    return F_T
