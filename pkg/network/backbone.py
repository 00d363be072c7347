# network/backbone.py
# Shared-weight per-frame feature extractor and the spatio-temporal fusion conv

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, Optional

import numpy as np

from guardrails import ShapeError, check_rank, check_same_shape
from network.layers import Specs, conv_bn_act, conv_specs, merge
from numerics.tensor import ConvSpec, as_tensor, concat
from schemas.config import BackboneConfig
from schemas.window import FrameWindow

logger = logging.getLogger(__name__)


def _stage_convs(cfg: BackboneConfig):
    in_channels = cfg.in_channels
    for i, (out_channels, stride) in enumerate(cfg.stages):
        yield f"backbone.stage{i}", ConvSpec.same(in_channels, out_channels, kernel=3, stride=stride)
        in_channels = out_channels


def _fuse_conv(channels: int) -> ConvSpec:
    return ConvSpec.same(2 * channels, channels)


def backbone_param_specs(cfg: BackboneConfig) -> Specs:
    return merge(*(conv_specs(prefix, spec, bn=True) for prefix, spec in _stage_convs(cfg)))


def fuse_param_specs(channels: int) -> Specs:
    return conv_specs("fuse", _fuse_conv(channels), bn=True)


def extract_frame(frame, weights: Mapping[str, np.ndarray], cfg: Optional[BackboneConfig] = None) -> np.ndarray:
    """One frame [H,W] (or [1,H,W]) -> features [C,H',W']."""
    cfg = cfg or BackboneConfig()
    x = as_tensor(frame)
    if x.ndim == 2:
        x = x[None]
    check_rank(x, 3, "backbone frame")
    for prefix, spec in _stage_convs(cfg):
        x = conv_bn_act(x, weights, prefix, spec, "silu")
    return x


def extract(frames, weights: Mapping[str, np.ndarray], cfg: Optional[BackboneConfig] = None,
            workers: int = 1) -> np.ndarray:
    """
    Map every frame of a window through the same weights and stack the
    results into [T,C,H',W']. With workers > 1 frames run on a thread pool;
    results are gathered in frame order.
    """
    if isinstance(frames, FrameWindow):
        frames = frames.frames
    frames = as_tensor(frames)
    check_rank(frames, 3, "backbone window [T,H,W]")
    if frames.shape[0] < 1:
        raise ShapeError("backbone window: dimension 0 (T) must be >= 1")

    if workers > 1 and frames.shape[0] > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            features = list(pool.map(lambda f: extract_frame(f, weights, cfg), frames))
    else:
        features = [extract_frame(f, weights, cfg) for f in frames]
    out = np.stack(features)
    logger.debug("backbone: %s -> %s", frames.shape, out.shape)
    return out


def fuse_st(F_S, F_T, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """F_st = SiLU(BN(Conv3x3(Concat[F_S, F_T]))), 2C -> C."""
    F_S, F_T = as_tensor(F_S), as_tensor(F_T)
    check_rank(F_S, 3, "F_S")
    check_same_shape(F_S, F_T, ("F_S", "F_T"))
    return conv_bn_act(concat([F_S, F_T], axis=0), weights, "fuse", _fuse_conv(F_S.shape[0]), "silu")
