# network/head.py
# Decoupled anchor-free head: class stem and regression/objectness stem

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from guardrails import ShapeError, check_rank
from network.layers import Specs, conv, conv_bn_act, conv_specs, merge
from numerics.tensor import ConvSpec, as_tensor

STEM_DEPTH = 2


@dataclass(frozen=True)
class HeadOutput:
    reg: np.ndarray  # [4,H',W'] dx, dy, log-w, log-h
    obj: np.ndarray  # [1,H',W'] logits
    cls: np.ndarray  # [1,H',W'] logits

    def __post_init__(self):
        for name, value, depth in (("reg", self.reg, 4), ("obj", self.obj, 1), ("cls", self.cls, 1)):
            check_rank(value, 3, f"head {name}")
            if value.shape[0] != depth:
                raise ShapeError(f"head {name}: dimension 0 is {value.shape[0]}, expected {depth}")
        if not (self.reg.shape[1:] == self.obj.shape[1:] == self.cls.shape[1:]):
            raise ShapeError(
                f"head outputs disagree on H'xW': reg {self.reg.shape[1:]}, obj {self.obj.shape[1:]}, "
                f"cls {self.cls.shape[1:]}"
            )

    @property
    def grid(self) -> tuple:
        return self.reg.shape[1:]


def head_param_specs(channels: int) -> Specs:
    stem = ConvSpec.same(channels, channels)
    return merge(
        *(conv_specs(f"head.cls_stem.{i}", stem, bn=True) for i in range(STEM_DEPTH)),
        *(conv_specs(f"head.reg_stem.{i}", stem, bn=True) for i in range(STEM_DEPTH)),
        conv_specs("head.cls", ConvSpec.pointwise(channels, 1)),
        conv_specs("head.reg", ConvSpec.pointwise(channels, 4)),
        conv_specs("head.obj", ConvSpec.pointwise(channels, 1)),
    )


def head_forward(F_stf, weights: Mapping[str, np.ndarray]) -> HeadOutput:
    F_stf = as_tensor(F_stf)
    check_rank(F_stf, 3, "F_stf")
    channels = F_stf.shape[0]
    stem = ConvSpec.same(channels, channels)
    cls_x = reg_x = F_stf
    for i in range(STEM_DEPTH):
        cls_x = conv_bn_act(cls_x, weights, f"head.cls_stem.{i}", stem)
        reg_x = conv_bn_act(reg_x, weights, f"head.reg_stem.{i}", stem)
    return HeadOutput(
        reg=conv(reg_x, weights, "head.reg", ConvSpec.pointwise(channels, 4)),
        obj=conv(reg_x, weights, "head.obj", ConvSpec.pointwise(channels, 1)),
        cls=conv(cls_x, weights, "head.cls", ConvSpec.pointwise(channels, 1)),
    )
