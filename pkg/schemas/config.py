# schemas/config.py
# Pydantic models for every configuration document

import json
import os
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from guardrails import ConfigError


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BackboneConfig(_Config):
    # (out_channels, stride) per conv block
    stages: List[Tuple[int, int]] = Field(default_factory=lambda: [(32, 2), (64, 2), (128, 1)])
    in_channels: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_stages(self):
        if not self.stages:
            raise ValueError("backbone needs at least one stage")
        for out_channels, stride in self.stages:
            if stride not in (1, 2):
                raise ValueError(f"stage stride must be 1 or 2, got {stride}")
            if out_channels < 1:
                raise ValueError(f"stage out_channels must be >= 1, got {out_channels}")
        return self

    @property
    def channels(self) -> int:
        return self.stages[-1][0]

    @property
    def total_stride(self) -> int:
        stride = 1
        for _, s in self.stages:
            stride *= s
        return stride


class NabConfig(_Config):
    gamma: float = 1.0


class MsrmConfig(_Config):
    enabled: bool = True
    nab: bool = True
    meu: bool = True
    attention: NabConfig = Field(default_factory=NabConfig)


class TdemConfig(_Config):
    enabled: bool = True
    resb1: bool = True
    resb2: bool = True


class WindowAttnConfig(_Config):
    window: int = Field(default=8, ge=1)
    heads: int = Field(default=4, ge=1)
    embed_dim: int = Field(default=128, ge=1)
    mlp_ratio: int = Field(default=2, ge=1)
    window_bias: bool = False

    @model_validator(mode="after")
    def _check_heads(self):
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        return self


class LgfmConfig(_Config):
    enabled: bool = True
    fourier: bool = True
    conv_branch: bool = True
    swin_branch: bool = True
    swin: WindowAttnConfig = Field(default_factory=WindowAttnConfig)

    @model_validator(mode="after")
    def _check_branches(self):
        if self.enabled and not (self.conv_branch or self.swin_branch):
            raise ValueError("LGFM needs the conv branch, the window branch, or both")
        return self


class CsabSpec(_Config):
    m: int = Field(default=2, ge=1)
    reduction: int = Field(default=4, ge=1)
    sab_kernel: int = Field(default=7, ge=1)
    cab: bool = True
    sab: bool = True

    @model_validator(mode="after")
    def _odd_kernel(self):
        if self.sab_kernel % 2 == 0:
            raise ValueError("sab_kernel must be odd")
        return self


class RcuConfig(_Config):
    variant: Literal["none", "a", "b", "c"] = "c"
    csab: CsabSpec = Field(default_factory=CsabSpec)


class DetectConfig(_Config):
    nms_iou: float = Field(default=0.65, ge=0.0, le=1.0)
    conf_thresh: float = Field(default=0.001, ge=0.0, le=1.0)


class LossWeights(_Config):
    lambda_reg: float = Field(default=5.0, ge=0.0)
    lambda_cls: float = Field(default=1.0, ge=0.0)
    lambda_obj: float = Field(default=1.0, ge=0.0)
    alpha: float = Field(default=0.5, ge=0.0)
    beta: float = Field(default=0.5, ge=0.0)
    c_nwd: float = Field(default=5.0, gt=0.0)
    focal_gamma: float = Field(default=2.0, ge=0.0)
    focal_alpha: float = Field(default=0.25, ge=0.0, le=1.0)


class EvalConfig(_Config):
    iou: float = Field(default=0.5, gt=0.0, le=1.0)


class TargetSpec(_Config):
    """An explicit linear trajectory; positions are box centers at frame 0."""
    cx: float
    cy: float
    vx: float = 0.0
    vy: float = 0.0
    w: float = Field(default=5.0, gt=0.0)
    h: float = Field(default=5.0, gt=0.0)
    peak: Optional[float] = None


class SceneConfig(_Config):
    height: int = Field(default=64, ge=8)
    width: int = Field(default=64, ge=8)
    frames: int = Field(default=5, ge=2)
    target_count: int = Field(default=1, ge=0)
    size_min: float = Field(default=3.0, ge=1.0)
    size_max: float = Field(default=9.0, ge=1.0)
    peak: float = Field(default=0.4, gt=0.0, le=1.0)
    background: float = Field(default=0.3, ge=0.0, le=1.0)
    noise_std: float = Field(default=0.04, ge=0.0)
    clutter_amplitude: float = Field(default=0.1, ge=0.0)
    clutter_velocity: Tuple[float, float] = (0.5, 0.25)
    velocity_max: float = Field(default=2.0, ge=0.0)
    targets: Optional[List[TargetSpec]] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check_feasible(self):
        if self.size_min > self.size_max:
            raise ValueError(f"size_min {self.size_min} exceeds size_max {self.size_max}")
        travel = self.velocity_max * (self.frames - 1)
        if self.targets is None and self.target_count and self.size_max + 2 * travel > min(self.height, self.width):
            raise ValueError(
                f"targets of extent {self.size_max} moving {self.velocity_max} px/frame "
                f"cannot stay inside a {self.height}x{self.width} image over {self.frames} frames"
            )
        for i, t in enumerate(self.targets or []):
            for k in range(self.frames):
                cx, cy = t.cx + t.vx * k, t.cy + t.vy * k
                if cx - t.w / 2 < 0 or cx + t.w / 2 > self.width or cy - t.h / 2 < 0 or cy + t.h / 2 > self.height:
                    raise ValueError(f"target {i} leaves the image at frame {k}")
        return self


class PipelineConfig(_Config):
    window: int = Field(default=5, ge=2, le=16)
    channels: int = Field(default=128, ge=2)
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    msrm: MsrmConfig = Field(default_factory=MsrmConfig)
    tdem: TdemConfig = Field(default_factory=TdemConfig)
    lgfm: LgfmConfig = Field(default_factory=LgfmConfig)
    rcu: RcuConfig = Field(default_factory=RcuConfig)
    detect: DetectConfig = Field(default_factory=DetectConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)

    @model_validator(mode="after")
    def _check_widths(self):
        if self.backbone.channels != self.channels:
            raise ValueError(
                f"backbone final out_channels {self.backbone.channels} must equal channels {self.channels}"
            )
        if self.channels % 2:
            raise ValueError("channels must be even (keys and values take half each)")
        return self

    @property
    def stride(self) -> int:
        return self.backbone.total_stride


def load_config(path: Union[str, Path, None] = None) -> PipelineConfig:
    """
    Load a PipelineConfig.

    Resolution order: explicit `path`, the TRIDOS_CONFIG environment variable,
    then the built-in defaults.
    """
    if path is None:
        path = os.environ.get("TRIDOS_CONFIG") or None
    if path is None:
        return PipelineConfig()
    return load_model(PipelineConfig, path)


def load_model(model: type, path: Union[str, Path]):
    """Read a JSON document into `model`, wrapping failures as ConfigError."""
    path = Path(path).expanduser()
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}")
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}")
