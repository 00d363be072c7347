# schemas/window.py
# Frame window carried from the generator / reader into the pipeline

from dataclasses import dataclass, field
from typing import List

import numpy as np

from guardrails import ShapeError
from schemas.boxes import BBox


@dataclass(frozen=True)
class FrameWindow:
    """T consecutive grayscale frames; the last one is the keyframe."""
    frames: np.ndarray  # [T, H, W] float32 in [0, 1]
    gts: List[BBox] = field(default_factory=list)
    frame_ids: List[int] = field(default_factory=list)
    sequence: str = ""

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if frames.ndim != 3:
            raise ShapeError(f"frames: expected [T,H,W], got shape {tuple(frames.shape)}")
        if frames.shape[0] < 2:
            raise ShapeError(f"frames: dimension 0 (T) must be >= 2, got {frames.shape[0]}")
        object.__setattr__(self, "frames", frames)
        if not self.frame_ids:
            object.__setattr__(self, "frame_ids", list(range(frames.shape[0])))
        elif len(self.frame_ids) != frames.shape[0]:
            raise ShapeError(f"frame_ids has {len(self.frame_ids)} entries for {frames.shape[0]} frames")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def keyframe(self) -> int:
        return self.length - 1

    @property
    def keyframe_id(self) -> int:
        return self.frame_ids[-1]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]
