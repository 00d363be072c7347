# schemas/boxes.py
# Pydantic models for boxes and the JSON-lines records that carry them

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field


class BBox(BaseModel):
    """Axis-aligned box in image pixels, center/size form."""
    model_config = ConfigDict(frozen=True)

    cx: float
    cy: float
    w: float = Field(gt=0)
    h: float = Field(gt=0)
    score: float = Field(default=1.0, ge=0.0, le=1.0)
    class_id: int = 0

    @property
    def x1(self) -> float:
        return self.cx - self.w / 2

    @property
    def y1(self) -> float:
        return self.cy - self.h / 2

    @property
    def x2(self) -> float:
        return self.cx + self.w / 2

    @property
    def y2(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float, score: float = 1.0) -> "BBox":
        return cls(cx=(x1 + x2) / 2, cy=(y1 + y2) / 2, w=x2 - x1, h=y2 - y1, score=score)

    def params(self) -> tuple:
        return (self.cx, self.cy, self.w, self.h)


class GaussianBox(BaseModel):
    """2D Gaussian model of a box: mean at the center, half-extents as std."""
    model_config = ConfigDict(frozen=True)

    mean_x: float
    mean_y: float
    half_w: float = Field(gt=0)
    half_h: float = Field(gt=0)

    @classmethod
    def from_box(cls, box: BBox) -> "GaussianBox":
        return cls(mean_x=box.cx, mean_y=box.cy, half_w=box.w / 2, half_h=box.h / 2)

    def vector(self) -> tuple:
        return (self.mean_x, self.mean_y, self.half_w, self.half_h)


class BoxRecord(BaseModel):
    cx: float
    cy: float
    w: float = Field(gt=0)
    h: float = Field(gt=0)
    score: Optional[float] = None

    @classmethod
    def from_box(cls, box: BBox, with_score: bool = True) -> "BoxRecord":
        return cls(cx=box.cx, cy=box.cy, w=box.w, h=box.h, score=box.score if with_score else None)

    def to_box(self) -> BBox:
        return BBox(cx=self.cx, cy=self.cy, w=self.w, h=self.h, score=1.0 if self.score is None else self.score)


class FrameRecord(BaseModel):
    """One JSON-lines record: the boxes of a single frame."""
    frame_id: int = Field(ge=0)
    sequence: str = ""
    boxes: List[BoxRecord] = Field(default_factory=list)

    def to_json_line(self) -> str:
        return self.model_dump_json(exclude_none=True)
