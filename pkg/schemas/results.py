# schemas/results.py
# Pydantic models for evaluation, loss and optimisation results

from typing import List, Tuple

from pydantic import BaseModel, Field

from schemas.boxes import BBox


class EvalResult(BaseModel):
    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    fn: int = Field(ge=0)
    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    ap50: float = Field(ge=0.0, le=1.0)
    pr_points: List[Tuple[float, float]] = Field(default_factory=list)

    def summary(self) -> str:
        return (
            f"Precision: {100 * self.precision:.2f}%\n"
            f"Recall:    {100 * self.recall:.2f}%\n"
            f"F1:        {100 * self.f1:.2f}%\n"
            f"mAP50:     {100 * self.ap50:.2f}%"
        )


class LossBreakdown(BaseModel):
    reg: float
    cls: float
    obj: float
    total: float


class GradcheckReport(BaseModel):
    cases: int
    max_rel_err: float
    worst_case: int = -1
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


class FitResult(BaseModel):
    trajectory: List[BBox]
    losses: List[float]
    steps: int
    final_lr: float

    @property
    def final(self) -> BBox:
        return self.trajectory[-1]
