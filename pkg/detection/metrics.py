# detection/metrics.py
# Greedy detection matching, precision / recall / F1, all-point AP and PR-curve export

import logging
from pathlib import Path
from typing import Dict, Hashable, List, Mapping, Sequence, Tuple

import numpy as np

from detection.postprocess import boxes_to_corners, iou_matrix
from schemas.boxes import BBox
from schemas.results import EvalResult
from storage import atomic_write_text

logger = logging.getLogger(__name__)

ScoredMatch = Tuple[float, bool]


def match_frame(preds: Sequence[BBox], gts: Sequence[BBox], iou_thresh: float = 0.5) -> List[ScoredMatch]:
    """
    Predictions in descending score order each take the unmatched GT with the
    highest IoU, provided it reaches iou_thresh. Returns (score, is_tp) per prediction.
    """
    if not preds:
        return []
    order = np.argsort(-np.array([p.score for p in preds]), kind="stable")
    if not gts:
        return [(preds[i].score, False) for i in order]
    overlaps = iou_matrix(boxes_to_corners([preds[i] for i in order]), boxes_to_corners(gts))
    taken = np.zeros(len(gts), dtype=bool)
    scored = []
    for row, i in enumerate(order):
        candidates = np.where(taken, -1.0, overlaps[row])
        best = int(np.argmax(candidates))
        hit = candidates[best] >= iou_thresh
        if hit:
            taken[best] = True
        scored.append((preds[i].score, bool(hit)))
    return scored


def match(preds_by_frame: Sequence[Sequence[BBox]], gts_by_frame: Sequence[Sequence[BBox]],
          iou_thresh: float = 0.5) -> Tuple[int, int, int]:
    """(tp, fp, fn) summed over frames."""
    if len(preds_by_frame) != len(gts_by_frame):
        raise ValueError(f"{len(preds_by_frame)} prediction frames for {len(gts_by_frame)} GT frames")
    tp = fp = fn = 0
    for preds, gts in zip(preds_by_frame, gts_by_frame):
        scored = match_frame(preds, gts, iou_thresh)
        hits = sum(1 for _, hit in scored if hit)
        tp += hits
        fp += len(scored) - hits
        fn += len(gts) - hits
    return tp, fp, fn


def pr_curve(scored: Sequence[ScoredMatch], num_gts: int) -> List[Tuple[float, float]]:
    """One (recall, precision) point per distinct score, thresholds descending."""
    if not scored or num_gts <= 0:
        return []
    scores = np.array([s for s, _ in scored], dtype=np.float64)
    hits = np.array([h for _, h in scored], dtype=bool)
    order = np.argsort(-scores, kind="stable")
    scores, hits = scores[order], hits[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    # last rank of every group of equal scores
    ends = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    return [(float(tp[i] / num_gts), float(tp[i] / (tp[i] + fp[i]))) for i in ends]


def average_precision(scored: Sequence[ScoredMatch], num_gts: int) -> float:
    """Exact area under the monotone precision envelope of pr_curve."""
    points = pr_curve(scored, num_gts)
    if not points:
        return 0.0
    recall = np.array([0.0] + [r for r, _ in points])
    precision = np.array([p for _, p in points])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(np.diff(recall) * envelope))


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def evaluate(preds: Mapping[Hashable, Sequence[BBox]], gts: Mapping[Hashable, Sequence[BBox]],
             iou_thresh: float = 0.5) -> EvalResult:
    """
    Metrics over every frame key present in `gts`. Predictions for frames
    without a GT entry are not evaluated.
    """
    skipped = [key for key in preds if key not in gts]
    if skipped:
        logger.info("evaluate: ignoring predictions for %d frames without ground truth", len(skipped))
    scored: List[ScoredMatch] = []
    tp = fp = fn = 0
    for key, frame_gts in gts.items():
        frame_scored = match_frame(list(preds.get(key, [])), list(frame_gts), iou_thresh)
        hits = sum(1 for _, hit in frame_scored if hit)
        tp += hits
        fp += len(frame_scored) - hits
        fn += len(frame_gts) - hits
        scored.extend(frame_scored)
    num_gts = tp + fn
    return EvalResult(
        tp=tp, fp=fp, fn=fn,
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, num_gts),
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        ap50=average_precision(scored, num_gts),
        pr_points=pr_curve(scored, num_gts),
    )


def write_pr_csv(path: Path, points: Sequence[Tuple[float, float]]) -> None:
    lines = ["recall,precision"] + [f"{r:.6f},{p:.6f}" for r, p in points]
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
    logger.info("wrote %d PR points to %s", len(points), path)


def group_by_frame(records) -> Dict[Tuple[str, int], List[BBox]]:
    """FrameRecords -> {(sequence, frame_id): boxes}."""
    grouped: Dict[Tuple[str, int], List[BBox]] = {}
    for rec in records:
        grouped.setdefault((rec.sequence, rec.frame_id), []).extend(b.to_box() for b in rec.boxes)
    return grouped
