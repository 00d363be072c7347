# detection/postprocess.py
# Box decoding from head outputs, greedy non-maximum suppression and clipping

import logging
from typing import List, Sequence

import numpy as np

from network.head import HeadOutput
from schemas.boxes import BBox

logger = logging.getLogger(__name__)

LOG_SIZE_CLAMP = 8.0


def _sigmoid64(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def decode(out: HeadOutput, stride: int) -> List[BBox]:
    """
    One box per cell in row-major order:
    cx = (col + dx) * s, cy = (row + dy) * s, w = exp(lw) * s, h = exp(lh) * s,
    score = sigmoid(obj) * sigmoid(cls).
    """
    reg = out.reg.astype(np.float64)
    rows, cols = out.grid
    row_idx, col_idx = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    log_size = np.clip(reg[2:4], -LOG_SIZE_CLAMP, LOG_SIZE_CLAMP)
    cx = (col_idx + reg[0]) * stride
    cy = (row_idx + reg[1]) * stride
    w = np.exp(log_size[0]) * stride
    h = np.exp(log_size[1]) * stride
    score = np.clip(_sigmoid64(out.obj[0]) * _sigmoid64(out.cls[0]), 0.0, 1.0)
    return [
        BBox(cx=float(a), cy=float(b), w=float(c), h=float(d), score=float(s))
        for a, b, c, d, s in zip(cx.ravel(), cy.ravel(), w.ravel(), h.ravel(), score.ravel())
    ]


def encode(box: BBox, row: int, col: int, stride: int) -> np.ndarray:
    """Inverse of decode for one cell: (dx, dy, log-w, log-h)."""
    return np.array([
        box.cx / stride - col,
        box.cy / stride - row,
        np.log(box.w / stride),
        np.log(box.h / stride),
    ])


def boxes_to_corners(boxes: Sequence[BBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.array([[b.x1, b.y1, b.x2, b.y2] for b in boxes], dtype=np.float64)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between corner arrays [N,4] and [M,4]."""
    ix = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(boxes: Sequence[BBox], iou_thresh: float = 0.65, conf_thresh: float = 0.001) -> List[BBox]:
    """
    Keep boxes scoring above conf_thresh, then greedily drop any box whose IoU
    with an already kept box exceeds iou_thresh. Ties in score go to the lower
    input index. Output is in descending score order.
    """
    candidates = [b for b in boxes if b.score > conf_thresh]
    if not candidates:
        return []
    scores = np.array([b.score for b in candidates])
    order = np.argsort(-scores, kind="stable")
    corners = boxes_to_corners(candidates)

    keep = []
    while order.size:
        best = order[0]
        keep.append(best)
        rest = order[1:]
        if not rest.size:
            break
        overlap = iou_matrix(corners[best:best + 1], corners[rest])[0]
        order = rest[overlap <= iou_thresh]
    logger.debug("nms: %d boxes, %d above threshold, %d kept", len(boxes), len(candidates), len(keep))
    return [candidates[i] for i in keep]


def clip_boxes(boxes: Sequence[BBox], height: int, width: int) -> List[BBox]:
    """Clamp corners to the image; boxes left with no extent are dropped."""
    clipped = []
    for b in boxes:
        x1, y1 = min(max(b.x1, 0.0), width), min(max(b.y1, 0.0), height)
        x2, y2 = min(max(b.x2, 0.0), width), min(max(b.y2, 0.0), height)
        if x2 - x1 <= 0 or y2 - y1 <= 0:
            continue
        clipped.append(BBox.from_corners(x1, y1, x2, y2, score=b.score))
    return clipped
