# detection/loss.py
# Box regression losses (IoU, NWD, dual-view), sigmoid focal loss, weighted total and a box-fit demo

import logging
import math
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from guardrails import DivergenceError, ShapeError, check_box_values
from schemas.boxes import BBox, GaussianBox
from schemas.config import LossWeights
from schemas.results import FitResult, LossBreakdown

logger = logging.getLogger(__name__)

BoxLike = Union[BBox, Sequence[float], np.ndarray]

MAX_REJECTIONS = 50
MIN_MOVE = 1e-10
LR_GROWTH = 1.25


def box_params(box: BoxLike) -> np.ndarray:
    """(cx, cy, w, h) as float64, validated."""
    if isinstance(box, BBox):
        params = np.array(box.params(), dtype=np.float64)
    else:
        params = np.asarray(box, dtype=np.float64).reshape(-1)
        if params.shape != (4,):
            raise ShapeError(f"box: expected 4 parameters (cx, cy, w, h), got {params.shape[0]}")
    check_box_values(*(float(v) for v in params))
    return params


# ---------------- IoU ---------------- #

def iou_and_grad(bp: BoxLike, bg: BoxLike) -> Tuple[float, np.ndarray]:
    """
    IoU of two center-form boxes and its (sub)gradient w.r.t. bp's (cx, cy, w, h).
    Zero overlap has gradient 0; at coincident edges the predicted edge is taken
    as the binding one on neither side.
    """
    p, g = box_params(bp), box_params(bg)
    px1, px2 = p[0] - p[2] / 2, p[0] + p[2] / 2
    py1, py2 = p[1] - p[3] / 2, p[1] + p[3] / 2
    gx1, gx2 = g[0] - g[2] / 2, g[0] + g[2] / 2
    gy1, gy2 = g[1] - g[3] / 2, g[1] + g[3] / 2

    ix = min(px2, gx2) - max(px1, gx1)
    iy = min(py2, gy2) - max(py1, gy1)
    area_p = (px2 - px1) * (py2 - py1)
    area_g = (gx2 - gx1) * (gy2 - gy1)
    if ix <= 0 or iy <= 0:
        return 0.0, np.zeros(4)
    inter = ix * iy
    union = area_p + area_g - inter
    value = inter / union

    right, left = float(px2 < gx2), float(px1 > gx1)
    bottom, top = float(py2 < gy2), float(py1 > gy1)
    d_ix = np.array([right - left, 0.0, 0.5 * (right + left), 0.0])
    d_iy = np.array([0.0, bottom - top, 0.0, 0.5 * (bottom + top)])
    d_inter = d_ix * iy + d_iy * ix
    d_area = np.array([0.0, 0.0, py2 - py1, px2 - px1])
    d_union = d_area - d_inter
    grad = (d_inter * union - inter * d_union) / union ** 2
    return value, grad


def iou(bp: BoxLike, bg: BoxLike) -> float:
    return iou_and_grad(bp, bg)[0]


def iou_loss(bp: BoxLike, bg: BoxLike) -> float:
    return 1.0 - iou(bp, bg)


# ---------------- NWD ---------------- #

def to_gaussian(box: BoxLike) -> GaussianBox:
    cx, cy, w, h = (float(v) for v in box_params(box))
    return GaussianBox.from_box(BBox(cx=cx, cy=cy, w=w, h=h))


def _gaussian_gap(bp: BoxLike, bg: BoxLike) -> np.ndarray:
    """Differences of the Gaussians' means and half-extents, predicted minus target."""
    return np.subtract(to_gaussian(bp).vector(), to_gaussian(bg).vector())


def wasserstein2(bp: BoxLike, bg: BoxLike) -> float:
    """Squared 2-Wasserstein distance between the boxes' diagonal Gaussians."""
    return float(np.sum(_gaussian_gap(bp, bg) ** 2))


def nwd_and_grad(bp: BoxLike, bg: BoxLike, c_nwd: float) -> Tuple[float, np.ndarray]:
    """1 - exp(-W2 / C) and its gradient; the gradient at W2 = 0 is taken as 0."""
    if c_nwd <= 0:
        raise ValueError(f"c_nwd must be positive, got {c_nwd}")
    gap = _gaussian_gap(bp, bg)
    dist = math.sqrt(float(np.sum(gap ** 2)))
    decay = math.exp(-dist / c_nwd)
    value = 1.0 - decay
    if dist == 0.0:
        return value, np.zeros(4)
    # half-extents move at half the rate of w and h
    d_w2 = 2 * gap * np.array([1.0, 1.0, 0.5, 0.5])
    return value, decay / c_nwd * d_w2 / (2 * dist)


def nwd_loss(bp: BoxLike, bg: BoxLike, c_nwd: float) -> float:
    return nwd_and_grad(bp, bg, c_nwd)[0]


# ---------------- dual-view regression ---------------- #

def dvr_loss(bp: BoxLike, bg: BoxLike, weights: LossWeights = LossWeights()) -> Tuple[float, np.ndarray]:
    """alpha * L_iou + beta * L_nwd, with the gradient over bp's (cx, cy, w, h)."""
    overlap, d_overlap = iou_and_grad(bp, bg)
    nwd, d_nwd = nwd_and_grad(bp, bg, weights.c_nwd)
    value = weights.alpha * (1.0 - overlap) + weights.beta * nwd
    grad = -weights.alpha * d_overlap + weights.beta * d_nwd
    return value, grad


# ---------------- classification / objectness ---------------- #

def focal_loss(logits, targets, gamma: float = 2.0, alpha: float = 0.25) -> float:
    """Mean sigmoid focal loss; cross-entropy in the stable with-logits form."""
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if x.shape != t.shape:
        raise ShapeError(f"focal_loss: logits shape {x.shape} does not match targets {t.shape}")
    if x.size == 0:
        return 0.0
    if np.any((t < 0) | (t > 1)):
        raise ValueError("focal_loss: targets must lie in [0, 1]")
    p = 0.5 * (1.0 + np.tanh(0.5 * x))
    ce = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    p_t = p * t + (1.0 - p) * (1.0 - t)
    alpha_t = alpha * t + (1.0 - alpha) * (1.0 - t)
    return float(np.mean(alpha_t * (1.0 - p_t) ** gamma * ce))


# ---------------- total ---------------- #

def weighted_total(reg: float, cls: float, obj: float, weights: LossWeights = LossWeights()) -> LossBreakdown:
    total = weights.lambda_reg * reg + weights.lambda_cls * cls + weights.lambda_obj * obj
    return LossBreakdown(reg=reg, cls=cls, obj=obj, total=total)


def loss_breakdown(reg_pairs: Iterable[Tuple[BoxLike, BoxLike]],
                   cls_terms: Optional[Tuple[np.ndarray, np.ndarray]],
                   obj_terms: Optional[Tuple[np.ndarray, np.ndarray]],
                   weights: LossWeights = LossWeights()) -> LossBreakdown:
    """
    reg: mean dual-view loss over the matched (pred, gt) pairs, 0 without pairs.
    cls / obj: focal loss of (logits, targets), 0 when absent.
    """
    reg_values = [dvr_loss(p, g, weights)[0] for p, g in reg_pairs]
    reg = float(np.mean(reg_values)) if reg_values else 0.0

    def focal(terms):
        if terms is None:
            return 0.0
        return focal_loss(terms[0], terms[1], weights.focal_gamma, weights.focal_alpha)

    return weighted_total(reg, focal(cls_terms), focal(obj_terms), weights)


def total_loss(reg_pairs, cls_terms, obj_terms, weights: LossWeights = LossWeights()) -> float:
    return loss_breakdown(reg_pairs, cls_terms, obj_terms, weights).total


# ---------------- box fit ---------------- #

def _valid(params: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(params)) and params[2] > 0 and params[3] > 0)


def fit_box(init: BBox, target: BBox, weights: LossWeights = LossWeights(),
            steps: int = 2000, lr: float = 0.5) -> FitResult:
    """
    Gradient descent on dvr_loss over (cx, cy, w, h). A step that raises the loss
    or leaves the box invalid is rejected and halves the step size; an accepted
    step lets it grow back by LR_GROWTH, never past the initial lr.
    Stops at zero loss, after `steps` iterations, or once a proposed move is
    below MIN_MOVE pixels. MAX_REJECTIONS rejections in a row, each at half the
    previous step, raise DivergenceError; with a bounded gradient that only
    happens when lr is far too large for the loss.
    """
    base_lr = lr
    theta = box_params(init)
    loss, grad = dvr_loss(theta, target, weights)
    trajectory = [init]
    losses = [loss]
    rejections = 0
    taken = 0

    for _ in range(steps):
        if loss == 0.0:
            break
        move = lr * grad
        if float(np.max(np.abs(move))) < MIN_MOVE:
            break
        candidate = theta - move
        if _valid(candidate):
            new_loss, new_grad = dvr_loss(candidate, target, weights)
            if not math.isfinite(new_loss):
                raise DivergenceError(f"box fit produced a non-finite loss at step {taken}")
        else:
            new_loss = math.inf
        if new_loss > loss:
            rejections += 1
            lr *= 0.5
            logger.debug("fit_box: rejected step, lr -> %g", lr)
            if rejections >= MAX_REJECTIONS:
                raise DivergenceError(f"box fit rejected {MAX_REJECTIONS} consecutive steps (lr={lr:g})")
            continue
        rejections = 0
        lr = min(lr * LR_GROWTH, base_lr)
        theta, loss, grad = candidate, new_loss, new_grad
        taken += 1
        trajectory.append(BBox(cx=theta[0], cy=theta[1], w=theta[2], h=theta[3], score=init.score))
        losses.append(loss)

    logger.info("fit_box: %d steps, final loss %.3g", taken, loss)
    return FitResult(trajectory=trajectory, losses=losses, steps=taken, final_lr=lr)
