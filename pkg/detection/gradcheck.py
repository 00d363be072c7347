# detection/gradcheck.py
# Central finite-difference check of the analytic dual-view regression gradient

import logging
from typing import Callable, List, Tuple

import numpy as np

from detection.loss import dvr_loss, wasserstein2
from schemas.config import LossWeights
from schemas.results import GradcheckReport

logger = logging.getLogger(__name__)

REL_STEP = 1e-4
ERR_FLOOR = 1e-3
# kinks of the IoU term sit where edges coincide; stay this far away from them
EDGE_MARGIN = 0.05
MIN_DISTANCE = 0.5


def numeric_grad(f: Callable[[np.ndarray], float], theta: np.ndarray, rel_step: float = REL_STEP) -> np.ndarray:
    """
    Central differences with step h_i = rel_step * max(|theta_i|, 1), refined once
    by Richardson extrapolation over steps h and h/2.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        h = rel_step * max(abs(theta[i]), 1.0)

        def central(step: float) -> float:
            up, down = theta.copy(), theta.copy()
            up[i] += step
            down[i] -= step
            return (f(up) - f(down)) / (2 * step)

        grad[i] = (4 * central(h / 2) - central(h)) / 3
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ERR_FLOOR)


def _well_posed(p: np.ndarray, g: np.ndarray) -> bool:
    edges_p = np.array([p[0] - p[2] / 2, p[0] + p[2] / 2, p[1] - p[3] / 2, p[1] + p[3] / 2])
    edges_g = np.array([g[0] - g[2] / 2, g[0] + g[2] / 2, g[1] - g[3] / 2, g[1] + g[3] / 2])
    if np.any(np.abs(edges_p - edges_g) < EDGE_MARGIN):
        return False
    ix = min(edges_p[1], edges_g[1]) - max(edges_p[0], edges_g[0])
    iy = min(edges_p[3], edges_g[3]) - max(edges_p[2], edges_g[2])
    if ix < EDGE_MARGIN or iy < EDGE_MARGIN:
        return False
    return wasserstein2(p, g) >= MIN_DISTANCE ** 2


def random_box_pairs(count: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Partially overlapping (pred, gt) pairs inside a 64x64 image, sizes 2..20 px."""
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < count:
        g = np.array([rng.uniform(12, 52), rng.uniform(12, 52), rng.uniform(2, 20), rng.uniform(2, 20)])
        size = rng.uniform(2, 20, size=2)
        offset = rng.uniform(-0.5, 0.5, size=2) * (g[2:] + size) * 0.9
        p = np.array([g[0] + offset[0], g[1] + offset[1], size[0], size[1]])
        if _well_posed(p, g):
            pairs.append((p, g))
    return pairs


def check_dvr_gradients(cases: int = 200, seed: int = 0, weights: LossWeights = LossWeights(),
                        tolerance: float = 1e-4) -> GradcheckReport:
    worst, worst_case = 0.0, -1
    for k, (p, g) in enumerate(random_box_pairs(cases, seed)):
        _, analytic = dvr_loss(p, g, weights)
        numeric = numeric_grad(lambda theta: dvr_loss(theta, g, weights)[0], p)
        err = float(np.max(relative_error(analytic, numeric)))
        if err > worst:
            worst, worst_case = err, k
    logger.info("gradcheck: %d cases, max relative error %.3g (case %d)", cases, worst, worst_case)
    return GradcheckReport(cases=cases, max_rel_err=worst, worst_case=worst_case, tolerance=tolerance)
