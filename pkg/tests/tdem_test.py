#!/usr/bin/env python3
"""
Tests for the temporal difference module: frame differences, motion encoding
and the dual residual enhancement.

Run: python -m pytest tests/tdem_test.py -v
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from guardrails import ShapeError
from network.tdem import encode_motion, enhance, frame_diffs, residual_block, tdem_forward, tdem_param_specs
from network.weights import WeightStore
from schemas.config import TdemConfig
from tests.oracles import conv_loop, pool_loop

T, C = 4, 4


@pytest.fixture(scope="module")
def weights():
    return WeightStore.random(tdem_param_specs(T, C), 5)


def zero_biases(weights: WeightStore) -> WeightStore:
    return weights.updated({n: np.zeros_like(t) for n, t in weights.items() if n.endswith(".bias")})


def conv3(x, weights, prefix):
    return conv_loop(x, weights[f"{prefix}.weight"], weights[f"{prefix}.bias"], padding=1)


def up2(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def resb(x, weights, prefix):
    y = conv3(x, weights, f"{prefix}.conv1")
    slope = weights[f"{prefix}.slope"].astype(np.float64)[:, None, None]
    y = np.where(y >= 0, y, slope * y)
    return x + conv3(y, weights, f"{prefix}.conv2")


# ============ DIFFERENCES ============

def test_static_window_has_zero_differences():
    frame = np.random.default_rng(0).standard_normal((C, 5, 5)).astype(np.float32)
    diffs = frame_diffs(np.stack([frame] * T))
    assert diffs.shape == ((T - 1) * C, 5, 5)
    assert np.all(diffs == 0)


def test_linear_ramp_has_unit_differences():
    F_c = np.stack([i * np.ones((C, 3, 3)) for i in range(T)])
    np.testing.assert_array_equal(frame_diffs(F_c), np.ones(((T - 1) * C, 3, 3)))


def test_differences_match_elementwise_subtraction():
    F_c = np.random.default_rng(1).standard_normal((T, C, 4, 4)).astype(np.float32)
    diffs = frame_diffs(F_c)
    for i in range(T - 1):
        np.testing.assert_array_equal(diffs[i * C:(i + 1) * C], F_c[i + 1] - F_c[i])


def test_differences_need_two_frames():
    with pytest.raises(ShapeError, match="dimension 0"):
        frame_diffs(np.zeros((1, C, 4, 4)))


# ============ MOTION ENCODER ============

def test_zero_differences_encode_to_zero(weights):
    out = encode_motion(np.zeros(((T - 1) * C, 8, 8)), zero_biases(weights))
    assert out.shape == (C, 4, 4)
    assert np.all(out == 0)


@pytest.mark.parametrize("size,expected", [(8, 4), (7, 3), (2, 1)])
def test_encoder_halves_extents(weights, size, expected):
    out = encode_motion(np.ones(((T - 1) * C, size, size)), weights)
    assert out.shape == (C, expected, expected)


def test_encoder_matches_conv_then_pool(weights):
    diffs = np.random.default_rng(2).standard_normal(((T - 1) * C, 6, 6)).astype(np.float32)
    ref = pool_loop(conv3(diffs, weights, "tdem.motion"), "avg", 2, 2)
    np.testing.assert_allclose(encode_motion(diffs, weights), ref, atol=1e-5)


def test_encoder_rejects_single_pixel(weights):
    with pytest.raises(ShapeError, match="extents"):
        encode_motion(np.ones(((T - 1) * C, 1, 4)), weights)


# ============ ENHANCEMENT ============

def test_enhance_shape_at_full_width():
    weights = WeightStore.random(tdem_param_specs(5, 128), 0)
    rng = np.random.default_rng(3)
    F_t = rng.standard_normal((128, 16, 16)).astype(np.float32)
    F_D = rng.standard_normal((128, 8, 8)).astype(np.float32)
    assert enhance(F_t, F_D, weights).shape == (128, 16, 16)


def test_zero_motion_collapses_to_second_residual_block(weights):
    quiet = zero_biases(weights)
    F_t = np.random.default_rng(4).standard_normal((C, 6, 6)).astype(np.float32)
    out = enhance(F_t, np.zeros((C, 3, 3)), quiet)
    np.testing.assert_allclose(out, residual_block(F_t, quiet, "tdem.resb2"), atol=1e-6)


def test_enhance_matches_composition(weights):
    rng = np.random.default_rng(5)
    F_t = rng.standard_normal((C, 6, 6)).astype(np.float32)
    F_D = rng.standard_normal((C, 3, 3)).astype(np.float32)
    motion = conv3(F_D, weights, "tdem.shared")
    ref = resb(F_t + up2(motion), weights, "tdem.resb2") + up2(resb(motion, weights, "tdem.resb1"))
    np.testing.assert_allclose(enhance(F_t, F_D, weights), ref, atol=1e-5)


def test_enhance_requires_exact_doubling(weights):
    with pytest.raises(ShapeError, match="dimension 1"):
        enhance(np.zeros((C, 7, 6)), np.zeros((C, 3, 3)), weights)


@pytest.mark.parametrize("resb1,resb2", [(False, True), (True, False), (False, False)])
def test_disabled_residual_blocks_act_as_identity(weights, resb1, resb2):
    rng = np.random.default_rng(6)
    F_t = rng.standard_normal((C, 4, 4)).astype(np.float32)
    F_D = rng.standard_normal((C, 2, 2)).astype(np.float32)
    motion = conv3(F_D, weights, "tdem.shared")
    first = F_t + up2(motion)
    first = resb(first, weights, "tdem.resb2") if resb2 else first
    second = resb(motion, weights, "tdem.resb1") if resb1 else motion
    cfg = TdemConfig(resb1=resb1, resb2=resb2)
    np.testing.assert_allclose(enhance(F_t, F_D, weights, cfg), first + up2(second), atol=1e-5)
    names = set(tdem_param_specs(T, C, cfg))
    assert any(n.startswith("tdem.resb1.") for n in names) == resb1
    assert any(n.startswith("tdem.resb2.") for n in names) == resb2


# ============ MODULE ============

def test_forward_shape_and_disabled_passthrough(weights):
    F_c = np.random.default_rng(7).standard_normal((T, C, 8, 8)).astype(np.float32)
    assert tdem_forward(F_c, TdemConfig(), weights).shape == (C, 8, 8)
    np.testing.assert_array_equal(tdem_forward(F_c, TdemConfig(enabled=False), WeightStore({})), F_c[-1])
