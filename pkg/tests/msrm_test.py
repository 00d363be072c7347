#!/usr/bin/env python3
"""
Tests for the spatial relation module: reference weighting, the non-local
block and the key-value memory read.

Run: python -m pytest tests/msrm_test.py -v
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from guardrails import ShapeError
from network.msrm import (
    MemoryBank, attention_map, build_memory, fuse_references, memory_read, msrm_forward,
    msrm_param_specs, non_local, read_memory, reference_gate,
)
from network.weights import WeightStore
from schemas.config import MsrmConfig, NabConfig
from tests.oracles import attention_explicit, conv_loop

T, C = 3, 4


@pytest.fixture(scope="module")
def weights():
    return WeightStore.random(msrm_param_specs(T, C), 11)


@pytest.fixture(scope="module")
def F_c():
    return np.random.default_rng(0).standard_normal((T, C, 6, 6)).astype(np.float32)


def pointwise(x, weights, prefix):
    """1x1 conv on [C,H,W] through the loop oracle."""
    return conv_loop(x, weights[f"{prefix}.weight"], weights[f"{prefix}.bias"])


# ============ REFERENCE WEIGHTING ============

@pytest.mark.parametrize("bias,expected", [(50.0, 1.0), (-50.0, 0.0)])
def test_saturated_gate(weights, F_c, bias, expected):
    saturated = weights.replace(msrm__gate__weight=np.zeros_like(weights["msrm.gate.weight"]),
                                msrm__gate__bias=np.full(C, bias))
    gate = reference_gate(F_c, saturated)
    assert np.all(gate == expected)
    F_hat = F_c[-1] * expected
    ref = conv_loop(np.concatenate([F_hat, F_c[-1]]), weights["msrm.local.weight"],
                    weights["msrm.local.bias"], padding=1)
    np.testing.assert_allclose(fuse_references(F_c, saturated), ref, atol=1e-5)


def test_fuse_references_matches_composition(weights, F_c):
    z = conv_loop(F_c[:-1].reshape((T - 1) * C, 6, 6), weights["msrm.gate.weight"],
                  weights["msrm.gate.bias"], padding=1)
    gate = 1.0 / (1.0 + np.exp(-z))
    F_hat = gate * F_c[-1]
    ref = conv_loop(np.concatenate([F_hat, F_c[-1]]), weights["msrm.local.weight"],
                    weights["msrm.local.bias"], padding=1)
    np.testing.assert_allclose(fuse_references(F_c, weights), ref, atol=1e-5)


def test_single_frame_window_rejected(weights):
    with pytest.raises(ShapeError, match="dimension 0"):
        reference_gate(np.zeros((1, C, 4, 4)), weights)


# ============ NON-LOCAL ============

def test_zero_gamma_is_identity(weights, F_c):
    F_l = F_c[0]
    np.testing.assert_array_equal(non_local(F_l, NabConfig(gamma=0.0), weights), F_l)


def test_single_position_attends_to_itself(weights):
    F_l = np.random.default_rng(1).standard_normal((C, 1, 1)).astype(np.float32)
    attn, v = attention_map(F_l, weights)
    assert attn.shape == (1, 1) and attn[0, 0] == pytest.approx(1.0)
    out = non_local(F_l, NabConfig(gamma=0.7), weights)
    np.testing.assert_allclose(out, 0.7 * v.reshape(C, 1, 1) + F_l, rtol=1e-6)


def test_two_by_two_matches_explicit_attention(weights):
    F_l = np.random.default_rng(2).standard_normal((C, 2, 2)).astype(np.float32)
    q = pointwise(F_l, weights, "msrm.nab.query").reshape(C // 2, 4)
    k = pointwise(F_l, weights, "msrm.nab.key").reshape(C // 2, 4)
    v = pointwise(F_l, weights, "msrm.nab.value").reshape(C, 4)
    out, attn = attention_explicit(q.T, k.T, v.T)
    got_attn, _ = attention_map(F_l, weights)
    np.testing.assert_allclose(got_attn, attn, atol=1e-5)
    ref = 1.5 * out.T.reshape(C, 2, 2) + F_l
    np.testing.assert_allclose(non_local(F_l, NabConfig(gamma=1.5), weights), ref, atol=1e-5)


# ============ MEMORY ============

def test_single_memory_position_reads_its_value(weights):
    rng = np.random.default_rng(3)
    F_t = rng.standard_normal((C, 3, 3)).astype(np.float32)
    F_g = rng.standard_normal((C, 1, 1)).astype(np.float32)
    bank = build_memory(F_t, F_g, weights)
    read, m_s = read_memory(bank)
    assert m_s.shape == (9, 1)
    np.testing.assert_allclose(m_s, 1.0, atol=1e-6)
    np.testing.assert_allclose(read, np.broadcast_to(bank.V_M, read.shape), rtol=1e-6)


def test_affinity_rows_are_distributions(weights, F_c):
    _, m_s = read_memory(build_memory(F_c[-1], F_c[0], weights))
    assert m_s.shape == (36, 36)
    np.testing.assert_allclose(m_s.sum(axis=1), 1.0, atol=1e-6)


def test_two_position_memory_convex_combination():
    bank = MemoryBank(
        K_M=np.array([[[0.0, math.log(3.0)]]], dtype=np.float32),
        V_M=np.array([[[2.0, 6.0]]], dtype=np.float32),
        K_Q=np.ones((1, 1, 1), dtype=np.float32),
        V_Q=np.zeros((1, 1, 1), dtype=np.float32),
    )
    read, m_s = read_memory(bank)
    np.testing.assert_allclose(m_s, [[0.25, 0.75]], atol=1e-6)
    assert read[0, 0, 0] == pytest.approx(0.25 * 2.0 + 0.75 * 6.0, abs=1e-5)


def test_memory_read_matches_composition(weights, F_c):
    F_t, F_g = F_c[-1], F_c[1]
    k_m = pointwise(F_g, weights, "msrm.mem.key_m").reshape(C // 2, -1)
    v_m = pointwise(F_g, weights, "msrm.mem.value_m").reshape(C // 2, -1)
    k_q = pointwise(F_t, weights, "msrm.mem.key_q").reshape(C // 2, -1)
    v_q = pointwise(F_t, weights, "msrm.mem.value_q")
    read, _ = attention_explicit(k_q.T, k_m.T, v_m.T)
    stacked = np.concatenate([read.T.reshape(C // 2, 6, 6), v_q])
    ref = pointwise(stacked, weights, "msrm.match")
    np.testing.assert_allclose(memory_read(F_t, F_g, weights), ref, atol=1e-5)


def test_memory_bank_rejects_key_mismatch():
    with pytest.raises(ShapeError):
        MemoryBank(K_M=np.zeros((2, 1, 1)), V_M=np.zeros((2, 1, 1)),
                   K_Q=np.zeros((3, 1, 1)), V_Q=np.zeros((2, 1, 1)))


# ============ SWITCHES ============

def test_disabled_module_passes_keyframe_through(F_c):
    out = msrm_forward(F_c, MsrmConfig(enabled=False), WeightStore({}))
    np.testing.assert_array_equal(out, F_c[-1])
    assert msrm_param_specs(T, C, MsrmConfig(enabled=False)) == {}


def test_without_memory_output_is_non_local(weights, F_c):
    cfg = MsrmConfig(meu=False)
    expected = non_local(fuse_references(F_c, weights), cfg.attention, weights)
    np.testing.assert_array_equal(msrm_forward(F_c, cfg, weights), expected)
    assert not any(name.startswith("msrm.mem.") for name in msrm_param_specs(T, C, cfg))


def test_without_non_local_memory_reads_local_features(weights, F_c):
    cfg = MsrmConfig(nab=False)
    expected = memory_read(F_c[-1], fuse_references(F_c, weights), weights)
    np.testing.assert_array_equal(msrm_forward(F_c, cfg, weights), expected)
    assert not any(name.startswith("msrm.nab.") for name in msrm_param_specs(T, C, cfg))


def test_full_module_shape(weights, F_c):
    assert msrm_forward(F_c, MsrmConfig(), weights).shape == (C, 6, 6)
