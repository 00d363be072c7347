#!/usr/bin/env python3
"""
Tests for the residual compensation units and the fusion tree built from them.

Run: python -m pytest tests/rcu_test.py -v
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from guardrails import ShapeError
from network.rcu import RCU_UNITS, cab_scale, csab, rcu_forward, rcu_fuse, rcu_param_specs, rcu_tree, sab_scale
from network.weights import WeightStore
from schemas.config import CsabSpec, RcuConfig
from tests.oracles import conv_loop, sigmoid

C = 4
SPEC = CsabSpec(m=2, reduction=4, sab_kernel=3)


@pytest.fixture(scope="module")
def weights():
    return WeightStore.random(rcu_param_specs(C, RcuConfig(csab=SPEC)), 13)


@pytest.fixture(scope="module")
def maps():
    rng = np.random.default_rng(0)
    return tuple(rng.standard_normal((C, 5, 5)).astype(np.float32) for _ in range(3))


def saturate_gates(weights: WeightStore) -> WeightStore:
    updates = {}
    for name, tensor in weights.items():
        if name.endswith((".cab.fc2.weight", ".sab.conv.weight")):
            updates[name] = np.zeros_like(tensor)
        elif name.endswith((".cab.fc2.bias", ".sab.conv.bias")):
            updates[name] = np.full_like(tensor, 50.0)
    return weights.updated(updates)


# ============ ORACLE ============

def csab_oracle(x, w, prefix, spec=SPEC):
    z = conv_loop(x, w[f"{prefix}.conv.weight"], w[f"{prefix}.conv.bias"], padding=1)
    g, b, m, v = (w[f"{prefix}.conv.bn.{n}"].astype(np.float64)[:, None, None] for n in ("gamma", "beta", "mean", "var"))
    body = np.maximum((z - m) / np.sqrt(v + 1e-5) * g + b, 0.0)
    if spec.cab:
        def mlp(vec):
            hidden = np.maximum(w[f"{prefix}.cab.fc1.weight"] @ vec + w[f"{prefix}.cab.fc1.bias"], 0.0)
            return w[f"{prefix}.cab.fc2.weight"] @ hidden + w[f"{prefix}.cab.fc2.bias"]
        scale = sigmoid(mlp(body.mean(axis=(1, 2))) + mlp(body.max(axis=(1, 2))))
        body = body * scale[:, None, None]
    if spec.sab:
        pooled = np.stack([body.mean(axis=0), body.max(axis=0)])
        k = w[f"{prefix}.sab.conv.weight"].shape[-1]
        body = body * sigmoid(conv_loop(pooled, w[f"{prefix}.sab.conv.weight"], w[f"{prefix}.sab.conv.bias"],
                                        padding=k // 2))
    return body + x


def fuse_oracle(a, b, w, prefix, spec=SPEC):
    x = np.concatenate([a, b]).astype(np.float64)
    for j in range(spec.m):
        x = csab_oracle(x, w, f"{prefix}.csab{j}", spec)
    return conv_loop(x, w[f"{prefix}.proj.weight"], w[f"{prefix}.proj.bias"])


# ============ GATES ============

def test_gates_lie_in_unit_interval(weights, maps):
    x = np.concatenate(maps[:2])
    channel = cab_scale(x, weights, "rcu.1.csab0.cab")
    spatial = sab_scale(x, weights, "rcu.1.csab0.sab")
    assert channel.shape == (2 * C,) and spatial.shape == (1, 5, 5)
    assert np.all((channel > 0) & (channel < 1))
    assert np.all((spatial > 0) & (spatial < 1))


def test_saturated_gates_reduce_to_conv_plus_residual(weights, maps):
    saturated = saturate_gates(weights)
    a, b, _ = maps
    x = np.concatenate([a, b]).astype(np.float64)
    for j in range(SPEC.m):
        plain = CsabSpec(m=SPEC.m, reduction=4, sab_kernel=3, cab=False, sab=False)
        x = csab_oracle(x, saturated, f"rcu.1.csab{j}", plain)
    ref = conv_loop(x, saturated["rcu.1.proj.weight"], saturated["rcu.1.proj.bias"])
    np.testing.assert_allclose(rcu_fuse(a, b, SPEC, saturated, "rcu.1"), ref, atol=1e-5)


@pytest.mark.parametrize("use_cab,use_sab", [(False, True), (True, False), (False, False)])
def test_gate_switches(use_cab, use_sab):
    spec = CsabSpec(m=1, reduction=4, sab_kernel=3, cab=use_cab, sab=use_sab)
    weights = WeightStore.random(rcu_param_specs(C, RcuConfig(variant="a", csab=spec)), 2)
    x = np.random.default_rng(1).standard_normal((2 * C, 4, 4)).astype(np.float32)
    out = csab(x, spec, weights, "rcu.1.csab0")
    np.testing.assert_allclose(out, csab_oracle(x, weights, "rcu.1.csab0", spec), atol=1e-5)
    names = set(weights)
    assert ("rcu.1.csab0.cab.fc1.weight" in names) == use_cab
    assert ("rcu.1.csab0.sab.conv.weight" in names) == use_sab


# ============ FUSE ============

def test_fuse_matches_straight_line_oracle(weights, maps):
    a, b, _ = maps
    np.testing.assert_allclose(rcu_fuse(a, b, SPEC, weights, "rcu.2"), fuse_oracle(a, b, weights, "rcu.2"),
                               atol=1e-5)


def test_chain_length_is_honoured(weights, maps):
    a, b, _ = maps
    one = rcu_fuse(a, b, SPEC.model_copy(update={"m": 1}), weights, "rcu.1")
    two = rcu_fuse(a, b, SPEC, weights, "rcu.1")
    assert not np.allclose(one, two)


def test_fuse_rejects_mismatched_inputs(weights):
    with pytest.raises(ShapeError):
        rcu_fuse(np.zeros((C, 4, 4)), np.zeros((C, 4, 5)), SPEC, weights)


# ============ TREE ============

def test_tree_preserves_shape(weights, maps):
    assert rcu_tree(*maps, SPEC, weights).shape == (C, 5, 5)


def test_tree_is_not_symmetric_in_its_branches(weights, maps):
    F_lf, F_gf, F_st = maps
    assert not np.allclose(rcu_tree(F_lf, F_gf, F_st, SPEC, weights), rcu_tree(F_gf, F_lf, F_st, SPEC, weights))


def test_tree_equals_three_chained_units(weights, maps):
    F_lf, F_gf, F_st = maps
    stf1 = rcu_fuse(F_lf, F_st, SPEC, weights, "rcu.1")
    stf2 = rcu_fuse(F_gf, F_st, SPEC, weights, "rcu.2")
    np.testing.assert_array_equal(rcu_tree(F_lf, F_gf, F_st, SPEC, weights),
                                  rcu_fuse(stf1, stf2, SPEC, weights, "rcu.3"))


# ============ VARIANTS ============

@pytest.mark.parametrize("variant,units", [("none", 0), ("a", 1), ("b", 2), ("c", 3)])
def test_variant_unit_counts(variant, units):
    names = rcu_param_specs(C, RcuConfig(variant=variant, csab=SPEC))
    present = {prefix for prefix in RCU_UNITS if any(n.startswith(prefix + ".") for n in names)}
    assert present == set(RCU_UNITS[:units])


def test_variants_wire_as_documented(weights, maps):
    F_lf, F_gf, F_st = maps

    def run(variant):
        return rcu_forward(F_lf, F_gf, F_st, RcuConfig(variant=variant, csab=SPEC), weights)

    np.testing.assert_allclose(run("none"), F_st + F_lf + F_gf, rtol=1e-6)
    np.testing.assert_array_equal(run("a"), rcu_fuse(F_lf, F_st, SPEC, weights, "rcu.1"))
    np.testing.assert_allclose(run("b"), rcu_fuse(F_lf, F_st, SPEC, weights, "rcu.1")
                               + rcu_fuse(F_gf, F_st, SPEC, weights, "rcu.2"), rtol=1e-6)
    np.testing.assert_array_equal(run("c"), rcu_tree(F_lf, F_gf, F_st, SPEC, weights))
