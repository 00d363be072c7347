#!/usr/bin/env python3
"""
Tests for configuration loading, validation and ablation switches.

Run: python -m pytest tests/config_test.py -v
"""

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from controller import apply_ablations
from guardrails import ConfigError
from schemas.config import (
    BackboneConfig, CsabSpec, LgfmConfig, PipelineConfig, SceneConfig, TargetSpec, WindowAttnConfig, load_config,
)

REPO = Path(__file__).parent.parent


# ============ DEFAULTS ============

def test_defaults():
    cfg = PipelineConfig()
    assert cfg.window == 5 and cfg.channels == 128
    assert cfg.stride == 4
    assert cfg.lgfm.swin.window == 8 and cfg.lgfm.swin.heads == 4
    assert cfg.rcu.variant == "c" and cfg.rcu.csab.m == 2
    assert cfg.detect.nms_iou == 0.65 and cfg.detect.conf_thresh == 0.001
    assert (cfg.loss.lambda_reg, cfg.loss.lambda_cls, cfg.loss.lambda_obj) == (5.0, 1.0, 1.0)
    assert (cfg.loss.alpha, cfg.loss.beta, cfg.loss.c_nwd) == (0.5, 0.5, 5.0)


def test_shipped_config_matches_defaults():
    assert load_config(REPO / "configs" / "pipeline.json") == PipelineConfig()


def test_small_config_is_valid():
    cfg = load_config(REPO / "configs" / "small.json")
    assert cfg.channels == 8 and cfg.stride == 4


# ============ LOADING ============

def test_environment_fallback(tmp_path, monkeypatch):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"window": 3}))
    monkeypatch.setenv("TRIDOS_CONFIG", str(path))
    assert load_config().window == 3
    monkeypatch.delenv("TRIDOS_CONFIG")
    assert load_config().window == 5


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.json")


def test_invalid_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{window: 3")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"lgfm": {"swin": {"window": 8, "shift": 4}}}))
    with pytest.raises(ConfigError):
        load_config(path)


# ============ VALIDATION ============

@pytest.mark.parametrize("kwargs", [
    {"window": 1},
    {"window": 17},
    {"channels": 64},
    {"channels": 7, "backbone": {"stages": [[7, 2]]}},
])
def test_pipeline_rejects(kwargs):
    with pytest.raises(ValueError):
        PipelineConfig(**kwargs)


def test_stage_strides():
    with pytest.raises(ValueError):
        BackboneConfig(stages=[(8, 3)])
    with pytest.raises(ValueError):
        BackboneConfig(stages=[])
    assert BackboneConfig(stages=[(8, 2), (8, 2), (8, 2)]).total_stride == 8


def test_heads_must_divide_embedding():
    with pytest.raises(ValueError, match="divisible"):
        WindowAttnConfig(embed_dim=10, heads=4)


def test_lgfm_needs_a_spatial_branch():
    with pytest.raises(ValueError):
        LgfmConfig(conv_branch=False, swin_branch=False)
    assert not LgfmConfig(enabled=False, conv_branch=False, swin_branch=False).enabled


def test_sab_kernel_is_odd():
    with pytest.raises(ValueError, match="odd"):
        CsabSpec(sab_kernel=4)


def test_scene_targets_must_stay_inside():
    with pytest.raises(ValueError, match="leaves the image"):
        SceneConfig(targets=[TargetSpec(cx=60, cy=30, vx=2)])
    with pytest.raises(ValueError, match="size_min"):
        SceneConfig(size_min=10, size_max=5)


# ============ ABLATIONS ============

def test_ablation_switches():
    cfg = apply_ablations(PipelineConfig(), no_msrm=True, no_tdem=True, no_lgfm=True, rcu="a")
    assert not cfg.msrm.enabled and not cfg.tdem.enabled and not cfg.lgfm.enabled
    assert cfg.rcu.variant == "a"


def test_no_ablation_is_identity():
    cfg = PipelineConfig()
    assert apply_ablations(cfg, False, False, False, None) == cfg
