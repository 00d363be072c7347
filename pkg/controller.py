# controller.py
# End-to-end detector: backbone -> {MSRM, TDEM} -> fusion -> LGFM -> RCU -> head -> boxes

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from detection.postprocess import clip_boxes, decode, nms
from guardrails import ConfigError, ShapeError
from network.backbone import backbone_param_specs, extract, fuse_param_specs, fuse_st
from network.head import HeadOutput, head_forward, head_param_specs
from network.layers import Specs, merge
from network.lgfm import lgfm_forward, lgfm_param_specs
from network.msrm import msrm_forward, msrm_param_specs
from network.rcu import rcu_forward, rcu_param_specs
from network.tdem import tdem_forward, tdem_param_specs
from network.weights import WeightStore
from schemas.boxes import BBox, BoxRecord, FrameRecord
from schemas.config import PipelineConfig
from schemas.window import FrameWindow
from synth.sequence_io import read_sequence

logger = logging.getLogger(__name__)

RANDOM_SOURCE = re.compile(r"^random:(-?\d+)$")


def param_specs(cfg: PipelineConfig) -> Specs:
    """Every tensor the configured pipeline reads, in execution order."""
    channels, window = cfg.channels, cfg.window
    return merge(
        backbone_param_specs(cfg.backbone),
        msrm_param_specs(window, channels, cfg.msrm),
        tdem_param_specs(window, channels, cfg.tdem),
        fuse_param_specs(channels),
        lgfm_param_specs(window, channels, cfg.lgfm),
        rcu_param_specs(channels, cfg.rcu) if cfg.lgfm.enabled else None,
        head_param_specs(channels),
    )


def load_weights(source: Union[str, Path], cfg: PipelineConfig) -> WeightStore:
    """
    "random:SEED" builds seeded weights for `cfg`; anything else is a TRDW file
    path. Either way the store is checked against the configured tensor shapes.
    """
    specs = param_specs(cfg)
    m = RANDOM_SOURCE.match(str(source))
    if m:
        weights = WeightStore.random(specs, int(m.group(1)))
    else:
        weights = WeightStore.load(source)
    weights.validate(specs)
    return weights


@dataclass
class ForwardResult:
    head: HeadOutput
    detections: List[BBox]
    features: Dict[str, np.ndarray] = field(default_factory=dict)


class Pipeline:
    def __init__(self, cfg: PipelineConfig, weights: WeightStore):
        self.cfg = cfg
        self.weights = weights

    @classmethod
    def from_source(cls, cfg: PipelineConfig, source: Union[str, Path]) -> "Pipeline":
        return cls(cfg, load_weights(source, cfg))

    def features(self, window: FrameWindow) -> Dict[str, np.ndarray]:
        """All intermediate maps of one window, keyed by their usual names."""
        cfg, weights = self.cfg, self.weights
        if window.length != cfg.window:
            raise ShapeError(f"window has {window.length} frames, pipeline is configured for T={cfg.window}")

        F_c = extract(window.frames, weights, cfg.backbone, cfg.workers)
        F_S = msrm_forward(F_c, cfg.msrm, weights)
        F_T = tdem_forward(F_c, cfg.tdem, weights)
        F_st = fuse_st(F_S, F_T, weights)
        maps = {"F_c": F_c, "F_S": F_S, "F_T": F_T, "F_st": F_st}
        if cfg.lgfm.enabled:
            lgfm = lgfm_forward(F_c, cfg.lgfm, weights, cfg.workers)
            maps.update(F_lf=lgfm.local, F_gf=lgfm.global_)
            maps["F_stf"] = rcu_forward(lgfm.local, lgfm.global_, F_st, cfg.rcu, weights)
        else:
            maps["F_stf"] = F_st
        return maps

    def forward(self, window: FrameWindow, keep_features: bool = False) -> ForwardResult:
        maps = self.features(window)
        head = head_forward(maps["F_stf"], self.weights)
        boxes = clip_boxes(decode(head, self.cfg.stride), window.height, window.width)
        detections = nms(boxes, self.cfg.detect.nms_iou, self.cfg.detect.conf_thresh)
        logger.info("%s frame %d: %d candidates, %d detections",
                    window.sequence or "window", window.keyframe_id, len(boxes), len(detections))
        return ForwardResult(head=head, detections=detections, features=maps if keep_features else {})

    def detect(self, window: FrameWindow) -> List[BBox]:
        return self.forward(window).detections

    def run_sequence(self, directory: Union[str, Path]) -> List[FrameRecord]:
        """One detection record per keyframe of the sequence stored in `directory`."""
        records = []
        for window in read_sequence(directory, self.cfg.window):
            boxes = self.detect(window)
            records.append(FrameRecord(
                frame_id=window.keyframe_id,
                sequence=window.sequence,
                boxes=[BoxRecord.from_box(b) for b in boxes],
            ))
        return records


def apply_ablations(cfg: PipelineConfig, no_msrm: bool = False, no_tdem: bool = False,
                    no_lgfm: bool = False, rcu: Optional[str] = None) -> PipelineConfig:
    """Copy of `cfg` with the command-line switches applied and re-validated."""
    data = cfg.model_dump()
    if no_msrm:
        data["msrm"]["enabled"] = False
    if no_tdem:
        data["tdem"]["enabled"] = False
    if no_lgfm:
        data["lgfm"]["enabled"] = False
    if rcu is not None:
        data["rcu"]["variant"] = rcu
    try:
        return PipelineConfig.model_validate(data)
    except ValueError as e:
        raise ConfigError(f"invalid ablation settings: {e}")
