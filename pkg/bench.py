# bench.py
# Micro-benchmarks: median wall time per operation

import logging
import time
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ValidationError

from controller import Pipeline
from guardrails import ConfigError
from network.layers import conv_specs, linear_specs, ln_specs, merge
from network.lgfm import window_attention
from network.weights import WeightStore
from numerics.fourier import dft2
from numerics.tensor import ConvSpec, conv2d
from schemas.config import PipelineConfig, SceneConfig, WindowAttnConfig
from synth.generator import generate_window

logger = logging.getLogger(__name__)

Op = Literal["fft", "conv", "attn", "forward"]


class BenchResult(BaseModel):
    op: str
    size: int
    repeat: int
    median_ns: float

    @property
    def per_second(self) -> float:
        return 1e9 / self.median_ns if self.median_ns > 0 else float("inf")

    def summary(self) -> str:
        line = f"{self.op} size={self.size}: {self.median_ns:.0f} ns/op (median of {self.repeat})"
        if self.op == "forward":
            line += f", {self.per_second:.2f} FPS"
        return line


def time_op(fn: Callable[[], object], repeat: int) -> float:
    fn()  # warm-up
    samples = []
    for _ in range(repeat):
        start = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - start)
    return float(max(np.median(samples), 1.0))


def _bench_fn(op: Op, size: int, cfg: PipelineConfig) -> Callable[[], object]:
    rng = np.random.default_rng(cfg.seed)
    if op == "fft":
        x = rng.standard_normal((4, size, size)).astype(np.float32)
        return lambda: dft2(x)
    if op == "conv":
        spec = ConvSpec.same(cfg.channels, cfg.channels)
        x = rng.standard_normal((cfg.channels, size, size)).astype(np.float32)
        w = WeightStore.random(conv_specs("bench", spec), cfg.seed)
        return lambda: conv2d(x, w["bench.weight"], w["bench.bias"], spec)
    if op == "attn":
        attn: WindowAttnConfig = cfg.lgfm.swin
        embed, hidden = attn.embed_dim, attn.mlp_ratio * attn.embed_dim
        specs = merge(
            ln_specs("bench.norm1", embed), linear_specs("bench.attn.qkv", embed, 3 * embed),
            linear_specs("bench.attn.proj", embed, embed), ln_specs("bench.norm2", embed),
            linear_specs("bench.mlp.fc1", embed, hidden), linear_specs("bench.mlp.fc2", hidden, embed),
        )
        w = WeightStore.random(specs, cfg.seed)
        x = rng.standard_normal((embed, size, size)).astype(np.float32)
        attn = attn.model_copy(update={"window_bias": False})
        return lambda: window_attention(x, attn, w, prefix="bench")
    if op == "forward":
        try:
            scene = SceneConfig.model_validate(
                {**cfg.scene.model_dump(), "height": size, "width": size, "frames": cfg.window}
            )
        except ValidationError as e:
            raise ConfigError(f"cannot build a {size}x{size} benchmark scene: {e}")
        window = generate_window(scene, 0)
        pipeline = Pipeline.from_source(cfg, f"random:{cfg.seed}")
        return lambda: pipeline.detect(window)
    raise ValueError(f"unknown benchmark op {op!r}")


def run_bench(op: Op, size: int = 64, repeat: int = 5, cfg: Optional[PipelineConfig] = None) -> BenchResult:
    cfg = cfg or PipelineConfig()
    median = time_op(_bench_fn(op, size, cfg), repeat)
    result = BenchResult(op=op, size=size, repeat=repeat, median_ns=median)
    logger.info(result.summary())
    return result
