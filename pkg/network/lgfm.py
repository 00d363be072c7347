# network/lgfm.py
# Local-global frequency-aware module: Fourier-domain amplitude/phase attention,
# then a convolutional (local) branch and a windowed self-attention (global) branch

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Tuple

import numpy as np

from guardrails import ShapeError, check_rank
from network.layers import Specs, conv, conv_bn_act, conv_specs, dense, linear_specs, ln_specs, merge, norm
from network.weights import ParamSpec
from numerics.fourier import ComplexMap, PolarMap, dft2, from_polar, idft2, to_polar
from numerics.tensor import (
    ConvSpec, DTYPE, as_tensor, channel_pool, concat, gelu, relu, sigmoid, softmax,
)
from schemas.config import LgfmConfig, WindowAttnConfig

logger = logging.getLogger(__name__)


# ---------------- parameters ---------------- #

def _freq_convs(channels: int) -> dict:
    return {
        "lgfm.amp.dw": ConvSpec.depthwise(channels),
        "lgfm.amp.pw": ConvSpec.pointwise(channels, channels),
        "lgfm.amp_attn.dw": ConvSpec.depthwise(2),
        "lgfm.amp_attn.pw": ConvSpec.pointwise(2, 1),
        "lgfm.phase.dw": ConvSpec.depthwise(2 * channels),
        "lgfm.phase.pw": ConvSpec.pointwise(2 * channels, channels),
        "lgfm.phase_attn.dw": ConvSpec.depthwise(2),
        "lgfm.phase_attn.pw": ConvSpec.pointwise(2, 1),
    }


def freq_param_specs(channels: int) -> Specs:
    return merge(*(conv_specs(prefix, spec) for prefix, spec in _freq_convs(channels).items()))


def conv_branch_specs(window: int, channels: int) -> Specs:
    return merge(
        conv_specs("lgfm.conv.0", ConvSpec.same(window * channels, channels), bn=True),
        conv_specs("lgfm.conv.1", ConvSpec.same(channels, channels), bn=True),
    )


def swin_branch_specs(window: int, channels: int, cfg: WindowAttnConfig) -> Specs:
    embed = cfg.embed_dim
    hidden = cfg.mlp_ratio * embed
    tokens = cfg.window * cfg.window
    return merge(
        conv_specs("lgfm.swin.embed", ConvSpec.pointwise(window * channels, embed)),
        ln_specs("lgfm.swin.norm1", embed),
        linear_specs("lgfm.swin.attn.qkv", embed, 3 * embed),
        linear_specs("lgfm.swin.attn.proj", embed, embed),
        {"lgfm.swin.attn.bias": ParamSpec((cfg.heads, tokens, tokens), "zeros")} if cfg.window_bias else None,
        ln_specs("lgfm.swin.norm2", embed),
        linear_specs("lgfm.swin.mlp.fc1", embed, hidden),
        linear_specs("lgfm.swin.mlp.fc2", hidden, embed),
        conv_specs("lgfm.swin.proj", ConvSpec.pointwise(embed, channels)),
    )


def lgfm_param_specs(window: int, channels: int, cfg: LgfmConfig = LgfmConfig()) -> Specs:
    if not cfg.enabled:
        return {}
    return merge(
        freq_param_specs(channels) if cfg.fourier else None,
        conv_branch_specs(window, channels) if cfg.conv_branch else None,
        swin_branch_specs(window, channels, cfg.swin) if cfg.swin_branch else None,
    )


# ---------------- frequency enhancement ---------------- #

@dataclass(frozen=True)
class FreqTrace:
    """Every intermediate of one frame's frequency enhancement."""
    amp: np.ndarray  # f_A
    phase: np.ndarray  # f_P
    amp_feat: np.ndarray  # f'_A
    amp_map: np.ndarray  # M_a, [1,H,W]
    amp_out: np.ndarray  # f''_A
    residual: np.ndarray  # f_R
    phase_feat: np.ndarray  # f'_P
    phase_map: np.ndarray  # M_p, [1,H,W]
    phase_gated: np.ndarray  # f''_P
    phase_out: np.ndarray  # f'''_P in (-pi, pi)
    out: np.ndarray  # x'


def _dw_pw(x, weights: Mapping[str, np.ndarray], prefix: str, specs: dict) -> np.ndarray:
    """PW(ReLU(DW(x)))."""
    hidden = relu(conv(x, weights, f"{prefix}.dw", specs[f"{prefix}.dw"]))
    return conv(hidden, weights, f"{prefix}.pw", specs[f"{prefix}.pw"])


def recompose(amp, phase) -> ComplexMap:
    """Real/imaginary planes from amplitude and phase."""
    return from_polar(PolarMap(amp=np.asarray(amp, dtype=np.float64), phase=np.asarray(phase, dtype=np.float64)))


def freq_enhance_trace(x, weights: Mapping[str, np.ndarray]) -> FreqTrace:
    x = as_tensor(x)
    check_rank(x, 3, "freq_enhance input")
    specs = _freq_convs(x.shape[0])

    polar = to_polar(dft2(x))
    f_A = as_tensor(polar.amp)
    f_P = as_tensor(polar.phase)

    amp_feat = relu(_dw_pw(f_A, weights, "lgfm.amp", specs))
    amp_map = sigmoid(_dw_pw(channel_pool(amp_feat), weights, "lgfm.amp_attn", specs))
    amp_out = as_tensor(amp_feat * amp_map)
    residual = as_tensor(amp_out - f_A)

    phase_feat = sigmoid(_dw_pw(concat([f_P, residual]), weights, "lgfm.phase", specs))
    phase_map = sigmoid(_dw_pw(channel_pool(phase_feat), weights, "lgfm.phase_attn", specs))
    phase_gated = as_tensor(phase_feat * phase_map)
    phase_out = as_tensor(DTYPE(2 * np.pi) * phase_gated - DTYPE(np.pi))

    out = as_tensor(x + idft2(recompose(amp_out, phase_out)))
    return FreqTrace(
        amp=f_A, phase=f_P, amp_feat=amp_feat, amp_map=amp_map, amp_out=amp_out,
        residual=residual, phase_feat=phase_feat, phase_map=phase_map,
        phase_gated=phase_gated, phase_out=phase_out, out=out,
    )


def freq_enhance(x, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """x' = x + idft2(recompose(f''_A, f'''_P)) for one frame's features [C,H,W]."""
    return freq_enhance_trace(x, weights).out


# ---------------- local branch ---------------- #

def conv_branch(stacked, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Two 3x3 conv+BN+SiLU blocks, T*C -> C -> C."""
    stacked = as_tensor(stacked)
    check_rank(stacked, 3, "conv branch input")
    channels = weights["lgfm.conv.0.weight"].shape[0]
    x = conv_bn_act(stacked, weights, "lgfm.conv.0", ConvSpec.same(stacked.shape[0], channels))
    return conv_bn_act(x, weights, "lgfm.conv.1", ConvSpec.same(channels, channels))


# ---------------- global branch ---------------- #

def window_partition(x, window: int) -> np.ndarray:
    """[E,H,W] -> [nWin, w*w, E]; H and W must be multiples of `window`."""
    x = as_tensor(x)
    embed, height, width = x.shape
    if height % window or width % window:
        raise ShapeError(f"window_partition: extents {height}x{width} are not multiples of {window}")
    nh, nw = height // window, width // window
    tiles = x.reshape(embed, nh, window, nw, window).transpose(1, 3, 2, 4, 0)
    return np.ascontiguousarray(tiles.reshape(nh * nw, window * window, embed))


def window_reverse(windows, window: int, height: int, width: int) -> np.ndarray:
    """Inverse of window_partition."""
    windows = as_tensor(windows)
    nh, nw = height // window, width // window
    embed = windows.shape[-1]
    tiles = windows.reshape(nh, nw, window, window, embed).transpose(4, 0, 2, 1, 3)
    return as_tensor(tiles.reshape(embed, height, width))


def multi_head_attention(tokens, weights: Mapping[str, np.ndarray], prefix: str, heads: int,
                         bias: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Self-attention over the token axis of [..., N, E].
    Returns (output [..., N, E], attention [..., heads, N, N]).
    """
    tokens = as_tensor(tokens)
    *batch, count, embed = tokens.shape
    head_dim = embed // heads
    qkv = dense(tokens, weights, f"{prefix}.qkv").reshape(*batch, count, 3, heads, head_dim)
    qkv = np.moveaxis(qkv, (-3, -2), (0, -3))  # [3, ..., heads, N, head_dim]
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ np.swapaxes(k, -1, -2)) * DTYPE(head_dim ** -0.5)
    if bias is not None:
        scores = scores + bias
    attn = softmax(scores, axis=-1)
    out = np.swapaxes(attn @ v, -3, -2).reshape(*batch, count, embed)
    return dense(out, weights, f"{prefix}.proj"), attn


def window_block(tokens, cfg: WindowAttnConfig, weights: Mapping[str, np.ndarray],
                 prefix: str = "lgfm.swin") -> np.ndarray:
    """t + MHSA(LN(t)), then t + MLP(LN(t)), per window."""
    tokens = as_tensor(tokens)
    bias = weights[f"{prefix}.attn.bias"] if cfg.window_bias else None
    attended, _ = multi_head_attention(norm(tokens, weights, f"{prefix}.norm1"), weights,
                                       f"{prefix}.attn", cfg.heads, bias)
    tokens = as_tensor(tokens + attended)
    hidden = gelu(dense(norm(tokens, weights, f"{prefix}.norm2"), weights, f"{prefix}.mlp.fc1"))
    return as_tensor(tokens + dense(hidden, weights, f"{prefix}.mlp.fc2"))


def window_attention(x, cfg: WindowAttnConfig, weights: Mapping[str, np.ndarray],
                     prefix: str = "lgfm.swin") -> np.ndarray:
    """Window block over [E,H,W]; zero-pads bottom/right to multiples of w and crops back."""
    x = as_tensor(x)
    check_rank(x, 3, "window attention input")
    _, height, width = x.shape
    w = cfg.window
    pad_h, pad_w = (-height) % w, (-width) % w
    if pad_h or pad_w:
        x = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w)))
    windows = window_partition(x, w)
    windows = window_block(windows, cfg, weights, prefix)
    out = window_reverse(windows, w, height + pad_h, width + pad_w)
    return as_tensor(out[:, :height, :width])


def swin_branch(stacked, cfg: WindowAttnConfig, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """1x1 embed T*C -> E, windowed attention block, 1x1 projection E -> C."""
    stacked = as_tensor(stacked)
    check_rank(stacked, 3, "window branch input")
    channels = weights["lgfm.swin.proj.weight"].shape[0]
    x = conv(stacked, weights, "lgfm.swin.embed", ConvSpec.pointwise(stacked.shape[0], cfg.embed_dim))
    x = window_attention(x, cfg, weights)
    return conv(x, weights, "lgfm.swin.proj", ConvSpec.pointwise(cfg.embed_dim, channels))


# ---------------- module ---------------- #

@dataclass(frozen=True)
class LgfmOutput:
    enhanced: np.ndarray  # F'_c [T,C,H,W]
    local: np.ndarray  # F_lf
    global_: np.ndarray  # F_gf


def lgfm_forward(F_c, cfg: LgfmConfig, weights: Mapping[str, np.ndarray], workers: int = 1) -> LgfmOutput:
    """
    Frequency-enhance each frame, stack on channels and run both branches.
    A disabled branch's output is replaced by the other branch's.
    """
    F_c = as_tensor(F_c)
    check_rank(F_c, 4, "F_c [T,C,H,W]")
    if not cfg.enabled:
        raise ShapeError("lgfm_forward called with LGFM disabled")
    if cfg.fourier:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                frames = list(pool.map(lambda f: freq_enhance(f, weights), F_c))
        else:
            frames = [freq_enhance(f, weights) for f in F_c]
        enhanced = np.stack(frames)
    else:
        enhanced = F_c
    window, channels, height, width = enhanced.shape
    stacked = enhanced.reshape(window * channels, height, width)

    local = conv_branch(stacked, weights) if cfg.conv_branch else None
    global_ = swin_branch(stacked, cfg.swin, weights) if cfg.swin_branch else None
    local = global_ if local is None else local
    global_ = local if global_ is None else global_
    logger.debug("lgfm: F_lf %s, F_gf %s (fourier=%s)", local.shape, global_.shape, cfg.fourier)
    return LgfmOutput(enhanced=as_tensor(enhanced), local=local, global_=global_)
