# network/msrm.py
# Memory-enhanced spatial relationships: reference weighting, non-local block, key-value memory read

import logging
from dataclasses import dataclass
from typing import Mapping, Tuple

import numpy as np

from guardrails import ShapeError, check_rank
from network.layers import Specs, conv, conv_specs, merge
from numerics.tensor import ConvSpec, DTYPE, as_tensor, concat, sigmoid, softmax
from schemas.config import MsrmConfig, NabConfig

logger = logging.getLogger(__name__)


def _convs(window: int, channels: int) -> dict:
    half = channels // 2
    return {
        "msrm.gate": ConvSpec.same((window - 1) * channels, channels),
        "msrm.local": ConvSpec.same(2 * channels, channels),
        "msrm.nab.query": ConvSpec.pointwise(channels, half),
        "msrm.nab.key": ConvSpec.pointwise(channels, half),
        "msrm.nab.value": ConvSpec.pointwise(channels, channels),
        "msrm.mem.key_m": ConvSpec.pointwise(channels, half),
        "msrm.mem.value_m": ConvSpec.pointwise(channels, half),
        "msrm.mem.key_q": ConvSpec.pointwise(channels, half),
        "msrm.mem.value_q": ConvSpec.pointwise(channels, half),
        "msrm.match": ConvSpec.pointwise(2 * half, channels),
    }


def msrm_param_specs(window: int, channels: int, cfg: MsrmConfig = MsrmConfig()) -> Specs:
    if not cfg.enabled:
        return {}
    specs = []
    for prefix, spec in _convs(window, channels).items():
        if prefix.startswith("msrm.nab.") and not cfg.nab:
            continue
        if (prefix.startswith("msrm.mem.") or prefix == "msrm.match") and not cfg.meu:
            continue
        specs.append(conv_specs(prefix, spec))
    return merge(*specs)


def _spec(prefix: str, window: int, channels: int) -> ConvSpec:
    return _convs(window, channels)[prefix]


# ---------------- reference weighting ---------------- #

def reference_gate(F_c, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """sigmoid(Conv(Concat[F_1..F_{t-1}])): per-pixel, per-channel weights for the keyframe."""
    F_c = as_tensor(F_c)
    check_rank(F_c, 4, "F_c [T,C,H,W]")
    window, channels = F_c.shape[:2]
    if window < 2:
        raise ShapeError(f"F_c: dimension 0 (T) must be >= 2, got {window}")
    refs = F_c[:-1].reshape((window - 1) * channels, *F_c.shape[2:])
    return sigmoid(conv(refs, weights, "msrm.gate", _spec("msrm.gate", window, channels)))


def fuse_references(F_c, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """F_l = Conv(Concat[gate * F_t, F_t])."""
    F_c = as_tensor(F_c)
    gate = reference_gate(F_c, weights)
    window, channels = F_c.shape[:2]
    F_t = F_c[-1]
    F_hat = gate * F_t
    return conv(concat([F_hat, F_t]), weights, "msrm.local", _spec("msrm.local", window, channels))


# ---------------- non-local block ---------------- #

def attention_map(F_l, weights: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (attention [HW,HW] with rows over key positions, values [C,HW])."""
    F_l = as_tensor(F_l)
    check_rank(F_l, 3, "F_l")
    channels = F_l.shape[0]
    half = channels // 2
    q = conv(F_l, weights, "msrm.nab.query", ConvSpec.pointwise(channels, half)).reshape(half, -1)
    k = conv(F_l, weights, "msrm.nab.key", ConvSpec.pointwise(channels, half)).reshape(half, -1)
    v = conv(F_l, weights, "msrm.nab.value", ConvSpec.pointwise(channels, channels)).reshape(channels, -1)
    attn = softmax((q.T @ k) / DTYPE(np.sqrt(half)), axis=-1)
    return attn, v


def non_local(F_l, cfg: NabConfig, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """F_g = gamma * (attention . V) + F_l."""
    F_l = as_tensor(F_l)
    attn, v = attention_map(F_l, weights)
    out = (v @ attn.T).reshape(F_l.shape)
    return as_tensor(DTYPE(cfg.gamma) * out + F_l)


# ---------------- memory read ---------------- #

@dataclass(frozen=True)
class MemoryBank:
    """Keys and values embedded from the memory (F_g) and the query (F_t)."""
    K_M: np.ndarray
    V_M: np.ndarray
    K_Q: np.ndarray
    V_Q: np.ndarray

    def __post_init__(self):
        if self.K_M.shape[0] != self.K_Q.shape[0]:
            raise ShapeError(f"memory keys have {self.K_M.shape[0]} channels, query keys {self.K_Q.shape[0]}")
        if self.V_M.shape[0] != self.V_Q.shape[0]:
            raise ShapeError(f"memory values have {self.V_M.shape[0]} channels, query values {self.V_Q.shape[0]}")


def build_memory(F_t, F_g, weights: Mapping[str, np.ndarray]) -> MemoryBank:
    F_t, F_g = as_tensor(F_t), as_tensor(F_g)
    check_rank(F_t, 3, "F_t")
    check_rank(F_g, 3, "F_g")
    if F_t.shape[0] != F_g.shape[0]:
        raise ShapeError(f"F_t has {F_t.shape[0]} channels, F_g has {F_g.shape[0]} (dimension 0)")
    channels = F_t.shape[0]
    half = channels // 2
    embed = ConvSpec.pointwise(channels, half)
    return MemoryBank(
        K_M=conv(F_g, weights, "msrm.mem.key_m", embed),
        V_M=conv(F_g, weights, "msrm.mem.value_m", embed),
        K_Q=conv(F_t, weights, "msrm.mem.key_q", embed),
        V_Q=conv(F_t, weights, "msrm.mem.value_q", embed),
    )


def read_memory(bank: MemoryBank) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns (read [Cv,Hq,Wq], M_s [Nq,Nm]). Row j of M_s is a softmax over memory
    positions of <K_M[:,i], K_Q[:,j]> / sqrt(Ck).
    """
    key_channels = bank.K_M.shape[0]
    k_m = bank.K_M.reshape(key_channels, -1)
    k_q = bank.K_Q.reshape(key_channels, -1)
    v_m = bank.V_M.reshape(bank.V_M.shape[0], -1)
    if k_m.shape[1] != v_m.shape[1]:
        raise ShapeError(f"memory keys cover {k_m.shape[1]} positions, values {v_m.shape[1]}")
    affinity = (k_q.T @ k_m) / DTYPE(np.sqrt(key_channels))
    m_s = softmax(affinity, axis=1)
    read = (v_m @ m_s.T).reshape((v_m.shape[0],) + bank.K_Q.shape[1:])
    return as_tensor(read), m_s


def memory_read(F_t, F_g, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """F_S = Matching(Concat[read, V_Q])."""
    bank = build_memory(F_t, F_g, weights)
    read, _ = read_memory(bank)
    channels = as_tensor(F_t).shape[0]
    return conv(concat([read, bank.V_Q]), weights, "msrm.match",
                ConvSpec.pointwise(read.shape[0] + bank.V_Q.shape[0], channels))


def msrm_forward(F_c, cfg: MsrmConfig, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Spatial branch output F_S, honouring the nab / meu switches."""
    F_c = as_tensor(F_c)
    check_rank(F_c, 4, "F_c [T,C,H,W]")
    F_t = F_c[-1]
    if not cfg.enabled:
        return F_t
    F_l = fuse_references(F_c, weights)
    F_g = non_local(F_l, cfg.attention, weights) if cfg.nab else F_l
    F_S = memory_read(F_t, F_g, weights) if cfg.meu else F_g
    logger.debug("msrm: F_S %s (nab=%s, meu=%s)", F_S.shape, cfg.nab, cfg.meu)
    return F_S
