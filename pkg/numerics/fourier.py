# numerics/fourier.py
# 2D discrete Fourier transform (radix-2 and direct paths) and amplitude/phase algebra

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from guardrails import ShapeError, check_rank, check_same_shape
from numerics.tensor import as_tensor

logger = logging.getLogger(__name__)

Method = Literal["auto", "fft", "direct"]

# |im| at or below this fraction of the plane's peak magnitude is read as +0
PHASE_SNAP = 1e-9


@dataclass(frozen=True)
class ComplexMap:
    """Per-channel spectrum, index (u, v) = (vertical, horizontal) bin."""
    re: np.ndarray  # [C, H, W] float64
    im: np.ndarray

    def __post_init__(self):
        check_same_shape(self.re, self.im, ("re", "im"))
        check_rank(self.re, 3, "ComplexMap")

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ComplexMap":
        return cls(re=np.ascontiguousarray(z.real, dtype=np.float64),
                   im=np.ascontiguousarray(z.imag, dtype=np.float64))

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def shape(self) -> tuple:
        return self.re.shape


@dataclass(frozen=True)
class PolarMap:
    amp: np.ndarray  # >= 0
    phase: np.ndarray  # in [-pi, pi]

    def __post_init__(self):
        check_same_shape(self.amp, self.phase, ("amp", "phase"))


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_last_axis(a: np.ndarray, inverse: bool) -> np.ndarray:
    """Iterative radix-2 DIT butterflies along the last axis, vectorised over the rest."""
    n = a.shape[-1]
    x = a[..., _bit_reverse_indices(n)].astype(np.complex128)
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        blocks = x.reshape(x.shape[:-1] + (n // m, m))
        u = blocks[..., :half].copy()
        t = blocks[..., half:] * twiddle
        blocks[..., :half] = u + t
        blocks[..., half:] = u - t
        x = blocks.reshape(x.shape)
        m <<= 1
    return x


def _dft_matrix(n: int, inverse: bool) -> np.ndarray:
    k = np.arange(n)
    # reduce the exponent modulo n before scaling keeps twiddles exact-ish for large n
    phase = (np.outer(k, k) % n) * (2.0 * np.pi / n)
    return np.exp((1j if inverse else -1j) * phase)


def _direct_last_axis(a: np.ndarray, inverse: bool) -> np.ndarray:
    return a.astype(np.complex128) @ _dft_matrix(a.shape[-1], inverse).T


def _transform(z: np.ndarray, inverse: bool, method: Method) -> np.ndarray:
    _, height, width = z.shape
    if method == "auto":
        method = "fft" if is_power_of_two(height) and is_power_of_two(width) else "direct"
    if method == "fft":
        if not (is_power_of_two(height) and is_power_of_two(width)):
            raise ShapeError(f"radix-2 path needs power-of-two extents, got {height}x{width}")
        along = _fft_last_axis
    elif method == "direct":
        along = _direct_last_axis
    else:
        raise ValueError(f"unknown transform method {method!r}")
    z = along(z, inverse)  # horizontal (v)
    z = along(z.swapaxes(1, 2), inverse).swapaxes(1, 2)  # vertical (u)
    return z


def dft2(x, method: Method = "auto") -> ComplexMap:
    """
    Forward 2D DFT per channel, unnormalised:
    X(u,v) = sum_h sum_w x(h,w) exp(-j 2pi (h u / H + w v / W)).
    """
    x = as_tensor(x)
    check_rank(x, 3, "dft2 input")
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise ShapeError(f"dft2: spatial extents must be >= 1, got {x.shape[1:]}")
    return ComplexMap.from_complex(_transform(x.astype(np.float64), inverse=False, method=method))


def idft2(spec: ComplexMap, method: Method = "auto") -> np.ndarray:
    """Inverse 2D DFT with 1/(H*W) normalisation; returns the real part as float32."""
    _, height, width = spec.shape
    z = _transform(spec.to_complex(), inverse=True, method=method) / (height * width)
    return as_tensor(z.real)


def to_polar(spec: ComplexMap) -> PolarMap:
    """Amplitude and full-quadrant phase; a zero-amplitude bin has phase 0."""
    re, im = spec.re, spec.im
    amp = np.hypot(re, im)
    scale = amp.max(axis=(1, 2), keepdims=True) if amp.size else 0.0
    im = np.where(np.abs(im) <= PHASE_SNAP * scale, 0.0, im)
    phase = np.arctan2(im, re)
    phase = np.where(amp == 0.0, 0.0, phase)
    return PolarMap(amp=amp, phase=phase)


def from_polar(polar: PolarMap) -> ComplexMap:
    amp = np.asarray(polar.amp, dtype=np.float64)
    phase = np.asarray(polar.phase, dtype=np.float64)
    return ComplexMap(re=amp * np.cos(phase), im=amp * np.sin(phase))
