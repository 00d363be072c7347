# guardrails.py
# Validation functions and the error hierarchy shared by every module

import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class TridosError(Exception):
    """Base error; `exit_code` is what the CLI returns for it."""
    exit_code = 1


class ShapeError(TridosError, ValueError):
    pass


class InvalidBoxError(TridosError, ValueError):
    pass


class ConfigError(TridosError, ValueError):
    pass


class WeightError(TridosError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class DivergenceError(TridosError):
    pass


class StorageError(TridosError, OSError):
    exit_code = 2

    def __init__(self, message: str, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            message = f"{self.path}: {message}"
        super().__init__(message)

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class SequenceFormatError(StorageError):
    def __init__(self, message: str, path: Optional[Path] = None, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message, path)


class WeightFormatError(StorageError):
    def __init__(self, message: str, path: Optional[Path] = None, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message, path)


def check_rank(x: np.ndarray, rank: int, name: str = "input") -> None:
    """Reject arrays whose rank differs from `rank`."""
    if x.ndim != rank:
        raise ShapeError(f"{name}: expected rank {rank}, got shape {tuple(x.shape)}")


def check_same_shape(a: np.ndarray, b: np.ndarray, names: Sequence[str] = ("a", "b")) -> None:
    """Reject two arrays whose shapes differ, naming the first differing dimension."""
    if a.shape == b.shape:
        return
    if a.ndim != b.ndim:
        raise ShapeError(f"{names[0]} has rank {a.ndim} but {names[1]} has rank {b.ndim}")
    for dim, (sa, sb) in enumerate(zip(a.shape, b.shape)):
        if sa != sb:
            raise ShapeError(f"dimension {dim} mismatch: {names[0]}={sa}, {names[1]}={sb}")


def check_channels(x: np.ndarray, expected: int, name: str = "input") -> None:
    """Reject a [C,H,W] array whose channel count differs from `expected`."""
    if x.shape[0] != expected:
        raise ShapeError(f"{name}: channel dimension 0 is {x.shape[0]}, expected {expected}")


def check_finite(x: np.ndarray, name: str = "input") -> None:
    if not np.all(np.isfinite(x)):
        raise ShapeError(f"{name}: contains non-finite values")


def check_box_values(cx: float, cy: float, w: float, h: float) -> None:
    """Ensure box parameters are finite with positive extents."""
    for label, value in (("cx", cx), ("cy", cy), ("w", w), ("h", h)):
        if not math.isfinite(value):
            raise InvalidBoxError(f"box {label} is not finite: {value}")
    if w <= 0 or h <= 0:
        raise InvalidBoxError(f"box extents must be positive, got w={w}, h={h}")
