# network/weights.py
# Named-tensor parameter store, seeded initialisation and the TRDW binary format

import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, Literal, Mapping, Optional, Tuple, Union

import numpy as np

from guardrails import StorageError, WeightError, WeightFormatError
from storage import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"TRDW"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class ParamSpec:
    """How to create one named tensor."""
    shape: Tuple[int, ...]
    init: Literal["fan_in", "zeros", "ones", "const"] = "fan_in"
    fan_in: int = 1
    value: float = 0.0


class WeightStore(Mapping):
    """
    Ordered, read-only map name -> float32 tensor.

    Names are dotted paths; the first component names the module
    ("backbone", "msrm", ...) and is used in diagnostics.
    """

    def __init__(self, tensors: Optional[Mapping[str, np.ndarray]] = None):
        self._tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, value in (tensors or {}).items():
            arr = np.ascontiguousarray(value, dtype=np.float32)
            arr.setflags(write=False)
            self._tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            module = name.split(".", 1)[0]
            raise WeightError(f"module '{module}': missing weight tensor '{name}'") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        return f"WeightStore({len(self)} tensors, {self.num_params()} params)"

    def replace(self, **updates: np.ndarray) -> "WeightStore":
        """Copy with some tensors swapped; keys use '__' for '.' (a__b -> a.b)."""
        tensors = OrderedDict(self._tensors)
        for key, value in updates.items():
            tensors[key.replace("__", ".")] = value
        return WeightStore(tensors)

    def updated(self, tensors: Mapping[str, np.ndarray]) -> "WeightStore":
        merged = OrderedDict(self._tensors)
        merged.update(tensors)
        return WeightStore(merged)

    def num_params(self, prefix: str = "") -> int:
        return int(sum(t.size for n, t in self._tensors.items() if n.startswith(prefix)))

    def params_by_module(self) -> Dict[str, int]:
        counts: Dict[str, int] = OrderedDict()
        for name, t in self._tensors.items():
            module = name.split(".", 1)[0]
            counts[module] = counts.get(module, 0) + int(t.size)
        return counts

    def validate(self, specs: Mapping[str, ParamSpec]) -> None:
        """Require every spec'd tensor to be present with the right shape."""
        for name, spec in specs.items():
            tensor = self[name]
            if tensor.shape != tuple(spec.shape):
                module = name.split(".", 1)[0]
                raise WeightError(
                    f"module '{module}': tensor '{name}' has shape {tensor.shape}, expected {tuple(spec.shape)}"
                )

    # ---------------- construction ---------------- #

    @classmethod
    def random(cls, specs: Mapping[str, ParamSpec], seed: int) -> "WeightStore":
        """
        Seeded initialisation. fan_in tensors draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
        tensors are drawn in sorted-name order so the result does not depend on
        registration order.
        """
        rng = np.random.default_rng(seed)
        tensors = OrderedDict()
        for name in sorted(specs):
            spec = specs[name]
            if spec.init == "fan_in":
                bound = 1.0 / np.sqrt(max(spec.fan_in, 1))
                tensors[name] = rng.uniform(-bound, bound, size=spec.shape).astype(np.float32)
            elif spec.init == "zeros":
                tensors[name] = np.zeros(spec.shape, dtype=np.float32)
            elif spec.init == "ones":
                tensors[name] = np.ones(spec.shape, dtype=np.float32)
            else:
                tensors[name] = np.full(spec.shape, spec.value, dtype=np.float32)
        return cls(OrderedDict((n, tensors[n]) for n in specs))

    # ---------------- TRDW file format ---------------- #

    def to_bytes(self) -> bytes:
        parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(self))]
        for name, tensor in self._tensors.items():
            encoded = name.encode("utf-8")
            parts.append(_U32.pack(len(encoded)))
            parts.append(encoded)
            parts.append(_U32.pack(tensor.ndim))
            parts.extend(_U32.pack(extent) for extent in tensor.shape)
            parts.append(tensor.astype("<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, path: Optional[Path] = None) -> "WeightStore":
        offset = 0

        def take(n: int, what: str) -> bytes:
            nonlocal offset
            if offset + n > len(data):
                raise WeightFormatError(f"truncated file while reading {what}", path, offset)
            chunk = data[offset:offset + n]
            offset += n
            return chunk

        def u32(what: str) -> int:
            return _U32.unpack(take(4, what))[0]

        if take(4, "magic") != MAGIC:
            raise WeightFormatError("bad magic, expected 'TRDW'", path, 0)
        version = u32("version")
        if version != VERSION:
            raise WeightFormatError(f"unsupported version {version}", path, 4)
        count = u32("entry count")
        tensors = OrderedDict()
        for _ in range(count):
            start = offset
            name_len = u32("name length")
            try:
                name = take(name_len, "name").decode("utf-8")
            except UnicodeDecodeError:
                raise WeightFormatError("entry name is not valid UTF-8", path, start + 4)
            if name in tensors:
                raise WeightFormatError(f"duplicate tensor name '{name}'", path, start)
            rank = u32(f"rank of '{name}'")
            shape = tuple(u32(f"extent of '{name}'") for _ in range(rank))
            size = int(np.prod(shape, dtype=np.int64))
            payload = take(4 * size, f"payload of '{name}'")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
        if offset != len(data):
            raise WeightFormatError(f"{len(data) - offset} trailing bytes after last entry", path, offset)
        return cls(tensors)

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_bytes(Path(path), self.to_bytes())
        logger.info("saved %d tensors to %s", len(self), path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "WeightStore":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as e:
            raise StorageError(f"cannot read weights: {e.strerror or e}", path)
        store = cls.from_bytes(data, path)
        logger.info("loaded %d tensors from %s", len(store), path)
        return store

