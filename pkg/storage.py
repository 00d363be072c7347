# storage.py
# Atomic file writes shared by every writer in the package

import os
import tempfile
from pathlib import Path
from typing import Union

from guardrails import StorageError


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename over `path`."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise StorageError(f"cannot write: {e.strerror or e}", path)


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
