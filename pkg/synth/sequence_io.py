# synth/sequence_io.py
# On-disk sequences: binary PGM frames plus JSON-lines annotations and detections

import io
import logging
import re
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from pydantic import ValidationError

from guardrails import SequenceFormatError, ShapeError, StorageError
from schemas.boxes import BBox, BoxRecord, FrameRecord
from schemas.window import FrameWindow
from storage import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

ANNOTATIONS = "annotations.jsonl"
FRAME_PATTERN = re.compile(r"^frame_(\d+)\.pgm$")
MAXVAL = 255

PathLike = Union[str, Path]


# ---------------- PGM ---------------- #

def encode_pgm(frame: np.ndarray) -> bytes:
    """[H,W] in [0,1] -> binary P5 bytes, maxval 255, round(x * 255)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ShapeError(f"PGM frame: expected [H,W], got shape {frame.shape}")
    pixels = np.clip(np.rint(frame * MAXVAL), 0, MAXVAL).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PPM")
    return buf.getvalue()


def _header_tokens(data: bytes, path: Path) -> Tuple[List[Tuple[bytes, int]], int]:
    """Read magic, width, height, maxval; returns the tokens with their offsets and the payload offset."""
    tokens: List[Tuple[bytes, int]] = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= len(data):
            raise SequenceFormatError("truncated PGM header", path, i)
        start = i
        while i < len(data) and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        tokens.append((data[start:i], start))
    if i >= len(data) or not data[i:i + 1].isspace():
        raise SequenceFormatError("missing whitespace after PGM header", path, i)
    return tokens, i + 1


def decode_pgm(data: bytes, path: Path = Path("<bytes>")) -> np.ndarray:
    """Binary P5 bytes -> [H,W] float32 in [0,1]."""
    if data[:2] != b"P5":
        raise SequenceFormatError("bad magic, expected 'P5'", path, 0)
    tokens, payload_at = _header_tokens(data, path)
    if tokens[0][0] != b"P5":
        raise SequenceFormatError("bad magic, expected 'P5'", path, 0)
    fields = {}
    for (raw, offset), name in zip(tokens[1:], ("width", "height", "maxval")):
        if not raw.isdigit() or int(raw) < 1:
            raise SequenceFormatError(f"PGM {name} is not a positive integer: {raw!r}", path, offset)
        fields[name] = int(raw)
    if fields["maxval"] != MAXVAL:
        raise SequenceFormatError(f"PGM maxval must be {MAXVAL}, got {fields['maxval']}", path, tokens[3][1])
    expected = fields["width"] * fields["height"]
    available = len(data) - payload_at
    if available < expected:
        raise SequenceFormatError(
            f"truncated PGM payload: {available} of {expected} bytes", path, payload_at + available
        )
    with Image.open(io.BytesIO(data)) as img:
        pixels = np.asarray(img, dtype=np.uint8)
    return (pixels.astype(np.float32) / np.float32(MAXVAL)).astype(np.float32)


def read_pgm(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read frame: {e.strerror or e}", path)
    return decode_pgm(data, path)


# ---------------- JSON lines ---------------- #

def write_records(path: PathLike, records: Iterable[FrameRecord]) -> None:
    lines = [rec.to_json_line() for rec in records]
    atomic_write_text(Path(path), "".join(line + "\n" for line in lines))


def read_records(path: PathLike) -> List[FrameRecord]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read records: {e.strerror or e}", path)
    records = []
    offset = 0
    for line in data.splitlines(keepends=True):
        stripped = line.strip()
        if stripped:
            try:
                records.append(FrameRecord.model_validate_json(stripped))
            except ValidationError as e:
                first = e.errors()[0]
                where = ".".join(str(p) for p in first.get("loc", ()))
                raise SequenceFormatError(f"bad record ({where}: {first.get('msg')})", path, offset)
        offset += len(line)
    return records


# ---------------- sequences ---------------- #

def write_sequence(directory: PathLike, frames: np.ndarray, boxes: Sequence[Sequence[BBox]],
                   sequence: str = "") -> None:
    """frame_<i>.pgm for every frame and one annotation record per frame."""
    directory = Path(directory)
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise ShapeError(f"sequence frames: expected [N,H,W], got shape {frames.shape}")
    if len(boxes) != frames.shape[0]:
        raise ShapeError(f"{len(boxes)} annotation frames for {frames.shape[0]} image frames")
    for i, frame in enumerate(frames):
        atomic_write_bytes(directory / f"frame_{i}.pgm", encode_pgm(frame))
    records = [
        FrameRecord(frame_id=i, sequence=sequence or directory.name,
                    boxes=[BoxRecord.from_box(b, with_score=False) for b in frame_boxes])
        for i, frame_boxes in enumerate(boxes)
    ]
    write_records(directory / ANNOTATIONS, records)
    logger.debug("wrote %d frames to %s", frames.shape[0], directory)


def frame_paths(directory: PathLike) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise StorageError("not a sequence directory", directory)
    found = []
    for p in directory.iterdir():
        m = FRAME_PATTERN.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    found.sort()
    for expected, (index, p) in enumerate(found):
        if index != expected:
            raise SequenceFormatError(f"frame_{expected}.pgm is missing", directory)
    return [p for _, p in found]


def read_annotations(directory: PathLike) -> Dict[int, List[BBox]]:
    """{frame_id: boxes}; a missing annotations file means no boxes anywhere."""
    path = Path(directory) / ANNOTATIONS
    if not path.exists():
        return {}
    annotations: Dict[int, List[BBox]] = {}
    for rec in read_records(path):
        annotations.setdefault(rec.frame_id, []).extend(b.to_box() for b in rec.boxes)
    return annotations


def read_frames(directory: PathLike) -> np.ndarray:
    paths = frame_paths(directory)
    if not paths:
        return np.zeros((0, 0, 0), dtype=np.float32)
    frames = [read_pgm(p) for p in paths]
    for p, f in zip(paths, frames):
        if f.shape != frames[0].shape:
            raise ShapeError(f"{p.name}: extent {f.shape} differs from {paths[0].name} {frames[0].shape}")
    return np.stack(frames)


def read_sequence(directory: PathLike, window: int) -> Iterator[FrameWindow]:
    """One window per keyframe k >= window - 1, holding frames k-window+1 .. k."""
    directory = Path(directory)
    frames = read_frames(directory)
    annotations = read_annotations(directory)
    if frames.shape[0] < window:
        raise ShapeError(f"{directory}: {frames.shape[0]} frames, need at least {window} for one window")
    for k in range(window - 1, frames.shape[0]):
        ids = list(range(k - window + 1, k + 1))
        yield FrameWindow(frames=frames[ids[0]:k + 1], gts=annotations.get(k, []), frame_ids=ids,
                          sequence=directory.name)


def sequence_dirs(root: PathLike) -> List[Path]:
    """The sequence directories under `root`, or `root` itself when it holds frames."""
    root = Path(root)
    if not root.is_dir():
        raise StorageError("not a directory", root)
    if any(FRAME_PATTERN.match(p.name) for p in root.iterdir()):
        return [root]
    return sorted((p for p in root.iterdir() if p.is_dir() and p.name.startswith("seq_")),
                  key=lambda p: (len(p.name), p.name))
