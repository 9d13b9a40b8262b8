"""Frame-difference event extraction from ordinary video.

A window of ``W`` consecutive frames yields ``W - 1`` binary difference maps;
a pixel fires when the absolute change strictly exceeds the threshold.  The
maps are summed into a count grid and normalized like any event stream.

Binary containers (little-endian):

``VID1`` frame dump::

    magic b"VID1" | u32 frame count | u16 height | u16 width | count*H*W u8

``EVF1`` event-instance container::

    magic b"EVF1" | u32 count | u16 height | u16 width | u8 has_labels | 3 pad
    count * (u32 start, u32 end)          source frame ranges
    count * H * W float32                 event frames
    count * u8                            labels, present iff has_labels
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .events import normalize_grid

DEFAULT_WINDOW = 16
DEFAULT_THRESHOLD = 25

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class EventInstance:
    frame: np.ndarray
    label: int | None
    source_range: tuple[int, int]


def to_gray(frame: np.ndarray) -> np.ndarray:
    """Convert an ``(H, W, 3)`` RGB frame to ``uint8`` luma; gray input passes through."""
    frame = np.asarray(frame)
    if frame.ndim == 3:
        frame = np.rint(frame[..., :3].astype(np.float64) @ _LUMA)
    elif frame.ndim != 2:
        raise DimensionError(f"expected HxW or HxWx3 frame, got shape {frame.shape}")
    elif frame.dtype.kind == "f":
        frame = np.rint(frame)
    return np.clip(frame, 0, 255).astype(np.uint8)


def frame_diff(prev: np.ndarray, curr: np.ndarray, threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
    prev, curr = np.asarray(prev), np.asarray(curr)
    if prev.shape != curr.shape:
        raise DimensionError(f"frame shapes differ: {prev.shape} vs {curr.shape}")
    if not 0 <= threshold <= 255:
        raise ConfigError(f"threshold must lie in [0, 255], got {threshold}")
    diff = np.abs(curr.astype(np.int32) - prev.astype(np.int32))
    return (diff > threshold).astype(np.uint8)


def diff_counts(frames: Sequence[np.ndarray], threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
    """Sum of the binary difference maps between consecutive frames."""
    if len(frames) < 2:
        raise ConfigError(f"need at least 2 frames, got {len(frames)}")
    counts = np.zeros(np.shape(frames[0]), dtype=np.int64)
    for prev, curr in zip(frames[:-1], frames[1:]):
        counts += frame_diff(prev, curr, threshold)
    return counts


def build_event_instance(frames: Sequence[np.ndarray], threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
    return normalize_grid(diff_counts([to_gray(f) for f in frames], threshold))


def majority_vote_label(window_labels: Sequence[int]) -> int:
    """Majority label of a window; an exact tie resolves to abnormal (1)."""
    labels = np.asarray(window_labels)
    if labels.size == 0:
        raise DataError("empty label window")
    if not np.isin(labels, (0, 1)).all():
        raise DataError(f"labels must be 0 or 1, got {sorted(set(labels.tolist()))}")
    ones = int(labels.sum())
    return int(2 * ones >= labels.size)


def segment_video(
    frames: Sequence[np.ndarray],
    labels: Sequence[int] | None = None,
    window: int = DEFAULT_WINDOW,
    stride: int | None = None,
    threshold: int = DEFAULT_THRESHOLD,
) -> list[EventInstance]:
    """Cut a clip into event instances; a trailing partial window is dropped."""
    stride = window if stride is None else stride
    if window < 2:
        raise ConfigError(f"window must be >= 2, got {window}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    n = len(frames)
    if n == 0:
        raise DataError("empty clip")
    if n < window:
        raise DataError(f"clip has {n} frames, shorter than window {window}")
    if labels is not None and len(labels) != n:
        raise DataError(f"{len(labels)} labels for {n} frames")
    gray = [to_gray(f) for f in frames]
    shape = gray[0].shape
    if any(g.shape != shape for g in gray):
        raise DimensionError("all frames must share dimensions")

    out = []
    for start in range(0, n - window + 1, stride):
        stop = start + window
        lab = majority_vote_label(labels[start:stop]) if labels is not None else None
        out.append(EventInstance(normalize_grid(diff_counts(gray[start:stop], threshold)), lab, (start, stop)))
    return out


# -- containers -------------------------------------------------------------

def write_frame_dump(frames, path) -> None:
    arr = np.stack([to_gray(f) for f in frames])
    n, h, w = arr.shape
    Path(path).write_bytes(b"VID1" + struct.pack("<IHH", n, h, w) + arr.tobytes())


def read_frame_dump(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != b"VID1" or len(buf) < 12:
        raise DataError(f"{path}: not a VID1 frame dump")
    n, h, w = struct.unpack_from("<IHH", buf, 4)
    body = buf[12:]
    if len(body) != n * h * w:
        raise DataError(f"{path}: expected {n * h * w} frame bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(n, h, w).copy()


def read_labels(path) -> list[int]:
    labels = [int(ln) for ln in Path(path).read_text().split()]
    if any(v not in (0, 1) for v in labels):
        raise DataError(f"{path}: labels must be 0 or 1")
    return labels


def write_instances(instances: Sequence[EventInstance], path) -> None:
    if not instances:
        raise DataError("no instances to write")
    h, w = instances[0].frame.shape
    has_labels = all(inst.label is not None for inst in instances)
    parts = [b"EVF1", struct.pack("<IHHB3x", len(instances), h, w, int(has_labels))]
    parts.append(np.array([inst.source_range for inst in instances], dtype="<u4").tobytes())
    parts.append(np.stack([inst.frame for inst in instances]).astype("<f4").tobytes())
    if has_labels:
        parts.append(np.array([inst.label for inst in instances], dtype=np.uint8).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_instances(path) -> list[EventInstance]:
    buf = Path(path).read_bytes()
    if buf[:4] != b"EVF1":
        raise DataError(f"{path}: not an EVF1 container")
    n, h, w, has_labels = struct.unpack_from("<IHHB3x", buf, 4)
    off = 16
    ranges = np.frombuffer(buf, dtype="<u4", count=2 * n, offset=off).reshape(n, 2)
    off += 8 * n
    frames = np.frombuffer(buf, dtype="<f4", count=n * h * w, offset=off).reshape(n, h, w)
    off += 4 * n * h * w
    labels = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off) if has_labels else [None] * n
    if has_labels:
        off += n
    if off != len(buf):
        raise DataError(f"{path}: trailing or missing bytes in EVF1 container")
    return [
        EventInstance(frames[i].astype(np.float64), None if labels[i] is None else int(labels[i]),
                      (int(ranges[i, 0]), int(ranges[i, 1])))
        for i in range(n)
    ]
