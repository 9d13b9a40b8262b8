"""Event streams and the single-frame grayscale representation.

Coordinates follow ``x = column``, ``y = row``; every grid and frame is stored
row-major with shape ``(height, width)``.

EVT1 binary layout (all little-endian)::

    offset  size  field
    0       4     magic b"EVT1"
    4       2     version (u16, currently 1)
    6       2     width (u16)
    8       2     height (u16)
    10      6     reserved, zero
    16      13*n  packed records: x u16, y u16, t u64 (microseconds), p i8

The CSV mirror carries ``# width=<w> height=<h>`` on its first line followed
by one ``x,y,t,p`` record per line.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

DEFAULT_CLAMP = 10

EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])
EVT1_MAGIC = b"EVT1"
EVT1_VERSION = 1
_HEADER = np.dtype([("magic", "S4"), ("version", "<u2"), ("width", "<u2"), ("height", "<u2"), ("reserved", "V6")])


@dataclass(frozen=True)
class EventStream:
    """Asynchronous events ``(x, y, t, p)`` on a ``width`` x ``height`` sensor."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.int64).ravel()
        y = np.asarray(self.y, dtype=np.int64).ravel()
        t = np.asarray(self.t, dtype=np.int64).ravel()
        p = np.asarray(self.p, dtype=np.int64).ravel()
        if not (len(x) == len(y) == len(t) == len(p)):
            raise DataError("event field lengths differ")
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"sensor size must be positive, got {self.width}x{self.height}")
        for name, arr in (("x", x), ("y", y), ("t", t), ("p", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height)

    def __len__(self) -> int:
        return len(self.x)

    def validate(self) -> None:
        """Raise :class:`DataError` if any stream invariant is violated."""
        bad = (self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(
                f"event {i} at (x={self.x[i]}, y={self.y[i]}) outside "
                f"[0,{self.width})x[0,{self.height})"
            )
        if len(self.t) > 1 and np.any(np.diff(self.t) < 0):
            raise DataError("timestamps must be non-decreasing")
        if not np.all((self.p == 1) | (self.p == -1)):
            raise DataError("polarity must be -1 or +1")


def aggregate_events(stream: EventStream) -> np.ndarray:
    """Count events per pixel over all timestamps and both polarities.

    Each event adds one to its pixel regardless of polarity, so the result is a
    non-negative ``(height, width)`` integer grid.
    """
    stream.validate()
    flat = np.bincount(stream.y * stream.width + stream.x, minlength=stream.width * stream.height)
    return flat.reshape(stream.height, stream.width).astype(np.int64)


def clamp_counts(grid: np.ndarray, cap: int = DEFAULT_CLAMP) -> np.ndarray:
    if int(cap) != cap or cap < 1:
        raise ConfigError(f"clamp cap must be a positive integer, got {cap!r}")
    return np.minimum(np.asarray(grid), int(cap))


def normalize_grid(grid: np.ndarray) -> np.ndarray:
    """Map counts to ``[0, 1)`` by dividing by ``max + 1``."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size and grid.min() < 0:
        raise DataError("count grid must be non-negative")
    top = grid.max() if grid.size else 0.0
    return grid / (top + 1.0)


def event_frame(stream: EventStream, cap: int | None = DEFAULT_CLAMP) -> np.ndarray:
    """Aggregate, optionally clamp, then normalize a stream into one frame."""
    grid = aggregate_events(stream)
    if cap is not None:
        grid = clamp_counts(grid, cap)
    return normalize_grid(grid)


# -- file formats -----------------------------------------------------------

def write_evt1(stream: EventStream, path) -> None:
    Path(path).write_bytes(evt1_bytes(stream))


def evt1_bytes(stream: EventStream) -> bytes:
    stream.validate()
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise DataError("EVT1 supports sensors up to 65535 pixels per side")
    header = np.zeros(1, dtype=_HEADER)
    header["magic"] = EVT1_MAGIC
    header["version"] = EVT1_VERSION
    header["width"] = stream.width
    header["height"] = stream.height
    rec = np.zeros(len(stream), dtype=EVENT_DTYPE)
    rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, stream.p
    return header.tobytes() + rec.tobytes()


def read_evt1(path) -> EventStream:
    return parse_evt1(Path(path).read_bytes())


def parse_evt1(buf: bytes) -> EventStream:
    if len(buf) < _HEADER.itemsize:
        raise DataError("EVT1 file shorter than its header")
    header = np.frombuffer(buf, dtype=_HEADER, count=1)[0]
    if header["magic"] != EVT1_MAGIC:
        raise DataError(f"bad EVT1 magic {bytes(header['magic'])!r}")
    if header["version"] != EVT1_VERSION:
        raise DataError(f"unsupported EVT1 version {int(header['version'])}")
    body = buf[_HEADER.itemsize:]
    if len(body) % EVENT_DTYPE.itemsize:
        raise DataError("EVT1 payload is not a whole number of records")
    rec = np.frombuffer(body, dtype=EVENT_DTYPE)
    stream = EventStream(rec["x"], rec["y"], rec["t"].astype(np.int64), rec["p"],
                         int(header["width"]), int(header["height"]))
    stream.validate()
    return stream


def write_events_csv(stream: EventStream, path) -> None:
    out = io.StringIO()
    out.write(f"# width={stream.width} height={stream.height}\n")
    for row in zip(stream.x.tolist(), stream.y.tolist(), stream.t.tolist(), stream.p.tolist()):
        out.write("%d,%d,%d,%d\n" % row)
    Path(path).write_text(out.getvalue())


def read_events_csv(path) -> EventStream:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DataError("CSV event file must start with a '# width=W height=H' line")
    meta = dict(tok.split("=", 1) for tok in lines[0].lstrip("#").split())
    try:
        width, height = int(meta["width"]), int(meta["height"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad CSV header {lines[0]!r}") from exc
    rows = [ln for ln in lines[1:] if ln.strip()]
    data = np.array([[int(v) for v in ln.split(",")] for ln in rows], dtype=np.int64).reshape(-1, 4)
    stream = EventStream(data[:, 0], data[:, 1], data[:, 2], data[:, 3], width, height)
    stream.validate()
    return stream
