"""Events, event streams, the EVT1/CSV file formats and time windowing.

Timestamps are integer microseconds throughout. Streams carry their own
sensor geometry; nothing here infers width or height from the data.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    BadRecord,
    EmptyStream,
    MalformedHeader,
    NonMonotonicTimestamp,
)

MAGIC = b"EVT1"
HEADER = struct.Struct("<4sHHQ")
RECORD_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1"), ("pad", "V3")])
assert RECORD_DTYPE.itemsize == 16
CSV_HEADER = "x,y,t,p"

_T_MAX = np.iinfo(np.int64).max


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


def _frozen(a, dtype):
    if isinstance(a, np.ndarray) and a.dtype == dtype and not a.flags.writeable:
        return a
    a = np.array(a, dtype=dtype, copy=True).ravel()
    a.flags.writeable = False
    return a


def _first_violation(x, y, t, p, width, height):
    """Index and reason of the first invalid record, or None."""
    bad = (x >= width) | (y >= height)
    pol = (p != 1) & (p != -1)
    worst = np.flatnonzero(bad | pol)
    dec = np.flatnonzero(np.diff(t) < 0) + 1 if len(t) > 1 else np.zeros(0, dtype=np.int64)
    first_bad = int(worst[0]) if worst.size else None
    first_dec = int(dec[0]) if dec.size else None
    if first_bad is not None and (first_dec is None or first_bad <= first_dec):
        reason = "out-of-bounds" if bad[first_bad] else "polarity must be +1 or -1"
        return first_bad, reason
    if first_dec is not None:
        return first_dec, "non-monotonic"
    return None


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted events of a ``width`` x ``height`` sensor, stored columnar."""

    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        if not (0 < self.width <= 0xFFFF and 0 < self.height <= 0xFFFF):
            raise ValueError(f"invalid geometry {self.width}x{self.height}")
        x = _frozen(self.x, np.uint16)
        y = _frozen(self.y, np.uint16)
        t = _frozen(self.t, np.int64)
        p = _frozen(self.p, np.int8)
        if not (len(x) == len(y) == len(t) == len(p)):
            raise ValueError("event columns differ in length")
        if len(t) and t[0] < 0:
            raise BadRecord(0, "negative timestamp")
        v = _first_violation(x, y, t, p, self.width, self.height)
        if v is not None:
            idx, reason = v
            if reason == "non-monotonic":
                raise NonMonotonicTimestamp(idx)
            raise BadRecord(idx, reason)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_events(cls, events: Sequence, width: int, height: int) -> "EventStream":
        arr = np.asarray([tuple(e) for e in events], dtype=np.int64).reshape(-1, 4)
        return cls(width, height, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0)
        return cls(width, height, z, z, z, z)

    def __len__(self):
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for row in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(*row)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return EventStream(self.width, self.height, self.x[i], self.y[i], self.t[i], self.p[i])
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    @property
    def events(self) -> list:
        return list(self)

    def same_as(self, other: "EventStream") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )


@dataclass(frozen=True, eq=False)
class EventWindow:
    """Events with ``t0 <= t < t0 + dt``.

    ``partial`` marks a window whose nominal end lies past the end of the
    tiled span. Pass ``check=False`` to skip the half-open containment test.
    """

    t0: int
    dt: int
    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    partial: bool = False
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        for name, dtype in (("x", np.uint16), ("y", np.uint16), ("t", np.int64), ("p", np.int8)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        if self.check and len(self.t):
            if self.t.min() < self.t0 or self.t.max() >= self.t0 + self.dt:
                raise ValueError("window events outside [t0, t0 + dt)")

    @classmethod
    def from_stream(cls, stream: EventStream, t0: int, dt: int, partial=False) -> "EventWindow":
        lo, hi = np.searchsorted(stream.t, [t0, t0 + dt], side="left")
        return cls(t0, dt, stream.width, stream.height, stream.x[lo:hi], stream.y[lo:hi],
                   stream.t[lo:hi], stream.p[lo:hi], partial)

    def __len__(self):
        return len(self.t)

    @property
    def t1(self) -> int:
        return self.t0 + self.dt

    @property
    def events(self) -> list:
        return [Event(*r) for r in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist())]


# -- file formats -----------------------------------------------------------

def parse_events(data: bytes, format: str = "binary", width: Optional[int] = None,
                 height: Optional[int] = None) -> EventStream:
    """Decode an EVT1 or CSV byte string.

    CSV carries no geometry, so ``width`` and ``height`` are required for it.
    For EVT1 they are read from the header (and must agree if also given).
    """
    if format == "binary":
        return _parse_binary(bytes(data), width, height)
    if format == "csv":
        if width is None or height is None:
            raise MalformedHeader("CSV event files need explicit width and height")
        return _parse_csv(bytes(data), width, height)
    raise ValueError(f"unknown event format {format!r}")


def write_events(stream: EventStream, format: str = "binary") -> bytes:
    if format == "binary":
        rec = np.zeros(len(stream), dtype=RECORD_DTYPE)
        rec["x"] = stream.x
        rec["y"] = stream.y
        rec["t"] = stream.t
        rec["p"] = stream.p
        return HEADER.pack(MAGIC, stream.width, stream.height, len(stream)) + rec.tobytes()
    if format == "csv":
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for ev in stream:
            buf.write(f"{ev.x},{ev.y},{ev.t},{ev.p}\n")
        return buf.getvalue().encode("ascii")
    raise ValueError(f"unknown event format {format!r}")


def _parse_binary(data, width, height):
    if len(data) < HEADER.size:
        raise MalformedHeader("file shorter than EVT1 header")
    magic, w, h, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}")
    if w == 0 or h == 0:
        raise MalformedHeader("zero sensor dimension")
    if (width is not None and width != w) or (height is not None and height != h):
        raise MalformedHeader(f"header geometry {w}x{h} disagrees with {width}x{height}")
    body = len(data) - HEADER.size
    if body != count * RECORD_DTYPE.itemsize:
        raise MalformedHeader(f"header declares {count} records, body holds {body} bytes")
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    pad = np.frombuffer(data, dtype=np.uint8, count=16 * count, offset=HEADER.size).reshape(-1, 16)[:, 13:]
    bad_pad = np.flatnonzero(pad.any(axis=1))
    bad_t = np.flatnonzero(rec["t"] > _T_MAX)
    x = rec["x"]
    y = rec["y"]
    p = rec["p"]
    t = rec["t"].astype(np.int64)
    v = _first_violation(x, y, t, p, w, h)
    firsts = [(int(bad_pad[0]), "nonzero padding")] if bad_pad.size else []
    if bad_t.size:
        firsts.append((int(bad_t[0]), "timestamp exceeds int64 range"))
    if v is not None:
        firsts.append(v)
    if firsts:
        idx, reason = min(firsts)
        if reason == "non-monotonic":
            raise NonMonotonicTimestamp(idx)
        raise BadRecord(idx, reason)
    return EventStream(w, h, x, y, t, p)


def _parse_csv(data, width, height):
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedHeader("CSV must be ASCII") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise MalformedHeader(f"CSV header must be {CSV_HEADER!r}")
    rows = []
    for i, line in enumerate(lines[1:]):
        parts = line.strip().split(",")
        if len(parts) != 4:
            raise BadRecord(i, f"expected 4 fields, got {len(parts)}")
        try:
            vals = [int(s) for s in parts]
        except ValueError:
            raise BadRecord(i, "fields must be decimal integers") from None
        x, y, t, p = vals
        if x < 0 or y < 0 or x >= width or y >= height:
            raise BadRecord(i, "out-of-bounds")
        if p not in (1, -1):
            raise BadRecord(i, "polarity must be +1 or -1")
        if t < 0 or t > _T_MAX:
            raise BadRecord(i, "timestamp out of range")
        if rows and t < rows[-1][2]:
            raise NonMonotonicTimestamp(i)
        rows.append(vals)
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    return EventStream(width, height, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def read_events(path, format: Optional[str] = None, width=None, height=None) -> EventStream:
    path = str(path)
    if format is None:
        format = "csv" if path.endswith(".csv") else "binary"
    with open(path, "rb") as f:
        return parse_events(f.read(), format, width, height)


def save_events(path, stream: EventStream, format: Optional[str] = None) -> None:
    path = str(path)
    if format is None:
        format = "csv" if path.endswith(".csv") else "binary"
    with open(path, "wb") as f:
        f.write(write_events(stream, format))


# -- windowing --------------------------------------------------------------

def window_events(stream: EventStream, dt: int, t_start: Optional[int] = None,
                  t_end: Optional[int] = None) -> list:
    """Tile the stream into non-overlapping half-open windows of ``dt`` µs.

    Windows start at ``t_start`` (default: first event) and continue until
    both ``t_end`` (default: last event + 1) and the last event are covered.
    A window reaching past ``t_end`` is flagged ``partial``.
    """
    dt = int(dt)
    if dt <= 0:
        raise ValueError("window duration must be positive")
    if len(stream) == 0 and (t_start is None or t_end is None):
        raise EmptyStream("cannot window an empty stream without an explicit span")
    if t_start is None:
        t_start = int(stream.t[0])
    if len(stream) and stream.t[0] < t_start:
        raise ValueError("t_start lies after the first event")
    last = int(stream.t[-1]) + 1 if len(stream) else t_start
    if t_end is None:
        t_end = last
    stop = max(int(t_end), last)
    n = max(1, -(-(stop - t_start) // dt))
    starts = t_start + dt * np.arange(n + 1, dtype=np.int64)
    cuts = np.searchsorted(stream.t, starts, side="left")
    windows = []
    for i in range(n):
        lo, hi = cuts[i], cuts[i + 1]
        t0 = int(starts[i])
        windows.append(EventWindow(t0, dt, stream.width, stream.height, stream.x[lo:hi],
                                   stream.y[lo:hi], stream.t[lo:hi], stream.p[lo:hi],
                                   partial=t0 + dt > t_end, check=False))
    return windows


def event_mask(window) -> np.ndarray:
    """Boolean H x W mask of pixels with at least one event in the window."""
    mask = np.zeros((window.height, window.width), dtype=bool)
    mask[window.y.astype(np.intp), window.x.astype(np.intp)] = True
    return mask
