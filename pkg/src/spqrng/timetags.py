"""Time-tag event model, TDC binning and the PHTNTAG1 binary stream format.

A stream is stored column-wise (``timestamps``, ``channels``) because every
consumer works on whole arrays; :class:`TimeTag` exists for element access.

Binary layout, little-endian::

    magic        8s   b"PHTNTAG1"
    duration_ps  u64
    bin_width_ps u32
    n_events     u32
    n_events x { timestamp_ps u64, channel u8 }   (9 bytes, no padding)
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator, NamedTuple

import numpy as np

MAGIC = b"PHTNTAG1"
HEADER = struct.Struct("<8sQII")
HEADER_SIZE = HEADER.size  # 24
EVENT_DTYPE = np.dtype([("t", "<u8"), ("ch", "u1")])
EVENT_SIZE = EVENT_DTYPE.itemsize  # 9
DEFAULT_BIN_WIDTH_PS = 176

_INT64_MAX = np.iinfo(np.int64).max
_U32_MAX = 2**32 - 1


class Channel(enum.IntEnum):
    CH1 = 0  # SPD1, transmitted path, bit '0'
    CH2 = 1  # SPD2, reflected path, bit '1'


class TimeTag(NamedTuple):
    timestamp_ps: int
    channel: Channel


class StreamError(ValueError):
    """Base class for time-tag stream problems."""


class SerializationError(StreamError):
    pass


class StreamParseError(StreamError):
    """Parse failure at a byte offset of the source."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagicError(StreamParseError):
    pass


class TruncatedStreamError(StreamParseError):
    pass


class OrderingError(StreamParseError):
    def __init__(self, message: str, offset: int, index: int):
        super().__init__(message, offset)
        self.index = index


def bin_index(timestamp_ps: int, bin_width_ps: int) -> int:
    """Return the TDC bin holding ``timestamp_ps`` (floor convention)."""
    if bin_width_ps <= 0:
        raise ValueError(f"bin_width_ps must be positive, got {bin_width_ps}")
    if timestamp_ps < 0:
        raise ValueError(f"timestamp_ps must be >= 0, got {timestamp_ps}")
    return int(timestamp_ps) // int(bin_width_ps)


def _first_decrease(t: np.ndarray) -> int:
    """Index of the first event whose timestamp is below its predecessor, or -1."""
    if t.size < 2:
        return -1
    bad = np.flatnonzero(t[1:] < t[:-1])
    return int(bad[0]) + 1 if bad.size else -1


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Ordered detector clicks with the acquisition duration and TDC bin width.

    The arrays are copied to int64/uint8 and made read-only on construction.
    Ties between channels are allowed; downstream code orders them CH1 first.
    """

    timestamps: np.ndarray
    channels: np.ndarray
    duration_ps: int
    bin_width_ps: int = DEFAULT_BIN_WIDTH_PS

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=np.int64, copy=True).reshape(-1)
        ch = np.array(self.channels, dtype=np.uint8, copy=True).reshape(-1)
        if t.shape != ch.shape:
            raise StreamError("timestamps and channels differ in length")
        if self.bin_width_ps <= 0:
            raise StreamError(f"bin_width_ps must be positive, got {self.bin_width_ps}")
        if self.duration_ps < 0:
            raise StreamError(f"duration_ps must be >= 0, got {self.duration_ps}")
        if t.size:
            if t[0] < 0 or t.min() < 0:
                raise StreamError("negative timestamp")
            if t[-1] > self.duration_ps or t.max() > self.duration_ps:
                raise StreamError("timestamp beyond duration_ps")
            i = _first_decrease(t)
            if i >= 0:
                raise StreamError(f"timestamps decrease at event {i}")
            if ch.max() > 1:
                raise StreamError("channel id must be 0 (CH1) or 1 (CH2)")
        t.flags.writeable = False
        ch.flags.writeable = False
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "duration_ps", int(self.duration_ps))
        object.__setattr__(self, "bin_width_ps", int(self.bin_width_ps))

    @classmethod
    def from_events(cls, events, duration_ps: int | None = None,
                    bin_width_ps: int = DEFAULT_BIN_WIDTH_PS) -> "TimeTagStream":
        """Build from ``(timestamp_ps, channel)`` pairs; duration defaults to the last stamp."""
        events = list(events)
        t = np.array([int(e[0]) for e in events], dtype=np.int64)
        ch = np.array([int(e[1]) for e in events], dtype=np.uint8)
        if duration_ps is None:
            duration_ps = int(t[-1]) if t.size else 0
        return cls(t, ch, duration_ps, bin_width_ps)

    @classmethod
    def empty(cls, duration_ps: int = 0, bin_width_ps: int = DEFAULT_BIN_WIDTH_PS):
        return cls(np.empty(0, np.int64), np.empty(0, np.uint8), duration_ps, bin_width_ps)

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def __iter__(self) -> Iterator[TimeTag]:
        for t, ch in zip(self.timestamps.tolist(), self.channels.tolist()):
            yield TimeTag(t, Channel(ch))

    def __getitem__(self, i: int) -> TimeTag:
        return TimeTag(int(self.timestamps[i]), Channel(int(self.channels[i])))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (self.duration_ps == other.duration_ps
                and self.bin_width_ps == other.bin_width_ps
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.channels, other.channels))

    def counts(self) -> tuple[int, int]:
        n2 = int(np.count_nonzero(self.channels))
        return len(self) - n2, n2

    def shifted(self, offset_ps: int) -> "TimeTagStream":
        """Same events translated by ``offset_ps`` (duration grows accordingly)."""
        return TimeTagStream(self.timestamps + offset_ps, self.channels,
                             self.duration_ps + offset_ps, self.bin_width_ps)


def write_stream(stream: TimeTagStream, sink: BinaryIO) -> int:
    """Serialize ``stream`` to ``sink``; returns the number of bytes written."""
    n = len(stream)
    if n > _U32_MAX:
        raise SerializationError(f"{n} events exceed the u32 event counter")
    if stream.bin_width_ps > _U32_MAX:
        raise SerializationError("bin_width_ps does not fit in u32")
    if len(stream) and (stream.timestamps[0] < 0 or _first_decrease(stream.timestamps) >= 0):
        raise SerializationError("stream is not ordered")
    header = HEADER.pack(MAGIC, stream.duration_ps, stream.bin_width_ps, n)
    body = np.empty(n, dtype=EVENT_DTYPE)
    body["t"] = stream.timestamps
    body["ch"] = stream.channels
    payload = body.tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def _read_exact(source: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        b = source.read(remaining)
        if not b:
            break
        chunks.append(b)
        remaining -= len(b)
    return b"".join(chunks)


def read_stream(source: BinaryIO) -> TimeTagStream:
    """Parse a PHTNTAG1 stream. Out-of-order events raise :class:`OrderingError`."""
    head = _read_exact(source, HEADER_SIZE)
    if len(head) >= len(MAGIC) and head[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {head[:len(MAGIC)]!r}", 0)
    if len(head) < HEADER_SIZE:
        if head[: len(MAGIC)] != MAGIC[: len(head)]:
            raise BadMagicError("bad magic", 0)
        raise TruncatedStreamError(f"header needs {HEADER_SIZE} bytes, got {len(head)}", len(head))
    _, duration_ps, bin_width_ps, n = HEADER.unpack(head)
    if bin_width_ps == 0:
        raise StreamParseError("bin_width_ps is zero", 16)
    if duration_ps > _INT64_MAX:
        raise StreamParseError("duration_ps exceeds int64 range", 8)

    body = _read_exact(source, n * EVENT_SIZE)
    if len(body) < n * EVENT_SIZE:
        raise TruncatedStreamError(
            f"expected {n} events, data ends inside event {len(body) // EVENT_SIZE}",
            HEADER_SIZE + len(body))
    rec = np.frombuffer(body, dtype=EVENT_DTYPE)
    t_u = rec["t"]
    ch = rec["ch"]
    if n:
        big = np.flatnonzero(t_u > _INT64_MAX)
        if big.size:
            i = int(big[0])
            raise StreamParseError(f"event {i} timestamp exceeds int64 range", HEADER_SIZE + i * EVENT_SIZE)
        bad_ch = np.flatnonzero(ch > 1)
        if bad_ch.size:
            i = int(bad_ch[0])
            raise StreamParseError(f"event {i} has invalid channel {int(ch[i])}",
                                   HEADER_SIZE + i * EVENT_SIZE + 8)
    t = t_u.astype(np.int64)
    i = _first_decrease(t)
    if i >= 0:
        raise OrderingError(f"event {i} timestamp {int(t[i])} < previous {int(t[i - 1])}",
                            HEADER_SIZE + i * EVENT_SIZE, i)
    if n and t[-1] > duration_ps:
        i = int(np.flatnonzero(t > duration_ps)[0])
        raise StreamParseError(f"event {i} lies beyond duration_ps={duration_ps}",
                               HEADER_SIZE + i * EVENT_SIZE)
    return TimeTagStream(t, ch, int(duration_ps), int(bin_width_ps))


def save_stream(stream: TimeTagStream, path) -> int:
    with open(path, "wb") as fh:
        return write_stream(stream, fh)


def load_stream(path) -> TimeTagStream:
    with open(Path(path), "rb") as fh:
        return read_stream(fh)
