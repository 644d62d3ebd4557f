"""Raw-bit assignment, von Neumann debiasing and bit-level diagnostics.

Bit files (``QRNGBITS``): 8-byte magic, little-endian u64 bit count, then the
bits packed MSB-first with the last byte zero-padded.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable

import numpy as np

from .timetags import TimeTagStream

BITS_MAGIC = b"QRNGBITS"
BITS_HEADER = struct.Struct("<8sQ")

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


class BitKind(enum.Enum):
    RAW = "raw"
    UNBIASED = "unbiased"


class DegenerateInputError(ValueError):
    pass


class BitFileError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _popcount(packed: np.ndarray) -> int:
    return int(_POPCOUNT[packed].sum())


@dataclass(frozen=True, eq=False)
class BitSequence:
    """Packed bit record. ``packed`` is MSB-first with zero padding after ``n`` bits."""

    packed: np.ndarray
    n: int
    kind: BitKind
    counts0: int
    counts1: int

    def __post_init__(self):
        if self.counts0 + self.counts1 != self.n:
            raise ValueError("counts0 + counts1 must equal n")
        if self.packed.size != (self.n + 7) // 8:
            raise ValueError("packed length does not match n")
        if _popcount(self.packed) != self.counts1:
            raise ValueError("counts do not match packed content")

    @classmethod
    def from_array(cls, bits, kind: BitKind = BitKind.RAW) -> "BitSequence":
        b = np.asarray(bits, dtype=np.uint8).reshape(-1)
        packed = np.packbits(b)
        n1 = _popcount(packed)
        return cls(packed, int(b.size), kind, int(b.size) - n1, n1)

    @classmethod
    def from_string(cls, text: str, kind: BitKind = BitKind.RAW) -> "BitSequence":
        return cls.from_array(np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0"), kind)

    def unpack(self) -> np.ndarray:
        return np.unpackbits(self.packed, count=self.n)

    def __len__(self) -> int:
        return self.n

    def __str__(self) -> str:
        return (self.unpack() + ord("0")).tobytes().decode("ascii")

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitSequence):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.packed, other.packed)


def assign_bits(stream: TimeTagStream) -> BitSequence:
    """CH1 clicks become '0' and CH2 clicks '1', in time order (CH1 first on ties)."""
    t, ch = stream.timestamps, stream.channels
    if t.size > 1:
        tie = (t[1:] == t[:-1]) & (ch[1:] < ch[:-1])
        if tie.any():
            ch = ch[np.lexsort((ch, t))]
    return BitSequence.from_array(ch, BitKind.RAW)


class VonNeumannExtractor:
    """Streaming von Neumann extractor holding at most one bit between chunks.

    Pairs are aligned to the first bit ever fed.  '01' -> 0, '10' -> 1,
    '00' and '11' are dropped.  Not thread-safe.
    """

    def __init__(self):
        self._carry = np.empty(0, dtype=np.uint8)
        self.bits_in = 0
        self.bits_out = 0

    def feed(self, bits) -> np.ndarray:
        b = np.asarray(bits, dtype=np.uint8).reshape(-1)
        self.bits_in += b.size
        if self._carry.size:
            b = np.concatenate([self._carry, b])
        even = b.size & ~1
        self._carry = b[even:].copy()
        first = b[0:even:2]
        out = first[first != b[1:even:2]]
        self.bits_out += out.size
        return out

    def finalize(self) -> int:
        """Discard a dangling odd bit; returns how many bits were dropped (0 or 1)."""
        dropped = self._carry.size
        self._carry = np.empty(0, dtype=np.uint8)
        return dropped


def von_neumann(bits: BitSequence) -> BitSequence:
    ext = VonNeumannExtractor()
    out = ext.feed(bits.unpack())
    ext.finalize()
    return BitSequence.from_array(out, BitKind.UNBIASED)


def von_neumann_chunks(chunks: Iterable) -> np.ndarray:
    ext = VonNeumannExtractor()
    parts = [ext.feed(c) for c in chunks]
    ext.finalize()
    return np.concatenate(parts) if parts else np.empty(0, np.uint8)


def extract_bits(stream: TimeTagStream, chunk_bits: int = 1 << 22) -> tuple[BitSequence, BitSequence]:
    """Raw and von Neumann bits of a stream, run through the streaming extractor in chunks."""
    raw = assign_bits(stream)
    x = raw.unpack()
    out = von_neumann_chunks(x[i:i + chunk_bits] for i in range(0, x.size, chunk_bits))
    return raw, BitSequence.from_array(out, BitKind.UNBIASED)


def bias(bits: BitSequence) -> tuple[float, float]:
    if bits.n == 0:
        raise DegenerateInputError("bias of an empty sequence is undefined")
    return bits.counts0 / bits.n, bits.counts1 / bits.n


@dataclass
class AutocorrelationReport:
    lags: np.ndarray
    coefficients: np.ndarray
    n: int

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coefficients)))


def autocorrelation(bits: BitSequence, max_lag: int = 100) -> AutocorrelationReport:
    """Biased-estimator autocorrelation about the global mean, lags 1..max_lag."""
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if bits.n <= max_lag + 1:
        raise DegenerateInputError(f"need more than {max_lag + 1} bits, got {bits.n}")
    if bits.counts0 == 0 or bits.counts1 == 0:
        raise DegenerateInputError("constant sequence has zero variance")
    x = bits.unpack().astype(np.float64)
    d = x - x.mean()
    denom = d @ d
    coef = np.array([d[:-k] @ d[k:] for k in range(1, max_lag + 1)]) / denom
    return AutocorrelationReport(np.arange(1, max_lag + 1), coef, bits.n)


def write_bits(bits: BitSequence, sink: BinaryIO) -> int:
    header = BITS_HEADER.pack(BITS_MAGIC, bits.n)
    payload = bits.packed.tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def read_bits(source: BinaryIO, kind: BitKind = BitKind.RAW) -> BitSequence:
    head = source.read(BITS_HEADER.size)
    if head[:8] != BITS_MAGIC[: len(head)]:
        raise BitFileError("bad magic", 0)
    if len(head) < BITS_HEADER.size:
        raise BitFileError("truncated header", len(head))
    _, n = BITS_HEADER.unpack(head)
    nbytes = (n + 7) // 8
    payload = source.read(nbytes)
    if len(payload) < nbytes:
        raise BitFileError(f"expected {nbytes} payload bytes, got {len(payload)}",
                           BITS_HEADER.size + len(payload))
    packed = np.frombuffer(payload, dtype=np.uint8).copy()
    if n % 8 and packed[-1] & ((1 << (8 - n % 8)) - 1):
        raise BitFileError("non-zero padding bits", BITS_HEADER.size + nbytes - 1)
    n1 = _popcount(packed)
    return BitSequence(packed, int(n), kind, int(n) - n1, n1)


def save_bits(bits: BitSequence, path) -> int:
    with open(path, "wb") as fh:
        return write_bits(bits, fh)


def load_bits(path, kind: BitKind = BitKind.RAW) -> BitSequence:
    with open(path, "rb") as fh:
        return read_bits(fh, kind)


def write_autocorr_csv(fh, report: AutocorrelationReport, header_lines: Iterable[str] = ()) -> None:
    for line in header_lines:
        fh.write(f"# {line}\n")
    fh.write("lag,coefficient\n")
    for k, c in zip(report.lags, report.coefficients):
        fh.write(f"{int(k)},{float(c)!r}\n")
