"""Eight tests from the NIST SP800-22 rev1a battery plus the pass-proportion check.

Implemented: frequency (monobit), block frequency, runs, longest run of ones
in a block, cumulative sums, DFT spectral, serial and approximate entropy.
Each test takes a 0/1 array (or :class:`~spqrng.extract.BitSequence`) and
returns a p-value; ``serial_test`` returns its two p-values.

Pass ``test_mode=True`` to skip the recommended minimum-length checks so the
short worked examples of SP800-22 can be evaluated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erfc, gammaincc
from scipy.stats import norm

from .extract import BitSequence

TestFn = Callable[..., "float | tuple[float, ...]"]


class InsufficientBitsError(ValueError):
    def __init__(self, required: int, available: int):
        super().__init__(f"battery needs {required} bits, source supplies {available}")
        self.required = required
        self.available = available


def igamc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    return float(gammaincc(a, x))


def _bits(bits) -> np.ndarray:
    if isinstance(bits, BitSequence):
        return bits.unpack()
    return np.asarray(bits, dtype=np.uint8).reshape(-1)


def _require(ok: bool, test_mode: bool, message: str) -> None:
    if not ok and not test_mode:
        raise ValueError(message)


def frequency_test(bits, test_mode: bool = False) -> float:
    x = _bits(bits)
    n = x.size
    _require(n >= 100, test_mode, f"frequency test needs n >= 100, got {n}")
    if n == 0:
        raise ValueError("empty sequence")
    s = abs(2 * int(np.count_nonzero(x)) - n) / math.sqrt(n)
    return float(erfc(s / math.sqrt(2)))


def block_frequency_test(bits, block_len: int = 128, test_mode: bool = False) -> float:
    x = _bits(bits)
    n = x.size
    _require(n >= 100, test_mode, f"block frequency test needs n >= 100, got {n}")
    _require(block_len >= 20, test_mode, f"block frequency test needs block_len >= 20, got {block_len}")
    nblocks = n // block_len
    if nblocks == 0:
        raise ValueError("sequence shorter than one block")
    pi = x[: nblocks * block_len].reshape(nblocks, block_len).sum(axis=1) / block_len
    chi2 = 4.0 * block_len * float(((pi - 0.5) ** 2).sum())
    return igamc(nblocks / 2.0, chi2 / 2.0)


def runs_test(bits, test_mode: bool = False) -> float:
    x = _bits(bits)
    n = x.size
    _require(n >= 100, test_mode, f"runs test needs n >= 100, got {n}")
    pi = np.count_nonzero(x) / n
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return 0.0  # frequency prerequisite failed
    v = 1 + int(np.count_nonzero(x[1:] != x[:-1]))
    num = abs(v - 2.0 * n * pi * (1 - pi))
    return float(erfc(num / (2.0 * math.sqrt(2.0 * n) * pi * (1 - pi))))


# (block length M, first class upper bound, class probabilities)
_LONGEST_RUN_TABLES = {
    8: (1, [0.2148, 0.3672, 0.2305, 0.1875]),
    128: (4, [0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124]),
    10_000: (10, [0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727]),
}


def _longest_run_block(n: int) -> int:
    if n < 6272:
        return 8
    if n < 750_000:
        return 128
    return 10_000


def longest_run_test(bits, test_mode: bool = False) -> float:
    x = _bits(bits)
    n = x.size
    _require(n >= 128, test_mode, f"longest run test needs n >= 128, got {n}")
    m = _longest_run_block(n)
    lo, pi = _LONGEST_RUN_TABLES[m]
    k = len(pi) - 1
    nblocks = n // m
    if nblocks == 0:
        raise ValueError("sequence shorter than one block")
    blocks = x[: nblocks * m].reshape(nblocks, m)
    longest = _longest_ones(blocks)
    cls = np.clip(longest, lo, lo + k) - lo
    nu = np.bincount(cls, minlength=k + 1)
    expected = nblocks * np.asarray(pi)
    chi2 = float(((nu - expected) ** 2 / expected).sum())
    return igamc(k / 2.0, chi2 / 2.0)


def _longest_ones(blocks: np.ndarray) -> np.ndarray:
    """Longest run of ones in each row."""
    run = np.zeros(blocks.shape[0], dtype=np.int64)
    best = np.zeros(blocks.shape[0], dtype=np.int64)
    for col in blocks.T:
        run = (run + 1) * col
        np.maximum(best, run, out=best)
    return best


def cumulative_sums_test(bits, mode: str = "forward", test_mode: bool = False) -> float:
    x = _bits(bits)
    n = x.size
    _require(n >= 100, test_mode, f"cumulative sums test needs n >= 100, got {n}")
    if mode not in ("forward", "backward"):
        raise ValueError("mode must be 'forward' or 'backward'")
    steps = 2 * x.astype(np.int64) - 1
    if mode == "backward":
        steps = steps[::-1]
    z = int(np.abs(np.cumsum(steps)).max())
    if z == 0:
        return 1.0
    sq = math.sqrt(n)
    k1 = np.arange(math.ceil((-n / z + 1) / 4), math.floor((n / z - 1) / 4) + 1)
    k2 = np.arange(math.ceil((-n / z - 3) / 4), math.floor((n / z - 1) / 4) + 1)
    s1 = (norm.cdf((4 * k1 + 1) * z / sq) - norm.cdf((4 * k1 - 1) * z / sq)).sum()
    s2 = (norm.cdf((4 * k2 + 3) * z / sq) - norm.cdf((4 * k2 + 1) * z / sq)).sum()
    return float(min(max(1.0 - s1 + s2, 0.0), 1.0))


def dft_spectral_test(bits, test_mode: bool = False) -> float:
    x = _bits(bits)
    n = x.size
    _require(n >= 1000, test_mode, f"DFT test needs n >= 1000, got {n}")
    s = np.fft.fft(2.0 * x - 1.0)
    mod = np.abs(s[: n // 2])
    threshold = math.sqrt(math.log(1 / 0.05) * n)
    n0 = 0.95 * n / 2.0
    n1 = int(np.count_nonzero(mod < threshold))
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4.0)
    return float(erfc(abs(d) / math.sqrt(2)))


def _pattern_counts(x: np.ndarray, m: int) -> np.ndarray:
    """Counts of overlapping m-bit patterns with wrap-around."""
    if m == 0:
        return np.array([x.size])
    ext = np.concatenate([x, x[: m - 1]]).astype(np.int64)
    n = x.size
    code = np.zeros(n, dtype=np.int64)
    for j in range(m):
        code = (code << 1) | ext[j: j + n]
    return np.bincount(code, minlength=1 << m)


def _weighted_sumsq(x: np.ndarray, m: int) -> int:
    """2^m * sum(nu^2) as an exact integer; psi^2_m = this / n - n."""
    if m <= 0:
        return x.size * x.size
    nu = _pattern_counts(x, m)
    return (1 << m) * int((nu * nu).sum())


def serial_test(bits, m: int = 16, test_mode: bool = False) -> tuple[float, float]:
    x = _bits(bits)
    n = x.size
    _require(2 <= m < int(math.log2(max(n, 1))) - 2, test_mode,
             f"serial test needs 2 <= m < floor(log2 n) - 2, got m={m}, n={n}")
    if m < 2:
        raise ValueError("serial test needs m >= 2")
    s0, s1, s2 = (_weighted_sumsq(x, k) for k in (m, m - 1, m - 2))
    # differences in integers: the float psi^2 values cancel to tiny negatives
    d1 = (s0 - s1) / n
    d2 = (s0 - 2 * s1 + s2) / n
    return igamc(2 ** (m - 2), d1 / 2.0), igamc(2 ** (m - 3), d2 / 2.0)


def _phi(x: np.ndarray, m: int) -> float:
    c = _pattern_counts(x, m)
    c = c[c > 0] / x.size
    return float((c * np.log(c)).sum())


def approximate_entropy_test(bits, m: int = 10, test_mode: bool = False) -> float:
    x = _bits(bits)
    n = x.size
    _require(1 <= m < int(math.log2(max(n, 1))) - 5, test_mode,
             f"approximate entropy test needs m < floor(log2 n) - 5, got m={m}, n={n}")
    if m < 1:
        raise ValueError("approximate entropy test needs m >= 1")
    apen = _phi(x, m) - _phi(x, m + 1)
    chi2 = max(2.0 * n * (math.log(2) - apen), 0.0)  # rounding can push it just below 0
    return igamc(2 ** (m - 1), chi2 / 2.0)


def proportion_interval(n_sequences: int, delta: float = 0.01) -> tuple[float, float]:
    """p +/- 3 sqrt(p(1-p)/N) with p = 1 - delta, clamped to [0, 1]."""
    if n_sequences <= 0:
        raise ValueError("n_sequences must be positive")
    p = 1.0 - delta
    half = 3.0 * math.sqrt(p * (1.0 - p) / n_sequences)
    return max(p - half, 0.0), min(p + half, 1.0)


def default_parameters(sequence_length: int) -> dict[str, dict]:
    """Block/template sizes used by the battery for a given sequence length."""
    log2n = int(math.log2(sequence_length))
    return {
        "block_frequency": {"block_len": 128 if sequence_length >= 1280 else 20},
        "serial": {"m": max(2, min(16, log2n - 3))},
        "approximate_entropy": {"m": max(1, min(10, log2n - 6))},
    }


_REGISTRY: dict[str, TestFn] = {}


def register_test(name: str, fn: TestFn) -> None:
    """Add a test to the battery. ``fn(bits, **params)`` returns a p-value or a tuple of them."""
    _REGISTRY[name] = fn


for _name, _fn in [
    ("frequency", frequency_test),
    ("block_frequency", block_frequency_test),
    ("cumulative_sums", cumulative_sums_test),
    ("runs", runs_test),
    ("longest_run", longest_run_test),
    ("dft_spectral", dft_spectral_test),
    ("serial", serial_test),
    ("approximate_entropy", approximate_entropy_test),
]:
    register_test(_name, _fn)

DEFAULT_TESTS = tuple(_REGISTRY)


def uniformity_p_value(p_values: Sequence[float]) -> float:
    """Chi-square uniformity of p-values over 10 equal bins (second-level check)."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return float("nan")
    hist = np.bincount(np.minimum((p * 10).astype(int), 9), minlength=10)
    expected = p.size / 10.0
    chi2 = float(((hist - expected) ** 2).sum() / expected)
    return igamc(4.5, chi2 / 2.0)


@dataclass
class TestRecord:
    name: str
    p_values: list[float]
    pass_count: int
    proportion: float
    interval_lo: float
    interval_hi: float
    uniformity_p: float

    @property
    def passed(self) -> bool:
        return self.interval_lo <= self.proportion <= self.interval_hi


@dataclass
class TestReport:
    records: list[TestRecord]
    sequence_count: int
    sequence_length: int
    delta: float = 0.01
    parameters: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def record(self, name: str) -> TestRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "sequence_count": self.sequence_count,
            "sequence_length": self.sequence_length,
            "delta": self.delta,
            "parameters": self.parameters,
            "passed": self.passed,
            "tests": [
                {"name": r.name, "pass_count": r.pass_count, "proportion": r.proportion,
                 "interval": [r.interval_lo, r.interval_hi], "uniformity_p": r.uniformity_p,
                 "passed": r.passed, "p_values": r.p_values}
                for r in self.records
            ],
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, **self.to_dict()}, indent=1, sort_keys=True)

    def format_table(self) -> str:
        lo, hi = proportion_interval(self.sequence_count, self.delta)
        lines = [f"N = {self.sequence_count} sequences x {self.sequence_length} bits, "
                 f"delta = {self.delta}, proportion interval [{lo:.5f}, {hi:.5f}]",
                 f"{'test':<22}{'proportion':>11}{'uniformity p':>14}  result"]
        for r in self.records:
            lines.append(f"{r.name:<22}{r.proportion:>11.4f}{r.uniformity_p:>14.4g}  "
                         f"{'PASS' if r.passed else 'FAIL'}")
        return "\n".join(lines)


def run_battery(bit_source, sequence_length: int, n_sequences: int, delta: float = 0.01,
                tests: Sequence[str] | None = None, parameters: dict | None = None) -> TestReport:
    """Split the source into ``n_sequences`` disjoint sequences and run every test on each.

    Tests returning several p-values (serial) contribute one record per p-value,
    named ``serial[1]``, ``serial[2]``.
    """
    x = _bits(bit_source)
    required = sequence_length * n_sequences
    if x.size < required:
        raise InsufficientBitsError(required, int(x.size))
    names = list(tests) if tests is not None else list(DEFAULT_TESTS)
    params = default_parameters(sequence_length)
    for k, v in (parameters or {}).items():
        params.setdefault(k, {}).update(v)
    seqs = x[:required].reshape(n_sequences, sequence_length)

    collected: dict[str, list[float]] = {}
    for name in names:
        fn = _REGISTRY[name]
        kw = params.get(name, {})
        for seq in seqs:
            result = fn(seq, **kw)
            if isinstance(result, tuple):
                for i, p in enumerate(result, start=1):
                    collected.setdefault(f"{name}[{i}]", []).append(float(p))
            else:
                collected.setdefault(name, []).append(float(result))

    lo, hi = proportion_interval(n_sequences, delta)
    records = []
    for name, pv in collected.items():
        passes = sum(p >= delta for p in pv)
        records.append(TestRecord(name, pv, passes, passes / n_sequences, lo, hi,
                                  uniformity_p_value(pv)))
    used = {k: v for k, v in params.items() if k in names}
    return TestReport(records, n_sequences, sequence_length, delta, used)
