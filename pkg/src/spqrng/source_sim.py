"""Seeded Monte Carlo model of the emitter, beam splitter and two detectors.

Signal photons come from a two-level renewal process: after each emission the
emitter waits Exp(a) to be re-excited and Exp(b) to decay, so the waiting time
is hypoexponential with mean 1/a + 1/b and the photon stream has
g2(tau) = 1 - exp(-(a + b)|tau|).  Choosing a + b = 1/tau0 and
ab/(a + b) = rate fixes both constants.

Background fluorescence and per-detector dark counts are Poisson.  Each
optical photon goes to CH1 with probability ``transmittance``.  Dark counts
are added per detector, then each detector's dead time is applied.

Generation runs in fixed 10 ms windows so long runs can be streamed through
:func:`iter_simulate`; :func:`simulate` simply concatenates the windows, and
the window size is not a parameter, so output depends only on the config.
Random streams are spawned from ``numpy.random.SeedSequence(seed)`` with
one PCG64 generator per physical process.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterator

import numba
import numpy as np

from .timetags import DEFAULT_BIN_WIDTH_PS, TimeTagStream

PS_PER_S = 10**12
WINDOW_PS = 10**10  # 10 ms of simulated time per generation window

# stream ids for SeedSequence.spawn; order is part of the reproducibility contract
_SIGNAL, _SIGNAL_ROUTE, _BACKGROUND, _BACKGROUND_ROUTE, _DARK1, _DARK2 = range(6)


@dataclass(frozen=True)
class EmitterConfig:
    """Physical parameters of source, optics and detectors.

    Rates are in Hz, times in integer picoseconds, powers in mW.
    ``tdc_bin_ps`` only sets the bin-width metadata of the produced stream.
    """

    excitation_power_mw: float = 3.0
    saturation_power_mw: float = 3.0
    max_rate_hz: float = 4.0e6
    antibunch_tau_ps: int = 3000
    background_rate_hz: float = 6.0e5
    transmittance: float = 0.5
    dead_time_ps: int = 30_000
    dark_rate_hz: float = 50.0
    duration_ps: int = PS_PER_S
    seed: int = 0
    tdc_bin_ps: int = DEFAULT_BIN_WIDTH_PS

    def __post_init__(self):
        checks = [
            (self.excitation_power_mw >= 0, "excitation_power_mw must be >= 0"),
            (self.saturation_power_mw > 0, "saturation_power_mw must be > 0"),
            (self.max_rate_hz > 0, "max_rate_hz must be > 0"),
            (self.antibunch_tau_ps > 0, "antibunch_tau_ps must be > 0"),
            (self.background_rate_hz >= 0, "background_rate_hz must be >= 0"),
            (0 < self.transmittance < 1, "transmittance must lie in (0, 1)"),
            (self.dead_time_ps >= 0, "dead_time_ps must be >= 0"),
            (self.dark_rate_hz >= 0, "dark_rate_hz must be >= 0"),
            (self.duration_ps >= 0, "duration_ps must be >= 0"),
            (0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer"),
            (self.tdc_bin_ps > 0, "tdc_bin_ps must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @classmethod
    def device(cls, **overrides) -> "EmitterConfig":
        """Operating point with 1.8 MHz signal and 0.6 MHz background (SNR 0.75).

        Same as the defaults except ``max_rate_hz = 3.6e6``, so that driving at
        the saturation power yields 1.8 MHz of signal.
        """
        return cls(**{"max_rate_hz": 3.6e6, **overrides})

    def replace(self, **changes) -> "EmitterConfig":
        return dataclasses.replace(self, **changes)

    @property
    def signal_rate_hz(self) -> float:
        return saturation_rate(self.excitation_power_mw, self)

    @property
    def snr(self) -> float:
        """S/(S+B) from configured rates; 1.0 when both are zero."""
        s = self.signal_rate_hz
        total = s + self.background_rate_hz
        return s / total if total > 0 else 1.0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def saturation_rate(power_mw: float, config: EmitterConfig) -> float:
    """Emission rate I(P) = I_inf * P / (P + Ps) in Hz."""
    if power_mw < 0:
        raise ValueError(f"power must be >= 0, got {power_mw}")
    # P/(P+Ps) first keeps I(Ps) == I_inf/2 exact in floating point
    return config.max_rate_hz * (power_mw / (power_mw + config.saturation_power_mw))


def two_level_rates(rate_hz: float, tau_ps: float) -> tuple[float, float]:
    """Excitation and decay rates (per ps) giving mean ``rate_hz`` and recovery time ``tau_ps``."""
    r = rate_hz / PS_PER_S
    s = 1.0 / tau_ps
    disc = s * s - 4.0 * r * s
    if disc < 0:
        raise ValueError(
            f"signal rate {rate_hz:g} Hz exceeds 1/(4*tau0) = {PS_PER_S / (4 * tau_ps):g} Hz")
    root = math.sqrt(disc)
    return (s - root) / 2.0, (s + root) / 2.0


class _ArrivalProcess:
    """Renewal arrivals in absolute float ps, produced window by window."""

    def __init__(self, rng: np.random.Generator, mean_gap_ps: float):
        self.rng = rng
        self.mean_gap = mean_gap_ps
        self.pending = np.empty(0)
        self.t = 0.0

    def _gaps(self, n: int) -> np.ndarray:
        return self.rng.exponential(self.mean_gap, n)

    def until(self, end: float) -> np.ndarray:
        parts = [self.pending] if self.pending.size else []
        last = self.pending[-1] if self.pending.size else self.t
        self.pending = np.empty(0)
        if parts and parts[0][-1] >= end:
            cut = np.searchsorted(parts[0], end)
            self.pending = parts[0][cut:]
            return parts[0][:cut]
        while True:
            n = int((end - last) / self.mean_gap * 1.05) + 16
            arr = last + np.cumsum(self._gaps(n))
            last = arr[-1]
            if last >= end:
                cut = np.searchsorted(arr, end)
                parts.append(arr[:cut])
                self.pending = arr[cut:]
                break
            parts.append(arr)
        self.t = last
        return np.concatenate(parts) if len(parts) > 1 else parts[0]


class _TwoLevelProcess(_ArrivalProcess):
    def __init__(self, rng: np.random.Generator, rate_hz: float, tau_ps: float):
        a, b = two_level_rates(rate_hz, tau_ps)
        super().__init__(rng, 1.0 / a + 1.0 / b)
        self.mean_a, self.mean_b = 1.0 / a, 1.0 / b
        # stationary start: the emitter is excited with probability (1/b)/(1/a + 1/b)
        excited = rng.random() < self.mean_b / self.mean_gap
        first = rng.exponential(self.mean_b) + (0.0 if excited else rng.exponential(self.mean_a))
        self.pending = np.array([first])

    def _gaps(self, n: int) -> np.ndarray:
        return self.rng.exponential(self.mean_a, n) + self.rng.exponential(self.mean_b, n)


class _PoissonProcess(_ArrivalProcess):
    def __init__(self, rng: np.random.Generator, rate_hz: float):
        super().__init__(rng, PS_PER_S / rate_hz)


class _Silent:
    def until(self, end: float) -> np.ndarray:
        return np.empty(0)


@numba.njit(cache=True)
def _dead_time_mask(t, ch, dead_ps, last_kept):
    """Non-paralyzable per-channel dead time; ``last_kept`` carries state between calls."""
    keep = np.zeros(t.size, dtype=np.bool_)
    for i in range(t.size):
        c = ch[i]
        if t[i] - last_kept[c] >= dead_ps:
            keep[i] = True
            last_kept[c] = t[i]
    return keep


def _initial_last_kept(dead_time_ps: int) -> np.ndarray:
    return np.full(2, -max(int(dead_time_ps), 1), dtype=np.int64)


def apply_dead_time(stream: TimeTagStream, dead_time_ps: int) -> TimeTagStream:
    """Drop each event closer than ``dead_time_ps`` to the last kept event on its channel."""
    if dead_time_ps < 0:
        raise ValueError("dead_time_ps must be >= 0")
    keep = _dead_time_mask(stream.timestamps, stream.channels.astype(np.int64),
                           np.int64(dead_time_ps), _initial_last_kept(dead_time_ps))
    return TimeTagStream(stream.timestamps[keep], stream.channels[keep],
                         stream.duration_ps, stream.bin_width_ps)


def _route(rng: np.random.Generator, n: int, transmittance: float) -> np.ndarray:
    return (rng.random(n) >= transmittance).astype(np.uint8)


def iter_simulate(config: EmitterConfig) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(timestamps_ps, channels)`` per 10 ms window, already dead-time filtered."""
    rngs = [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(config.seed).spawn(6)]
    rate = config.signal_rate_hz
    signal = _TwoLevelProcess(rngs[_SIGNAL], rate, config.antibunch_tau_ps) if rate > 0 else _Silent()
    background = (_PoissonProcess(rngs[_BACKGROUND], config.background_rate_hz)
                  if config.background_rate_hz > 0 else _Silent())
    darks = [_PoissonProcess(rngs[k], config.dark_rate_hz) if config.dark_rate_hz > 0 else _Silent()
             for k in (_DARK1, _DARK2)]
    last_kept = _initial_last_kept(config.dead_time_ps)
    dead = np.int64(config.dead_time_ps)

    start = 0
    while start < config.duration_ps:
        end = min(start + WINDOW_PS, config.duration_ps)
        sig = signal.until(end)
        bg = background.until(end)
        d1 = darks[0].until(end)
        d2 = darks[1].until(end)
        t = np.concatenate([sig, bg, d1, d2])
        ch = np.concatenate([
            _route(rngs[_SIGNAL_ROUTE], sig.size, config.transmittance),
            _route(rngs[_BACKGROUND_ROUTE], bg.size, config.transmittance),
            np.zeros(d1.size, np.uint8),
            np.ones(d2.size, np.uint8),
        ])
        t = np.floor(t).astype(np.int64)
        order = np.lexsort((ch, t))  # ties: CH1 first
        t, ch = t[order], ch[order]
        keep = _dead_time_mask(t, ch.astype(np.int64), dead, last_kept)
        yield t[keep], ch[keep]
        start = end


def simulate(config: EmitterConfig) -> TimeTagStream:
    """Run the full simulation in memory. Same config (seed included) gives identical output."""
    ts, chs = [], []
    for t, ch in iter_simulate(config):
        ts.append(t)
        chs.append(ch)
    if not ts:
        return TimeTagStream.empty(config.duration_ps, config.tdc_bin_ps)
    return TimeTagStream(np.concatenate(ts), np.concatenate(chs),
                         config.duration_ps, config.tdc_bin_ps)


def expected_detected_rate(config: EmitterConfig) -> float:
    """Approximate total detected rate in Hz after dead time.

    Treats each channel's incident flux as Poisson, for which a
    non-paralyzable detector records r / (1 + r * dead_time).  The
    antibunched signal is slightly sub-Poissonian on ns scales, so this is
    a few-per-mille underestimate at the default operating point.
    """
    total = config.signal_rate_hz + config.background_rate_hz
    dead_s = config.dead_time_ps / PS_PER_S
    out = 0.0
    for frac in (config.transmittance, 1.0 - config.transmittance):
        r = total * frac + config.dark_rate_hz
        out += r / (1.0 + r * dead_s)
    return out
