"""Hanbury Brown-Twiss analysis: coincidences, g2 normalization, background
correction and saturation-curve fitting.

Delay convention: tau = t(CH2) - t(CH1).  Histogram bins are centred on
multiples of the bin width, bin k covering [k*w - w/2, k*w + w/2), so bin 0
is symmetric about zero delay.  A pair is counted when its bin index lies in
[-K, K] with K = max_delay_ps / bin_width_ps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numba
import numpy as np

from .timetags import TimeTagStream


class DegenerateInputError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass
class CoincidenceHistogram:
    bin_width_ps: int
    max_delay_ps: int
    counts: np.ndarray
    n1: int
    n2: int
    duration_ps: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.max_delay_ps // self.bin_width_ps
        if self.counts.shape != (2 * k + 1,):
            raise ValueError(f"counts must have length {2 * k + 1}")
        if (self.counts < 0).any() or self.n1 < 0 or self.n2 < 0:
            raise ValueError("counts must be non-negative")

    @property
    def half_width(self) -> int:
        return self.max_delay_ps // self.bin_width_ps

    @property
    def delays_ps(self) -> np.ndarray:
        k = self.half_width
        return np.arange(-k, k + 1, dtype=np.int64) * self.bin_width_ps

    def merge(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        """Combine histograms of disjoint time shards (elementwise sum)."""
        if (other.bin_width_ps, other.max_delay_ps) != (self.bin_width_ps, self.max_delay_ps):
            raise ValueError("histogram binning differs")
        return CoincidenceHistogram(self.bin_width_ps, self.max_delay_ps,
                                    self.counts + other.counts, self.n1 + other.n1,
                                    self.n2 + other.n2, self.duration_ps + other.duration_ps)


@numba.njit(cache=True)
def _accumulate_pairs(t, ch, start, bin_width, half_width, counts):
    reach = (half_width + 1) * bin_width
    half = bin_width // 2
    for k in range(start, t.size):
        tk = t[k]
        ck = ch[k]
        j = k - 1
        while j >= 0 and tk - t[j] <= reach:
            if ch[j] != ck:
                d = tk - t[j] if ck == 1 else t[j] - tk
                b = (d + half) // bin_width
                if -half_width <= b <= half_width:
                    counts[b + half_width] += 1
            j -= 1


class CoincidenceAccumulator:
    """Sliding-window CH1/CH2 pair counter fed with consecutive, ordered chunks.

    Each pair is counted once, when its later event arrives, so feeding a
    stream in any chunking gives the same histogram as one call.
    """

    def __init__(self, bin_width_ps: int, max_delay_ps: int):
        if bin_width_ps <= 0:
            raise ValueError("bin_width_ps must be positive")
        if max_delay_ps < 0 or max_delay_ps % bin_width_ps:
            raise ValueError("max_delay_ps must be a non-negative multiple of bin_width_ps")
        self.bin_width_ps = int(bin_width_ps)
        self.max_delay_ps = int(max_delay_ps)
        self.half_width = self.max_delay_ps // self.bin_width_ps
        self.counts = np.zeros(2 * self.half_width + 1, dtype=np.int64)
        self.n1 = 0
        self.n2 = 0
        self._tail_t = np.empty(0, np.int64)
        self._tail_ch = np.empty(0, np.int64)

    def add(self, timestamps: np.ndarray, channels: np.ndarray) -> None:
        t = np.asarray(timestamps, dtype=np.int64)
        ch = np.asarray(channels, dtype=np.int64)
        if t.size == 0:
            return
        if (t.size > 1 and (np.diff(t) < 0).any()) or (self._tail_t.size and t[0] < self._tail_t[-1]):
            raise ValueError("events must be in non-decreasing timestamp order")
        n2 = int(np.count_nonzero(ch))
        self.n2 += n2
        self.n1 += t.size - n2
        start = self._tail_t.size
        all_t = np.concatenate([self._tail_t, t])
        all_ch = np.concatenate([self._tail_ch, ch])
        _accumulate_pairs(all_t, all_ch, start, self.bin_width_ps, self.half_width, self.counts)
        reach = (self.half_width + 1) * self.bin_width_ps
        cut = np.searchsorted(all_t, all_t[-1] - reach, side="left")
        self._tail_t = all_t[cut:]
        self._tail_ch = all_ch[cut:]

    def histogram(self, duration_ps: int) -> CoincidenceHistogram:
        return CoincidenceHistogram(self.bin_width_ps, self.max_delay_ps, self.counts.copy(),
                                    self.n1, self.n2, int(duration_ps))


def coincidences(stream: TimeTagStream, bin_width_ps: int, max_delay_ps: int) -> CoincidenceHistogram:
    """Histogram of CH2 - CH1 delays for all cross-channel pairs within the window."""
    acc = CoincidenceAccumulator(bin_width_ps, max_delay_ps)
    acc.add(stream.timestamps, stream.channels)
    return acc.histogram(stream.duration_ps)


@dataclass
class G2Curve:
    delays_ps: np.ndarray
    values: np.ndarray
    statistical_sigma: np.ndarray
    has_negative: bool = False

    def __post_init__(self):
        if not (len(self.delays_ps) == len(self.values) == len(self.statistical_sigma)):
            raise ValueError("G2Curve arrays must have equal length")

    def at(self, delay_ps: int = 0) -> float:
        """Value in the bin nearest ``delay_ps``."""
        i = int(np.argmin(np.abs(np.asarray(self.delays_ps) - delay_ps)))
        return float(self.values[i])

    def sigma_at(self, delay_ps: int = 0) -> float:
        i = int(np.argmin(np.abs(np.asarray(self.delays_ps) - delay_ps)))
        return float(self.statistical_sigma[i])


def normalize_g2(hist: CoincidenceHistogram) -> G2Curve:
    """CW normalization g2 = C * T / (n1 * n2 * bin_width); uncorrelated light gives 1."""
    if hist.n1 <= 0 or hist.n2 <= 0:
        raise DegenerateInputError("g2 normalization needs counts on both channels")
    if hist.duration_ps <= 0:
        raise DegenerateInputError("g2 normalization needs a positive duration")
    scale = hist.duration_ps / (float(hist.n1) * float(hist.n2) * hist.bin_width_ps)
    c = hist.counts.astype(float)
    return G2Curve(hist.delays_ps, c * scale, np.sqrt(c) * scale)


def correct_background(g2_raw, rho: float):
    """Remove uncorrelated background: (g2_raw - (1 - rho^2)) / rho^2.

    Works on scalars and arrays. Negative results are returned unchanged.
    """
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if rho == 1.0:
        return g2_raw * 1.0
    # (g - 1)/rho^2 + 1 is the same expression and keeps g = 1 an exact fixed point
    return (g2_raw - 1.0) / (rho * rho) + 1.0


def mix_background(g2: float | np.ndarray, rho: float):
    """Forward model of background dilution, rho^2 g2 + 1 - rho^2."""
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    return rho * rho * (g2 - 1.0) + 1.0


def correct_curve(curve: G2Curve, rho: float) -> G2Curve:
    values = correct_background(np.asarray(curve.values, dtype=float), rho)
    sigma = np.asarray(curve.statistical_sigma, dtype=float) / (rho * rho)
    return G2Curve(curve.delays_ps, values, sigma, has_negative=bool((values < 0).any()))


def estimate_snr(signal_rate_hz: float, background_rate_hz: float) -> float:
    """rho = S / (S + B)."""
    total = signal_rate_hz + background_rate_hz
    if total <= 0 or signal_rate_hz <= 0:
        raise ValueError("signal rate must be positive")
    return signal_rate_hz / total


@dataclass
class SaturationFit:
    i_infinity_hz: float
    p_sat_mw: float
    residual_norm: float
    iterations: int = 0
    converged: bool = True

    def rate(self, power_mw):
        p = np.asarray(power_mw, dtype=float)
        return self.i_infinity_hz * (p / (p + self.p_sat_mw))

    def to_json(self, **extra) -> str:
        rec = {"i_infinity_hz": self.i_infinity_hz, "p_sat_mw": self.p_sat_mw,
               "residual_norm": self.residual_norm, "iterations": self.iterations,
               "converged": self.converged, **extra}
        return json.dumps(rec, indent=2, sort_keys=True)


def _model(theta, p):
    i_inf, ps = theta
    return i_inf * (p / (p + ps))


def _jacobian(theta, p):
    i_inf, ps = theta
    d = p + ps
    return np.column_stack([p / d, -i_inf * p / (d * d)])


def fit_saturation(points: Sequence[tuple[float, float]], max_iter: int = 200,
                   rtol: float = 1e-9) -> SaturationFit:
    """Least-squares fit of I(P) = I_inf P / (P + Ps).

    Levenberg-Marquardt with diagonal scaling, started from Ps = median power
    and I_inf = 2 * max rate.  Stops when the relative step drops below
    ``rtol`` or after ``max_iter`` iterations.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise FitError("points must be (power_mw, rate_hz) pairs")
    if len(pts) < 3:
        raise FitError(f"need at least 3 points, got {len(pts)}")
    p, y = pts[:, 0], pts[:, 1]
    if (p <= 0).any():
        raise FitError("powers must be positive")
    if np.unique(p).size < 3:
        raise FitError("need at least 3 distinct powers")
    if not (y > 0).any():
        raise FitError("all rates are non-positive")

    theta = np.array([2.0 * y.max(), float(np.median(p))])
    r = _model(theta, p) - y
    cost = r @ r
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _jacobian(theta, p)
        A = J.T @ J
        g = J.T @ r
        step_ok = False
        while lam < 1e16:
            M = A + lam * np.diag(np.diag(A))
            try:
                delta = -np.linalg.solve(M, g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = theta + delta
            if trial[1] <= 0 or trial[0] <= 0:
                lam *= 10
                continue
            r_trial = _model(trial, p) - y
            c_trial = r_trial @ r_trial
            if c_trial <= cost:
                theta, r, cost = trial, r_trial, c_trial
                lam = max(lam / 10, 1e-12)
                step_ok = True
                break
            lam *= 10
        if not step_ok:
            # no descent direction left: at a minimum to machine precision
            converged = True
            break
        if np.all(np.abs(delta) <= rtol * np.abs(theta)):
            converged = True
            break
    i_inf, ps = theta
    if not converged or ps > 1e4 * p.max():
        raise FitError("fit did not converge: data show no saturation (collinear or degenerate)")
    return SaturationFit(float(i_inf), float(ps), float(math.sqrt(cost / len(p))), it, converged)


def read_points_csv(path) -> list[tuple[float, float]]:
    """Read ``power_mw,rate_hz`` rows; '#' lines and one non-numeric header row are skipped."""
    pts = []
    with open(path, newline="") as fh:
        seen_header = False
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            try:
                if len(row) != 2:
                    raise ValueError(f"expected 2 columns, got {len(row)}")
                pts.append((float(row[0]), float(row[1])))
            except ValueError as exc:
                if not pts and not seen_header and len(row) == 2:
                    seen_header = True
                    continue
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return pts


def write_g2_csv(fh, raw: G2Curve, corrected: G2Curve, header_lines: Iterable[str] = ()) -> None:
    for line in header_lines:
        fh.write(f"# {line}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["delay_ps", "g2_raw", "g2_corrected", "sigma"])
    for d, g, gc, s in zip(raw.delays_ps, raw.values, corrected.values, raw.statistical_sigma):
        w.writerow([int(d), repr(float(g)), repr(float(gc)), repr(float(s))])
