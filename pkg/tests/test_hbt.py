import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spqrng.hbt import (CoincidenceAccumulator, CoincidenceHistogram, DegenerateInputError,
                        FitError, coincidences, correct_background, correct_curve, fit_saturation,
                        mix_background, normalize_g2, read_points_csv)
from spqrng.timetags import TimeTagStream


def _brute_force(stream, w, max_delay):
    """O(n^2) pair enumeration with the same centred-bin rule."""
    k = max_delay // w
    counts = np.zeros(2 * k + 1, dtype=np.int64)
    t = stream.timestamps.tolist()
    ch = stream.channels.tolist()
    for i in range(len(t)):
        if ch[i] != 0:
            continue
        for j in range(len(t)):
            if ch[j] != 1:
                continue
            b = math.floor((t[j] - t[i] + w / 2) / w)
            if -k <= b <= k:
                counts[b + k] += 1
    return counts


def test_empty_stream_histogram():
    h = coincidences(TimeTagStream.empty(1000), 176, 176 * 10)
    assert h.counts.shape == (21,) and h.counts.sum() == 0
    assert (h.n1, h.n2, h.duration_ps) == (0, 0, 1000)


def test_single_pair_lands_in_plus_one_bin():
    s = TimeTagStream.from_events([(1000, 0), (1176, 1)])
    h = coincidences(s, 176, 176 * 5)
    assert h.counts[5 + 1] == 1 and h.counts.sum() == 1
    assert h.delays_ps[5 + 1] == 176


def test_negative_delay_sign():
    s = TimeTagStream.from_events([(1000, 1), (1352, 0)])
    h = coincidences(s, 176, 176 * 5)
    assert h.counts[5 - 2] == 1


def test_rejects_bad_window():
    with pytest.raises(ValueError):
        coincidences(TimeTagStream.empty(), 176, 1000)
    with pytest.raises(ValueError):
        CoincidenceAccumulator(0, 0)


stream_events = st.lists(st.tuples(st.integers(0, 5000), st.sampled_from([0, 1])), max_size=80)


@settings(max_examples=150, deadline=None)
@given(stream_events, st.integers(1, 50), st.integers(0, 20))
def test_matches_brute_force(evs, w, k):
    s = TimeTagStream.from_events(sorted(evs, key=lambda e: e[0]))
    h = coincidences(s, w, w * k)
    assert np.array_equal(h.counts, _brute_force(s, w, w * k))


@settings(max_examples=60, deadline=None)
@given(stream_events, st.integers(0, 10**9), st.lists(st.integers(0, 80), max_size=6))
def test_translation_and_chunking_invariance(evs, offset, cuts):
    s = TimeTagStream.from_events(sorted(evs, key=lambda e: e[0]))
    ref = coincidences(s, 17, 17 * 12)
    assert np.array_equal(coincidences(s.shifted(offset), 17, 17 * 12).counts, ref.counts)
    acc = CoincidenceAccumulator(17, 17 * 12)
    edges = [0, *sorted(min(c, len(s)) for c in cuts), len(s)]
    for a, b in zip(edges[:-1], edges[1:]):
        acc.add(s.timestamps[a:b], s.channels[a:b])
    assert np.array_equal(acc.histogram(s.duration_ps).counts, ref.counts)


def test_shard_merge_is_elementwise_sum():
    a = CoincidenceHistogram(10, 20, [1, 2, 3, 4, 5], 3, 4, 100)
    b = CoincidenceHistogram(10, 20, [1, 1, 1, 1, 1], 1, 1, 50)
    m = a.merge(b)
    assert m.counts.tolist() == [2, 3, 4, 5, 6] and (m.n1, m.n2, m.duration_ps) == (4, 5, 150)


def _poisson_pair(rate_hz, duration_ps, seed):
    rng = np.random.default_rng(seed)
    parts = []
    for c in (0, 1):
        n = rng.poisson(rate_hz * duration_ps / 1e12)
        parts.append((np.sort(rng.integers(0, duration_ps, n)), np.full(n, c, np.uint8)))
    t = np.concatenate([p[0] for p in parts])
    ch = np.concatenate([p[1] for p in parts])
    order = np.lexsort((ch, t))
    return TimeTagStream(t[order], ch[order], duration_ps)


def test_flat_histogram_for_independent_poisson_channels():
    r, T, w = 1e6, 10**12, 176
    s = _poisson_pair(r, T, seed=4)
    h = coincidences(s, w, w * 50)
    expected = r * r * (T / 1e12) * (w / 1e12)  # 176 counts per bin
    assert np.all(np.abs(h.counts - expected) <= 4 * math.sqrt(expected))
    g = normalize_g2(h)
    assert np.all(np.abs(g.values - 1.0) <= 4 * g.statistical_sigma.max())
    assert abs(g.values.mean() - 1.0) < 0.01


def test_normalization_formula_and_degenerate_inputs():
    h = CoincidenceHistogram(10, 10, [0, 0, 0], 5, 5, 1000)
    g = normalize_g2(h)
    assert np.all(g.values == 0)
    h = CoincidenceHistogram(10, 10, [4, 9, 16], 10, 20, 1000)
    g = normalize_g2(h)
    scale = 1000 / (10 * 20 * 10)
    assert np.allclose(g.values, np.array([4, 9, 16]) * scale)
    assert np.allclose(g.statistical_sigma, np.array([2, 3, 4]) * scale)
    for bad in (CoincidenceHistogram(10, 10, [1, 1, 1], 0, 5, 1000),
                CoincidenceHistogram(10, 10, [1, 1, 1], 5, 5, 0)):
        with pytest.raises(DegenerateInputError):
            normalize_g2(bad)


def test_rebinning_leaves_values_invariant():
    fine = CoincidenceHistogram(10, 40, [7] * 9, 50, 60, 10**6)
    coarse = CoincidenceHistogram(20, 40, [14] * 5, 50, 60, 10**6)
    assert np.allclose(normalize_g2(fine).values[:5], normalize_g2(coarse).values)


def test_correct_background_examples():
    assert abs(correct_background(0.64, 0.75) - 0.36) < 1e-12
    assert correct_background(0.3, 1.0) == 0.3
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            correct_background(0.5, bad)


@given(st.floats(1e-6, 1.0))
def test_unit_g2_is_fixed_point(rho):
    assert correct_background(1.0, rho) == 1.0


@given(st.floats(0, 10), st.floats(1e-3, 1.0))
def test_correction_inverts_mixing(g, rho):
    assert correct_background(mix_background(g, rho), rho) == pytest.approx(g, rel=1e-9, abs=1e-9)


def test_curve_correction_flags_negative_bins():
    h = CoincidenceHistogram(10, 10, [0, 100, 1], 10, 10, 1000)
    c = correct_curve(normalize_g2(h), 0.5)
    assert c.has_negative
    assert c.values[0] < 0  # kept, not clamped


# --- saturation fit ---------------------------------------------------------

def _sat(p, i_inf=4e6, ps=3.0):
    p = np.asarray(p, dtype=float)
    return i_inf * (p / (p + ps))


def test_fit_recovers_exact_parameters():
    p = np.array([1.0, 3.0, 9.0])
    f = fit_saturation(list(zip(p, _sat(p))))
    assert f.i_infinity_hz == pytest.approx(4e6, rel=1e-6)
    assert f.p_sat_mw == pytest.approx(3.0, rel=1e-6)
    assert f.residual_norm < 1e-3


POWERS = np.array([0.375, 0.75, 1.5, 3, 6, 12, 24, 48.0])


def test_fit_with_one_percent_noise_monte_carlo():
    est = []
    for seed in range(200):
        rng = np.random.default_rng(seed)
        y = _sat(POWERS) * (1 + 0.01 * rng.standard_normal(POWERS.size))
        f = fit_saturation(list(zip(POWERS, y)))
        est.append((f.i_infinity_hz / 4e6 - 1, f.p_sat_mw / 3 - 1))
    est = np.array(est)
    assert np.all(np.abs(est.mean(axis=0)) < 0.02)

    # first-order covariance of unweighted least squares under 1% relative noise
    d = POWERS + 3.0
    J = np.column_stack([POWERS / d, -4e6 * POWERS / d**2])
    sigma = np.diag((0.01 * _sat(POWERS)) ** 2)
    A = np.linalg.inv(J.T @ J)
    cov = A @ J.T @ sigma @ J @ A
    predicted = np.sqrt(np.diag(cov)) / np.array([4e6, 3.0])
    assert est.std(axis=0) == pytest.approx(predicted, rel=0.25)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 1000.0))
def test_fit_scale_equivariance(c):
    rng = np.random.default_rng(1)
    y = _sat(POWERS) * (1 + 0.01 * rng.standard_normal(POWERS.size))
    base = fit_saturation(list(zip(POWERS, y)))
    scaled = fit_saturation(list(zip(POWERS, c * y)))
    assert scaled.i_infinity_hz == pytest.approx(c * base.i_infinity_hz, rel=1e-6)
    assert scaled.p_sat_mw == pytest.approx(base.p_sat_mw, rel=1e-6)


@pytest.mark.parametrize("points, match", [
    ([(1, 1e6), (3, 2e6)], "at least 3"),
    ([(1, 1e6), (1, 1e6), (3, 2e6)], "distinct"),
    ([(0, 0), (1, 1e6), (3, 2e6)], "positive"),
    ([(1, 1e6), (2, 2e6), (3, 3e6), (4, 4e6)], "saturation"),
])
def test_fit_errors(points, match):
    with pytest.raises(FitError, match=match):
        fit_saturation(points)


def test_read_points_csv(tmp_path):
    p = tmp_path / "pts.csv"
    p.write_text("# comment\npower_mw,rate_hz\n1,1e6\n3,2e6\n")
    assert read_points_csv(p) == [(1.0, 1e6), (3.0, 2e6)]
    p.write_text("1,1e6\n3,2e6\n9\n")
    with pytest.raises(ValueError, match="line 3"):
        read_points_csv(p)
