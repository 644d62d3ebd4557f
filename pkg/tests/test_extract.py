import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spqrng.extract import (BitFileError, BitKind, BitSequence, DegenerateInputError,
                            VonNeumannExtractor, assign_bits, autocorrelation, bias, read_bits,
                            von_neumann, von_neumann_chunks, write_bits)
from spqrng.source_sim import PS_PER_S, EmitterConfig, simulate
from spqrng.timetags import TimeTagStream


def vn_reference(s: str) -> str:
    """Pairwise rule written out over strings."""
    out = []
    for i in range(0, len(s) - 1, 2):
        pair = s[i:i + 2]
        if pair == "01":
            out.append("0")
        elif pair == "10":
            out.append("1")
    return "".join(out)


def test_assign_bits_rule():
    s = TimeTagStream.from_events([(10, 0), (20, 1), (30, 1)])
    b = assign_bits(s)
    assert str(b) == "011" and b.kind is BitKind.RAW
    assert len(assign_bits(TimeTagStream.empty())) == 0


def test_assign_bits_tie_order_ch1_first():
    s = TimeTagStream.from_events([(5, 1), (5, 0), (9, 1)])
    assert str(assign_bits(s)) == "011"


def test_assign_bits_follows_transmittance():
    cfg = EmitterConfig(transmittance=0.5814, duration_ps=2 * PS_PER_S, seed=12)
    p0, _ = bias(assign_bits(simulate(cfg)))
    assert abs(p0 - 0.5814) < 0.01


@pytest.mark.parametrize("inp, out", [("0011", ""), ("0110", "01"), ("", ""), ("1", ""),
                                      ("10101", "11"), ("0100101100", "01")])
def test_von_neumann_examples(inp, out):
    r = von_neumann(BitSequence.from_string(inp))
    assert str(r) == out == vn_reference(inp)
    assert r.kind is BitKind.UNBIASED


bitstrings = st.text(alphabet="01", max_size=300)


@given(bitstrings)
def test_von_neumann_matches_reference(s):
    assert str(von_neumann(BitSequence.from_string(s))) == vn_reference(s)


@given(bitstrings)
def test_swap_symmetry(s):
    comp = s.translate(str.maketrans("01", "10"))
    a = str(von_neumann(BitSequence.from_string(s)))
    b = str(von_neumann(BitSequence.from_string(comp)))
    assert b == a.translate(str.maketrans("01", "10"))


@settings(max_examples=200)
@given(bitstrings, st.lists(st.integers(0, 300), max_size=10))
def test_streaming_equals_batch(s, cuts):
    x = np.frombuffer(s.encode(), np.uint8) - ord("0")
    edges = [0, *sorted(min(c, len(s)) for c in cuts), len(s)]
    chunks = [x[a:b] for a, b in zip(edges[:-1], edges[1:])]
    assert "".join(map(str, von_neumann_chunks(chunks).tolist())) == vn_reference(s)


def test_extractor_counts_and_finalize():
    ext = VonNeumannExtractor()
    out = ext.feed(np.array([0, 1, 1], np.uint8))
    out2 = ext.feed(np.array([0], np.uint8))
    assert out.tolist() == [0] and out2.tolist() == [1]
    ext.feed(np.array([1], np.uint8))
    assert ext.finalize() == 1
    assert ext.bits_in == 5 and ext.bits_out == 2


def test_yield_and_bias_for_iid_biased_input():
    p1, n = 0.4186, 2_000_000
    rng = np.random.default_rng(7)
    x = (rng.random(n) < p1).astype(np.uint8)
    out = von_neumann(BitSequence.from_array(x))
    pairs = n // 2
    q = 2 * p1 * (1 - p1)
    assert abs(out.n - pairs * q) <= 3 * math.sqrt(pairs * q * (1 - q))
    assert abs(bias(out)[0] - 0.5) <= 3 * 0.5 / math.sqrt(out.n)


def test_bias_examples():
    assert bias(BitSequence.from_string("0001")) == (0.75, 0.25)
    assert bias(BitSequence.from_string("0000")) == (1.0, 0.0)
    with pytest.raises(DegenerateInputError):
        bias(BitSequence.from_string(""))


def test_bit_sequence_invariants():
    b = BitSequence.from_string("1011001")
    assert (b.n, b.counts0, b.counts1) == (7, 3, 4)
    with pytest.raises(ValueError):
        BitSequence(b.packed, 7, BitKind.RAW, 4, 3)
    with pytest.raises(ValueError):
        BitSequence(b.packed, 7, BitKind.RAW, 2, 4)


def _autocorr_reference(x, k):
    m = sum(x) / len(x)
    d = [v - m for v in x]
    return sum(d[i] * d[i + k] for i in range(len(x) - k)) / sum(v * v for v in d)


def test_autocorrelation_alternating_closed_form():
    n = 1000
    rep = autocorrelation(BitSequence.from_string("01" * (n // 2)), max_lag=4)
    # mean 1/2, d = +-1/2: sum over n-k products of sign (-1)^k, over n terms
    assert rep.coefficients[0] == pytest.approx(-(n - 1) / n, abs=1e-12)
    assert rep.coefficients[1] == pytest.approx((n - 2) / n, abs=1e-12)
    assert rep.lags.tolist() == [1, 2, 3, 4]


@settings(max_examples=40)
@given(st.text(alphabet="01", min_size=12, max_size=120).filter(lambda s: "0" in s and "1" in s))
def test_autocorrelation_matches_reference(s):
    rep = autocorrelation(BitSequence.from_string(s), max_lag=10)
    x = [int(c) for c in s]
    ref = [_autocorr_reference(x, k) for k in range(1, 11)]
    assert np.allclose(rep.coefficients, ref, atol=1e-12)
    assert np.all(np.abs(rep.coefficients) <= 1 + 1e-12)


def test_autocorrelation_iid_null():
    n = 1_000_000
    x = np.random.default_rng(3).integers(0, 2, n).astype(np.uint8)
    rep = autocorrelation(BitSequence.from_array(x))
    assert np.mean(np.abs(rep.coefficients) < 3 / math.sqrt(n)) >= 0.99


def test_autocorrelation_errors():
    with pytest.raises(DegenerateInputError):
        autocorrelation(BitSequence.from_string("1111"), max_lag=2)
    with pytest.raises(DegenerateInputError):
        autocorrelation(BitSequence.from_string("0101"), max_lag=100)


@given(bitstrings)
def test_bit_file_roundtrip(s):
    b = BitSequence.from_string(s)
    buf = io.BytesIO()
    n = write_bits(b, buf)
    assert n == 16 + (len(s) + 7) // 8
    buf.seek(0)
    assert read_bits(buf) == b


def test_bit_file_layout_msb_first():
    buf = io.BytesIO()
    write_bits(BitSequence.from_string("1000000011"), buf)
    raw = buf.getvalue()
    assert raw[:8] == b"QRNGBITS"
    assert int.from_bytes(raw[8:16], "little") == 10
    assert raw[16:] == bytes([0b10000000, 0b11000000])


def test_bit_file_errors():
    with pytest.raises(BitFileError) as exc:
        read_bits(io.BytesIO(b"NOTBITS!" + bytes(8)))
    assert exc.value.offset == 0
    with pytest.raises(BitFileError):
        read_bits(io.BytesIO(b"QRNGBITS" + (16).to_bytes(8, "little") + b"\x00"))
    with pytest.raises(BitFileError):
        read_bits(io.BytesIO(b"QRNGBITS" + (1).to_bytes(8, "little") + b"\x01"))
