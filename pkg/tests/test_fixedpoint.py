import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcaps.fixedpoint import (FixedPointFormat, Quantizer, RandomStream,
                              RoundingScheme, epsilon, quantize_tensor,
                              quantize_value, representable_range)

TRN, RTN, SR = RoundingScheme.TRN, RoundingScheme.RTN, RoundingScheme.SR


def rational_quantize(x: float, ni: int, nf: int, scheme: RoundingScheme) -> float:
    """Independent oracle in exact rational arithmetic (deterministic
    schemes only)."""
    eps = Fraction(1, 2 ** nf)
    y = Fraction(x) / eps
    if scheme is TRN:
        k = math.floor(y)
    elif scheme is RTN:
        k = math.floor(y + Fraction(1, 2))
    else:
        raise ValueError("oracle covers deterministic schemes only")
    lo = Fraction(-(2 ** (ni - 1)))
    hi = Fraction(2 ** (ni - 1)) - eps
    return float(min(max(k * eps, lo), hi))


class TestFormat:
    def test_epsilon_examples(self):
        assert epsilon(FixedPointFormat(1, 0)) == 1.0
        assert epsilon(FixedPointFormat(1, 3)) == 0.125
        assert epsilon(FixedPointFormat(2, 8)) == 0.00390625

    def test_range_examples(self):
        assert representable_range(FixedPointFormat(1, 3)) == (-1.0, 0.875)
        assert representable_range(FixedPointFormat(2, 0)) == (-2.0, 1.0)
        assert representable_range(FixedPointFormat(1, 0)) == (-1.0, 0.0)

    def test_wordlength(self):
        assert FixedPointFormat(1, 7).wordlength == 8

    def test_invalid(self):
        with pytest.raises(ValueError):
            FixedPointFormat(0, 4)
        with pytest.raises(ValueError):
            FixedPointFormat(1, -1)


class TestQuantizeValue:
    def test_zero_on_every_grid(self):
        for scheme in (TRN, RTN, SR):
            rng = RandomStream(0, 0)
            for nf in (0, 3, 9):
                assert quantize_value(0.0, FixedPointFormat(1, nf), scheme, rng) == 0.0

    def test_trn_example(self):
        fmt = FixedPointFormat(1, 3)
        assert quantize_value(0.3, fmt, TRN) == rational_quantize(0.3, 1, 3, TRN) == 0.25

    def test_rtn_example(self):
        fmt = FixedPointFormat(1, 3)
        assert quantize_value(0.3, fmt, RTN) == rational_quantize(0.3, 1, 3, RTN) == 0.25

    def test_saturation(self):
        fmt = FixedPointFormat(1, 3)
        assert quantize_value(1.5, fmt, TRN) == 0.875
        assert quantize_value(-7.0, fmt, RTN) == -1.0

    def test_rtn_half_rounds_up(self):
        fmt = FixedPointFormat(1, 3)
        assert quantize_value(0.0625, fmt, RTN) == 0.125
        assert quantize_value(-0.0625, fmt, RTN) == 0.0

    def test_sr_halfway_split(self):
        fmt = FixedPointFormat(1, 3)
        rng = RandomStream(7, 0)
        draws = np.array([quantize_value(0.0625, fmt, SR, rng) for _ in range(4000)])
        assert set(np.unique(draws)) == {0.0, 0.125}
        assert abs((draws == 0.125).mean() - 0.5) < 0.03

    def test_sr_requires_stream(self):
        with pytest.raises(ValueError, match="RandomStream"):
            quantize_value(0.3, FixedPointFormat(1, 3), SR)

    def test_non_finite_rejected(self):
        for bad in (math.nan, math.inf, -math.inf):
            with pytest.raises(ValueError, match="non-finite"):
                quantize_value(bad, FixedPointFormat(1, 3), TRN)

    @given(st.floats(-0.999, 0.999), st.integers(0, 12),
           st.sampled_from([TRN, RTN]))
    @settings(max_examples=300)
    def test_matches_rational_oracle(self, x, nf, scheme):
        got = quantize_value(x, FixedPointFormat(1, nf), scheme)
        assert got == rational_quantize(x, 1, nf, scheme)


class TestQuantizeTensor:
    def test_zeros(self):
        fmt = FixedPointFormat(1, 4)
        out = quantize_tensor(np.zeros((3, 2)), fmt, TRN)
        assert np.array_equal(out, np.zeros((3, 2)))

    def test_on_grid_unchanged(self):
        fmt = FixedPointFormat(1, 3)
        t = np.array([0.125, -0.5, 0.875, 0.0])
        assert np.array_equal(quantize_tensor(t, fmt, TRN), t)

    def test_trn_pair_example(self):
        fmt = FixedPointFormat(1, 3)
        out = quantize_tensor(np.array([0.3, -0.3]), fmt, TRN)
        assert np.array_equal(out, np.array([0.25, -0.375]))

    def test_idempotent_deterministic_schemes(self):
        gen = np.random.default_rng(3)
        t = gen.uniform(-1, 0.9, size=(17, 5))
        for scheme in (TRN, RTN):
            fmt = FixedPointFormat(1, 6)
            once = quantize_tensor(t, fmt, scheme)
            assert np.array_equal(quantize_tensor(once, fmt, scheme), once)

    def test_sr_on_grid_unchanged(self):
        # frac is exactly zero on the grid, so SR never rounds up
        fmt = FixedPointFormat(1, 3)
        t = np.array([0.25, -0.875, 0.0])
        out = quantize_tensor(t, fmt, SR, RandomStream(0, 5))
        assert np.array_equal(out, t)

    def test_sr_determinism(self):
        fmt = FixedPointFormat(1, 5)
        t = np.random.default_rng(11).uniform(-1, 0.9, size=(64,))
        a = quantize_tensor(t, fmt, SR, RandomStream(42, 9))
        b = quantize_tensor(t, fmt, SR, RandomStream(42, 9))
        assert np.array_equal(a, b)
        c = quantize_tensor(t, fmt, SR, RandomStream(42, 10))
        assert not np.array_equal(a, c)

    def test_sr_row_major_draw_order(self):
        # a tensor call consumes the same draws as elementwise calls
        fmt = FixedPointFormat(1, 4)
        t = np.random.default_rng(2).uniform(-1, 0.9, size=(3, 4))
        whole = quantize_tensor(t, fmt, SR, RandomStream(5, 1))
        stream = RandomStream(5, 1)
        one_by_one = np.array([quantize_value(v, fmt, SR, stream)
                               for v in t.ravel()]).reshape(t.shape)
        assert np.array_equal(whole, one_by_one)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            quantize_tensor(np.array([0.1, np.nan]), FixedPointFormat(1, 3), TRN)


class TestRoundingLaws:
    def test_rtn_error_bound(self):
        gen = np.random.default_rng(0)
        for nf in range(0, 13):
            fmt = FixedPointFormat(1, nf)
            lo, hi = fmt.representable_range
            x = gen.uniform(lo, hi, size=2000)
            err = quantize_tensor(x, fmt, RTN) - x
            assert np.all(np.abs(err) <= fmt.epsilon / 2 + 1e-15)

    def test_trn_error_bound(self):
        gen = np.random.default_rng(1)
        for nf in range(0, 13):
            fmt = FixedPointFormat(1, nf)
            lo, hi = fmt.representable_range
            x = gen.uniform(lo, hi, size=2000)
            err = quantize_tensor(x, fmt, TRN) - x
            assert np.all(err <= 0.0) and np.all(err > -fmt.epsilon)

    def test_trn_negative_bias(self):
        fmt = FixedPointFormat(1, 4)
        gen = np.random.default_rng(2)
        lo, hi = fmt.representable_range
        x = gen.uniform(lo, hi, size=100_000)
        err = quantize_tensor(x, fmt, TRN) - x
        stderr = err.std(ddof=1) / math.sqrt(err.size)
        assert err.mean() < -3 * stderr

    def test_sr_unbiased(self):
        fmt = FixedPointFormat(1, 4)
        for x in (0.3, -0.77, 0.031):
            t = np.full(100_000, x)
            out = quantize_tensor(t, fmt, SR, RandomStream(13, 0))
            bound = 3 * (fmt.epsilon / 2) / math.sqrt(t.size)
            assert abs(out.mean() - x) <= bound


def test_quantizer_bundle():
    q = Quantizer(FixedPointFormat(1, 3), TRN)
    assert q.value(0.3) == 0.25
    assert np.array_equal(q.tensor(np.array([0.3])), np.array([0.25]))
