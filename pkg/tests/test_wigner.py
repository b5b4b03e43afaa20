import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from zeitlin import wigner as w

F = Fraction

# Values computed once with sympy.physics.wigner (independent implementation)
# and frozen here as exact closed forms.
FROZEN_3J = [
    ((1, 1, 1, 1, 0, -1), -math.sqrt(6) / 6),
    ((2, 1, 1, 0, 1, -1), math.sqrt(30) / 30),
    ((F(5, 2), 1, F(5, 2), F(-3, 2), 1, F(1, 2)), 2 * math.sqrt(210) / 105),
    ((10, 8, 6, 3, -2, -1), -11 * math.sqrt(520030) / 111435),
    ((F(7, 2), 3, F(5, 2), F(1, 2), -2, F(3, 2)), math.sqrt(70) / 42),
]
FROZEN_6J = [
    ((1, 1, 1, F(5, 2), F(5, 2), F(5, 2)), -math.sqrt(35) / 105),
    ((2, 2, 2, 2, 2, 2), -3 / 70),
    ((3, 2, 1, F(9, 2), F(9, 2), F(7, 2)), -4 * math.sqrt(462) / 1155),
    ((5, 4, 3, F(5, 2), F(7, 2), F(3, 2)), math.sqrt(546) / 252),
]


@pytest.mark.parametrize("args,value", FROZEN_3J)
def test_three_j_frozen(args, value):
    assert w.three_j(*args) == pytest.approx(value, rel=1e-13)
    assert w.exact_to_float(w.three_j_exact(*args)) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("args,value", FROZEN_6J)
def test_six_j_frozen(args, value):
    assert w.six_j(*args) == pytest.approx(value, rel=1e-13)
    assert w.exact_to_float(w.six_j_exact(*args)) == pytest.approx(value, rel=1e-15)


def test_three_j_parity_zero():
    assert w.three_j(1, 1, 1, 0, 0, 0) == 0.0
    assert w.three_j_exact(1, 1, 1, 0, 0, 0) == (0, Fraction(0))


@pytest.mark.parametrize("l", range(0, 12))
def test_three_j_closed_form_l_l_0(l):
    for m in range(-l, l + 1):
        expect = (-1) ** (l - m) / math.sqrt(2 * l + 1)
        assert w.three_j(l, l, 0, m, -m, 0) == pytest.approx(expect, rel=1e-13)


def test_three_j_one_one_zero():
    assert w.three_j(1, 1, 0, 1, -1, 0) == pytest.approx(1 / math.sqrt(3), rel=1e-14)


def test_selection_rules_give_exact_zero():
    assert w.three_j(2, 1, 1, 1, 1, 0) == 0.0          # m sum
    assert w.three_j(5, 1, 1, 0, 0, 0) == 0.0          # triangle
    assert w.six_j(5, 1, 1, 1, 1, 1) == 0.0
    assert w.six_j(1, 1, 1, F(1, 2), 1, 1) == 0.0      # half-integer triad sum


def test_domain_errors():
    with pytest.raises(ValueError):
        w.three_j(1, 1, 1, 2, -1, -1)
    with pytest.raises(ValueError):
        w.three_j(1, 1, 1, F(1, 2), 0, F(-1, 2))        # parity mismatch of j and m
    with pytest.raises(ValueError):
        w.six_j(-1, 1, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        w.HalfInt.of(0.3)


@pytest.mark.parametrize("j1,j2,j3", [(1, 2, 2), (3, 4, 5), (F(3, 2), F(5, 2), 2), (6, 6, 6)])
def test_six_j_closed_form_zero_entry(j1, j2, j3):
    expect = (-1) ** int(j1 + j2 + j3) / math.sqrt((2 * j2 + 1) * (2 * j3 + 1))
    assert w.six_j(j1, j2, j3, 0, j3, j2) == pytest.approx(expect, rel=1e-13)


def test_six_j_level_five_matches_exact():
    # {1 1 1; N/2 N/2 N/2} at N = 5
    h = F(5, 2)
    assert w.six_j(1, 1, 1, h, h, h) == pytest.approx(w.exact_to_float(w.six_j_exact(1, 1, 1, h, h, h)),
                                                        rel=1e-14)


def test_half_int_roundtrip():
    assert w.HalfInt.of(F(5, 2)).twice_value == 5
    assert w.HalfInt.of(3).is_integer
    assert float(-w.HalfInt(3)) == -1.5


def test_log_factorial_table():
    t = w.LogFactorialTable(200)
    assert t.values[0] == 0
    n = np.arange(1, 201)
    assert np.max(np.abs(np.diff(t.values.astype(float)) - np.log(n))) < 1e-12
    e = w.LogFactorialTable(30, exact_mode=True)
    assert e.factorial(10) == math.factorial(10)


# --- property tests --------------------------------------------------------

@st.composite
def three_j_args(draw, jmax2=40):
    t1 = draw(st.integers(0, jmax2))
    t2 = draw(st.integers(0, jmax2))
    lo, hi = abs(t1 - t2), min(t1 + t2, jmax2)
    t3 = draw(st.integers(lo, hi).filter(lambda t: (t1 + t2 + t) % 2 == 0))
    u1 = draw(st.integers(-t1, t1).filter(lambda u: (u - t1) % 2 == 0))
    u2 = draw(st.integers(-t2, t2).filter(lambda u: (u - t2) % 2 == 0))
    u3 = -u1 - u2
    assume(abs(u3) <= t3)
    return tuple(F(x, 2) for x in (t1, t2, t3, u1, u2, u3))


@st.composite
def six_j_args(draw, jmax2=40):
    """Admissible 6j arguments built triad by triad, as twice-values."""
    def partner(a, b):
        lo, hi = abs(a - b), min(a + b, jmax2)
        return draw(st.integers(0, (hi - lo) // 2)) * 2 + lo

    t1 = draw(st.integers(0, jmax2))
    t2 = draw(st.integers(0, jmax2))
    t3 = partner(t1, t2)
    t4 = draw(st.integers(0, jmax2))
    t5 = partner(t4, t3)
    lo = max(abs(t1 - t5), abs(t4 - t2))
    hi = min(t1 + t5, t4 + t2, jmax2)
    assume(lo <= hi)
    t6 = lo + 2 * draw(st.integers(0, (hi - lo) // 2))
    return tuple(F(x, 2) for x in (t1, t2, t3, t4, t5, t6))


@given(three_j_args())
def test_three_j_matches_exact(args):
    exact = w.exact_to_float(w.three_j_exact(*args))
    val = w.three_j(*args)
    assert abs(val - exact) <= 1e-10 * max(abs(exact), 1e-300) or (exact == 0 and abs(val) < 1e-15)


@given(six_j_args())
def test_six_j_matches_exact(args):
    exact = w.exact_to_float(w.six_j_exact(*args))
    val = w.six_j(*args)
    assert abs(val - exact) <= 1e-10 * max(abs(exact), 1e-300) or (exact == 0 and abs(val) < 1e-15)


@given(three_j_args(jmax2=30))
def test_three_j_symmetries(args):
    j1, j2, j3, m1, m2, m3 = args
    v = w.three_j(*args)
    phase = (-1) ** int(j1 + j2 + j3)
    # even (cyclic) permutations
    assert w.three_j(j2, j3, j1, m2, m3, m1) == pytest.approx(v, abs=1e-14)
    assert w.three_j(j3, j1, j2, m3, m1, m2) == pytest.approx(v, abs=1e-14)
    # odd permutation and m -> -m
    assert w.three_j(j2, j1, j3, m2, m1, m3) == pytest.approx(phase * v, abs=1e-14)
    assert w.three_j(j1, j2, j3, -m1, -m2, -m3) == pytest.approx(phase * v, abs=1e-14)


@given(six_j_args(jmax2=30))
def test_six_j_column_and_row_symmetry(args):
    j1, j2, j3, j4, j5, j6 = args
    v = w.six_j(*args)
    assert w.six_j(j2, j1, j3, j5, j4, j6) == pytest.approx(v, abs=1e-14)
    assert w.six_j(j4, j5, j3, j1, j2, j6) == pytest.approx(v, abs=1e-14)


@pytest.mark.parametrize("j1,j2", [(1, 1), (2, 3), (4, 4), (5, 10), (10, 10)])
def test_three_j_orthogonality(j1, j2):
    lo, hi = abs(j1 - j2), j1 + j2
    for j3 in range(lo, hi + 1):
        for j3p in (j3, min(j3 + 1, hi)):
            for m3 in range(-min(j3, j3p), min(j3, j3p) + 1):
                m1 = np.arange(-j1, j1 + 1)
                m2 = -m3 - m1
                a = w.three_j_array(j1, j2, j3, m1, m2, m3)
                b = w.three_j_array(j1, j2, j3p, m1, m2, m3)
                s = (2 * j3 + 1) * np.sum(a * b)
                assert s == pytest.approx(1.0 if j3 == j3p else 0.0, abs=1e-10)


@pytest.mark.parametrize("lb", range(0, 6))
def test_collapse_identity(lb):
    # sum_m (-1)^m 3j(l l lb; m -m 0) = (-1)^l sqrt(2l+1) delta_{lb,0}
    for l in range(0, 21):
        if lb > 2 * l:
            continue
        m = np.arange(-l, l + 1)
        s = np.sum((-1.0) ** m * w.three_j_array(l, l, lb, m, -m, 0))
        assert s == pytest.approx((-1) ** l * math.sqrt(2 * l + 1) if lb == 0 else 0.0, abs=1e-10)


def test_three_j_block_layout():
    blk = w.three_j_block(2, 3, 4)
    assert blk.shape == (5, 7)
    assert blk[2 + 1, 3 - 2] == pytest.approx(w.three_j(2, 3, 4, 1, -2, 1), abs=1e-15)


# --- envelopes -------------------------------------------------------------


def test_edmonds_bound_value_and_scaling():
    assert w.edmonds_bound(1, 10, 10, 101) == pytest.approx(1 / math.sqrt(21 * 102))
    ratios = [w.edmonds_bound(1, 3, 3, 4 * M) / w.edmonds_bound(1, 3, 3, M) for M in (100, 1000, 10000)]
    assert abs(ratios[-1] - 0.5) < abs(ratios[0] - 0.5) + 1e-15
    assert ratios[-1] == pytest.approx(0.5, abs=1e-4)


@pytest.mark.parametrize("N", [33, 65])
def test_edmonds_envelope_dominates_six_j(N):
    h = N / 2
    for l in (1, 2, 3):
        for lp in range(1, N):
            for lb in range(abs(l - lp) + 1, min(l + lp, N - 1) + 1, 2):
                assert abs(w.six_j(l, lp, lb, h, h, h)) <= w.edmonds_bound(l, lp, lb, N)


def test_ponzano_regge_formula():
    n = 8  # (N^{1/2}, N^{1/2}, N^{1/2}) at N = 64
    assert w.ponzano_regge_bound(n, n, n, 64) == pytest.approx(1 / math.sqrt(64 ** 3 * 17 ** 3))
    assert w.in_ponzano_regge_regime(8, 8, 8, 64) and not w.in_ponzano_regge_regime(7, 8, 8, 64)
    vals = [w.ponzano_regge_bound(l, 9, 9, 64) for l in range(8, 16)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def _pr_ratio(N):
    h = N / 2
    worst = 0.0
    for l in range(1, N):
        for lp in range(l, N):
            for lb in range(abs(l - lp) + 1, min(l + lp, N - 1) + 1, 2):
                if w.in_ponzano_regge_regime(l, lp, lb, N):
                    worst = max(worst, abs(w.six_j(l, lp, lb, h, h, h)) / w.ponzano_regge_bound(l, lp, lb, N))
    return worst


def test_ponzano_regge_envelope_needs_growing_constant():
    # With the N^{-3/2} prefactor the ratio |6j| / bound is not uniformly
    # bounded over large triples: it grows roughly like N^1.8 here.
    r17, r33 = _pr_ratio(17), _pr_ratio(33)
    assert r33 > 2.5 * r17 > 0
