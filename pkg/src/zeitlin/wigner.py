"""Wigner 3j and 6j symbols.

Floating values come from the Racah single sums. The first term of each sum
is placed in log space and the remaining terms are generated by their exact
integer ratios in extended precision, so the alternating sum keeps roughly
13 significant digits up to j ~ 50 on x86-64 (where ``np.longdouble`` is the
80-bit format). The ``*_exact`` functions redo the sums in rational
arithmetic and are meant for cross-validation only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

_LD = np.longdouble


@dataclass(frozen=True, order=True)
class HalfInt:
    """An integer or half-integer, stored as twice its value."""

    twice_value: int

    @classmethod
    def of(cls, x: "Number") -> "HalfInt":
        if isinstance(x, HalfInt):
            return x
        if isinstance(x, Fraction):
            if (2 * x).denominator != 1:
                raise ValueError(f"{x} is not a multiple of 1/2")
            return cls(int(2 * x))
        t = 2 * x
        ti = int(round(t))
        if abs(t - ti) > 1e-9:
            raise ValueError(f"{x} is not a multiple of 1/2")
        return cls(ti)

    @property
    def is_integer(self) -> bool:
        return self.twice_value % 2 == 0

    def __float__(self) -> float:
        return self.twice_value / 2

    def __neg__(self) -> "HalfInt":
        return HalfInt(-self.twice_value)

    def __repr__(self) -> str:
        if self.is_integer:
            return f"HalfInt({self.twice_value // 2})"
        return f"HalfInt({self.twice_value}/2)"


Number = Union[int, float, Fraction, HalfInt]


def _tw(x: Number) -> int:
    return HalfInt.of(x).twice_value


class LogFactorialTable:
    """Growable table of log(n!) in extended precision.

    ``exact_mode`` switches ``factorial`` to Python integers; the log values
    are kept either way.
    """

    def __init__(self, max_n: int = 256, exact_mode: bool = False):
        self.exact_mode = exact_mode
        self.max_n = -1
        self.values = np.zeros(0, dtype=_LD)
        self._grow(max_n)

    def _grow(self, n: int) -> None:
        if n <= self.max_n:
            return
        n = max(n, 2 * self.max_n, 16)
        logs = np.log(np.arange(1, n + 1, dtype=_LD))
        self.values = np.concatenate([np.zeros(1, dtype=_LD), np.cumsum(logs)])
        self.max_n = n

    def __getitem__(self, n):
        n = np.asarray(n)
        if n.size:
            if n.min() < 0:
                raise ValueError("negative factorial argument")
            self._grow(int(n.max()))
        return self.values[n]

    def factorial(self, n: int):
        if self.exact_mode:
            return math.factorial(n)
        return float(np.exp(self[n]))


_LOGFACT = LogFactorialTable()


def _validate_jm(tj: int, tm: int) -> None:
    if tj < 0:
        raise ValueError("angular momentum must be non-negative")
    if abs(tm) > tj:
        raise ValueError("|m| exceeds j")
    if (tj - tm) % 2:
        raise ValueError("j and m must both be integers or both half-integers")


# ---------------------------------------------------------------------------
# 3j


def _three_j_twice(t1, t2, t3, u1, u2, u3):
    """Vectorized 3j over broadcast arrays of twice-values (assumed valid |m|<=j)."""
    t1, t2, t3, u1, u2, u3 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.int64) for v in (t1, t2, t3, u1, u2, u3)))
    shape = t1.shape
    t1, t2, t3, u1, u2, u3 = (v.ravel() for v in (t1, t2, t3, u1, u2, u3))
    ok = (u1 + u2 + u3 == 0)
    ok &= (t3 >= np.abs(t1 - t2)) & (t3 <= t1 + t2)
    ok &= ((t1 + t2 + t3) % 2 == 0)
    ok &= ((t1 - u1) % 2 == 0) & ((t2 - u2) % 2 == 0) & ((t3 - u3) % 2 == 0)
    ok &= (np.abs(u1) <= t1) & (np.abs(u2) <= t2) & (np.abs(u3) <= t3)
    out = np.zeros(t1.shape, dtype=float)
    if not ok.any():
        return out.reshape(shape)
    idx = np.nonzero(ok)
    t1, t2, t3, u1, u2, u3 = (v[idx] for v in (t1, t2, t3, u1, u2, u3))

    a = (t1 + t2 - t3) // 2
    b = (t1 - u1) // 2
    c = (t2 + u2) // 2
    d = (t3 - t2 + u1) // 2
    e = (t3 - t1 - u2) // 2
    kmin = np.maximum(0, np.maximum(-d, -e))
    kmax = np.minimum(a, np.minimum(b, c))
    live = kmin <= kmax

    term = np.ones(a.shape, dtype=_LD)
    total = np.ones(a.shape, dtype=_LD)
    if a.size:
        k0 = int(kmin[live].min()) if live.any() else 0
        k1 = int(kmax[live].max()) if live.any() else 0
        for k in range(k0, k1):
            act = live & (k >= kmin) & (k < kmax)
            if not act.any():
                continue
            num = ((a - k) * (b - k) * (c - k)).astype(_LD)
            den = ((k + 1) * (d + k + 1) * (e + k + 1)).astype(_LD)
            den = np.where(act, den, 1)
            term = np.where(act, -term * num / den, term)
            total = np.where(act, total + term, total)

    LF = _LOGFACT
    km = np.where(live, kmin, 0)
    lt0 = -(LF[km] + LF[np.maximum(a - km, 0)] + LF[np.maximum(b - km, 0)]
            + LF[np.maximum(c - km, 0)] + LF[np.maximum(d + km, 0)]
            + LF[np.maximum(e + km, 0)])
    pre = 0.5 * (LF[a] + LF[(t1 - t2 + t3) // 2] + LF[(-t1 + t2 + t3) // 2]
                 - LF[(t1 + t2 + t3) // 2 + 1]
                 + LF[(t1 + u1) // 2] + LF[(t1 - u1) // 2]
                 + LF[(t2 + u2) // 2] + LF[(t2 - u2) // 2]
                 + LF[(t3 + u3) // 2] + LF[(t3 - u3) // 2])
    sgn = 1 - 2 * (((t1 - t2 - u3) // 2 + km) % 2)
    val = sgn * total * np.exp(pre + lt0)
    out[idx] = np.where(live, val.astype(float), 0.0)
    return out.reshape(shape)


def three_j(j1: Number, j2: Number, j3: Number,
            m1: Number, m2: Number, m3: Number) -> float:
    """Wigner 3j symbol (j1 j2 j3; m1 m2 m3)."""
    t = [_tw(v) for v in (j1, j2, j3)]
    u = [_tw(v) for v in (m1, m2, m3)]
    for tj, tm in zip(t, u):
        _validate_jm(tj, tm)
    return float(_three_j_twice(*t, *u))


def three_j_array(j1, j2, j3, m1, m2, m3) -> np.ndarray:
    """Broadcasting 3j over arrays of (half-)integer values.

    Entries with |m| > j or broken selection rules give 0 rather than raising.
    """
    tw = [np.rint(2 * np.asarray(v, dtype=float)).astype(np.int64)
          for v in (j1, j2, j3, m1, m2, m3)]
    return _three_j_twice(*tw)


def three_j_block(l1: int, l2: int, l3: int) -> np.ndarray:
    """All 3j(l1 l2 l3; m1 m2 -m1-m2) as an array indexed [m1+l1, m2+l2]."""
    m1 = np.arange(-l1, l1 + 1)[:, None]
    m2 = np.arange(-l2, l2 + 1)[None, :]
    return _three_j_twice(2 * l1, 2 * l2, 2 * l3, 2 * m1, 2 * m2, -2 * (m1 + m2))


def three_j_exact(j1: Number, j2: Number, j3: Number,
                  m1: Number, m2: Number, m3: Number) -> tuple[int, Fraction]:
    """Exact 3j as (sign, square) so the value is sign*sqrt(square)."""
    t1, t2, t3 = (_tw(v) for v in (j1, j2, j3))
    u1, u2, u3 = (_tw(v) for v in (m1, m2, m3))
    for tj, tm in zip((t1, t2, t3), (u1, u2, u3)):
        _validate_jm(tj, tm)
    if u1 + u2 + u3 != 0 or not abs(t1 - t2) <= t3 <= t1 + t2 or (t1 + t2 + t3) % 2:
        return 0, Fraction(0)
    f = math.factorial
    a = (t1 + t2 - t3) // 2
    b = (t1 - u1) // 2
    c = (t2 + u2) // 2
    d = (t3 - t2 + u1) // 2
    e = (t3 - t1 - u2) // 2
    s = Fraction(0)
    for k in range(max(0, -d, -e), min(a, b, c) + 1):
        s += Fraction((-1) ** k, f(k) * f(a - k) * f(b - k) * f(c - k) * f(d + k) * f(e + k))
    if s == 0:
        return 0, Fraction(0)
    pref = Fraction(f(a) * f((t1 - t2 + t3) // 2) * f((-t1 + t2 + t3) // 2),
                    f((t1 + t2 + t3) // 2 + 1))
    for tj, tm in ((t1, u1), (t2, u2), (t3, u3)):
        pref *= f((tj + tm) // 2) * f((tj - tm) // 2)
    sign = (-1) ** (((t1 - t2 - u3) // 2) % 2) * (1 if s > 0 else -1)
    return sign, pref * s * s


def exact_to_float(sq: tuple[int, Fraction]) -> float:
    sign, square = sq
    return sign * math.sqrt(float(square)) if sign else 0.0


# ---------------------------------------------------------------------------
# 6j


def _triad_ok(x, y, z):
    return (z >= np.abs(x - y)) & (z <= x + y) & ((x + y + z) % 2 == 0)


def _six_j_twice(t1, t2, t3, t4, t5, t6):
    t1, t2, t3, t4, t5, t6 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.int64) for v in (t1, t2, t3, t4, t5, t6)))
    shape = t1.shape
    t1, t2, t3, t4, t5, t6 = (v.ravel() for v in (t1, t2, t3, t4, t5, t6))
    ok = (_triad_ok(t1, t2, t3) & _triad_ok(t1, t5, t6)
          & _triad_ok(t4, t2, t6) & _triad_ok(t4, t5, t3))
    out = np.zeros(t1.shape, dtype=float)
    if not ok.any():
        return out.reshape(shape)
    idx = np.nonzero(ok)
    t1, t2, t3, t4, t5, t6 = (v[idx] for v in (t1, t2, t3, t4, t5, t6))
    a = np.stack([t1 + t2 + t3, t1 + t5 + t6, t4 + t2 + t6, t4 + t5 + t3]) // 2
    b = np.stack([t1 + t2 + t4 + t5, t2 + t3 + t5 + t6, t3 + t1 + t6 + t4]) // 2
    tmin = a.max(axis=0)
    tmax = b.min(axis=0)

    term = np.ones(tmin.shape, dtype=_LD)
    total = np.ones(tmin.shape, dtype=_LD)
    for t in range(int(tmin.min()), int(tmax.max())):
        act = (t >= tmin) & (t < tmax)
        if not act.any():
            continue
        num = ((t + 2) * (b[0] - t) * (b[1] - t) * (b[2] - t)).astype(_LD)
        den = ((t + 1 - a[0]) * (t + 1 - a[1]) * (t + 1 - a[2]) * (t + 1 - a[3])).astype(_LD)
        den = np.where(act, den, 1)
        term = np.where(act, -term * num / den, term)
        total = np.where(act, total + term, total)

    LF = _LOGFACT

    def log_delta(x, y, z):
        return 0.5 * (LF[(x + y - z) // 2] + LF[(x - y + z) // 2]
                      + LF[(-x + y + z) // 2] - LF[(x + y + z) // 2 + 1])

    lt0 = (LF[tmin + 1] - LF[tmin - a[0]] - LF[tmin - a[1]] - LF[tmin - a[2]]
           - LF[tmin - a[3]] - LF[b[0] - tmin] - LF[b[1] - tmin] - LF[b[2] - tmin])
    pre = (log_delta(t1, t2, t3) + log_delta(t1, t5, t6)
           + log_delta(t4, t2, t6) + log_delta(t4, t5, t3))
    sgn = 1 - 2 * (tmin % 2)
    out[idx] = (sgn * total * np.exp(pre + lt0)).astype(float)
    return out.reshape(shape)


def six_j(j1: Number, j2: Number, j3: Number,
          j4: Number, j5: Number, j6: Number) -> float:
    """Wigner 6j symbol {j1 j2 j3; j4 j5 j6}."""
    t = [_tw(v) for v in (j1, j2, j3, j4, j5, j6)]
    if min(t) < 0:
        raise ValueError("6j entries must be non-negative")
    return float(_six_j_twice(*t))


def six_j_array(j1, j2, j3, j4, j5, j6) -> np.ndarray:
    tw = [np.rint(2 * np.asarray(v, dtype=float)).astype(np.int64)
          for v in (j1, j2, j3, j4, j5, j6)]
    return _six_j_twice(*tw)


def six_j_exact(j1: Number, j2: Number, j3: Number,
                j4: Number, j5: Number, j6: Number) -> tuple[int, Fraction]:
    """Exact 6j as (sign, square)."""
    t = [_tw(v) for v in (j1, j2, j3, j4, j5, j6)]
    if min(t) < 0:
        raise ValueError("6j entries must be non-negative")
    t1, t2, t3, t4, t5, t6 = t

    def tri(x, y, z):
        return abs(x - y) <= z <= x + y and (x + y + z) % 2 == 0

    if not (tri(t1, t2, t3) and tri(t1, t5, t6) and tri(t4, t2, t6) and tri(t4, t5, t3)):
        return 0, Fraction(0)
    f = math.factorial

    def delta_sq(x, y, z):
        return Fraction(f((x + y - z) // 2) * f((x - y + z) // 2) * f((-x + y + z) // 2),
                        f((x + y + z) // 2 + 1))

    a = [(t1 + t2 + t3) // 2, (t1 + t5 + t6) // 2, (t4 + t2 + t6) // 2, (t4 + t5 + t3) // 2]
    b = [(t1 + t2 + t4 + t5) // 2, (t2 + t3 + t5 + t6) // 2, (t3 + t1 + t6 + t4) // 2]
    s = Fraction(0)
    for k in range(max(a), min(b) + 1):
        den = 1
        for ai in a:
            den *= f(k - ai)
        for bj in b:
            den *= f(bj - k)
        s += Fraction((-1) ** k * f(k + 1), den)
    if s == 0:
        return 0, Fraction(0)
    pref = delta_sq(t1, t2, t3) * delta_sq(t1, t5, t6) * delta_sq(t4, t2, t6) * delta_sq(t4, t5, t3)
    return (1 if s > 0 else -1), pref * s * s


# ---------------------------------------------------------------------------
# asymptotic envelopes (constant fixed to 1)

BOUND_CONSTANT = 1.0


def edmonds_bound(l: int, lp: int, lb: int, N: int) -> float:
    """Envelope for {l l' lb; N/2 N/2 N/2} when one index stays small."""
    return BOUND_CONSTANT / math.sqrt((2 * lp + 1) * (N + 1))


def ponzano_regge_bound(l: int, lp: int, lb: int, N: int) -> float:
    """Envelope when all three indices are large compared to sqrt(N)."""
    return BOUND_CONSTANT / math.sqrt(N ** 3 * (2 * l + 1) * (2 * lp + 1) * (2 * lb + 1))


def in_ponzano_regge_regime(l: int, lp: int, lb: int, N: int) -> bool:
    return min(l, lp, lb) >= math.sqrt(N)
