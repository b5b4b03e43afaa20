"""Structure constants of the spherical-harmonic Poisson algebra and of su(N).

Both kinds factor as (-1)^mb * K(l, l', lb) * 3j(l l' lb; m m' -mb), with a
radial factor K that only depends on the degree triple. K is tabulated once
per level, so the m-resolved tables cost one 3j block per triple.

Conventions (fixed by the matrix-trace and quadrature oracles in the tests):

* the level N is the matrix size, the representation spin is s = (N-1)/2;
* the default bracket scale is N**1.5 ("dimension"); the alternative
  (N+1)**1.5 ("shifted") is available but makes the discrete constants
  converge only linearly;
* the Poisson bracket is normalized as sqrt(16 pi) times the geometric
  bracket (d_phi f d_theta g - d_theta f d_phi g) / sin(theta).
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional

import numpy as np

from . import wigner
from .indexing import flat_index, lm_arrays

SCALES = ("dimension", "shifted")


@dataclass(frozen=True)
class TripleIndex:
    l: int
    m: int
    lp: int
    mp: int
    lb: int
    mb: int

    def __post_init__(self):
        for l, m in ((self.l, self.m), (self.lp, self.mp), (self.lb, self.mb)):
            if l < 1 or abs(m) > l:
                raise ValueError(f"invalid index pair ({l}, {m})")

    @property
    def L(self) -> int:
        return self.l + self.lp + self.lb

    @property
    def admissible(self) -> bool:
        return (abs(self.l - self.lp) <= self.lb <= self.l + self.lp
                and self.m + self.mp == self.mb)

    def swapped(self) -> "TripleIndex":
        return TripleIndex(self.lp, self.mp, self.l, self.m, self.lb, self.mb)


def bracket_scale(N: int, convention: str = "dimension") -> float:
    if convention == "dimension":
        return float(N) ** 1.5
    if convention == "shifted":
        return float(N + 1) ** 1.5
    raise ValueError(f"unknown bracket scale {convention!r}; use one of {SCALES}")


def _check_triangle(l, lp, lb):
    if not abs(l - lp) <= lb <= l + lp:
        raise ValueError(f"({l}, {lp}, {lb}) violates the triangle inequality")


def triangle_delta(l: int, lp: int, lb: int) -> float:
    _check_triangle(l, lp, lb)
    LF = wigner._LOGFACT
    return float(np.exp(0.5 * (LF[l + lp - lb] + LF[l - lp + lb] + LF[-l + lp + lb]
                               - LF[l + lp + lb + 1])))


def triangle_delta_sq_exact(l: int, lp: int, lb: int) -> Fraction:
    _check_triangle(l, lp, lb)
    f = math.factorial
    return Fraction(f(l + lp - lb) * f(l - lp + lb) * f(-l + lp + lb), f(l + lp + lb + 1))


def p_factor(l, lp, lb):
    """Half-integer factorial quotient P(l, l', lb); zero for even l+l'+lb.

    Vectorized over integer arrays. Triples outside the triangle also give 0.
    """
    l, lp, lb = np.broadcast_arrays(*(np.asarray(v, dtype=np.int64) for v in (l, lp, lb)))
    L = l + lp + lb
    ok = (L % 2 == 1) & (lb >= np.abs(l - lp)) & (lb <= l + lp)
    out = np.zeros(l.shape, dtype=float)
    if not ok.any():
        return out if out.ndim else float(out)
    l, lp, lb, L = l[ok], lp[ok], lb[ok], L[ok]
    LF = wigner._LOGFACT
    log_delta = 0.5 * (LF[l + lp - lb] + LF[l - lp + lb] + LF[-l + lp + lb] - LF[L + 1])
    logmag = (log_delta + np.log(L + 1) + LF[(L - 1) // 2]
              - LF[(-l + lp + lb - 1) // 2] - LF[(l - lp + lb - 1) // 2]
              - LF[(l + lp - lb - 1) // 2])
    sign = np.where(((L + 1) // 2) % 2 == 0, 1.0, -1.0)
    out[ok] = sign * np.exp(logmag).astype(float)
    return out if out.ndim else float(out)


def stirling_P_estimate(l: int, lp: int, lb: int) -> float:
    _check_triangle(l, lp, lb)
    L = l + lp + lb
    if L % 2 == 0:
        raise ValueError("Stirling estimate needs odd l+l'+lb")
    return float(L * (L - 2 * l) * (L - 2 * lp) * (L - 2 * lb)) ** 0.25


# ---------------------------------------------------------------------------
# radial factors


def radial_continuous(l, lp, lb):
    l, lp, lb = (np.asarray(v, dtype=np.int64) for v in (l, lp, lb))
    return -2.0 * np.sqrt((2.0 * l + 1) * (2 * lp + 1) * (2 * lb + 1)) * p_factor(l, lp, lb)


def radial_discrete(N: int, l, lp, lb, scale: str = "dimension"):
    l, lp, lb = np.broadcast_arrays(*(np.asarray(v, dtype=np.int64) for v in (l, lp, lb)))
    odd = (l + lp + lb) % 2 == 1
    s2 = N - 1
    sj = wigner._six_j_twice(2 * l, 2 * lp, 2 * lb, s2, s2, s2)
    sign = -1.0 if N % 2 else 1.0
    K = 2.0 * bracket_scale(N, scale) * sign * np.sqrt((2.0 * l + 1) * (2 * lp + 1) * (2 * lb + 1)) * sj
    return np.where(odd, K, 0.0)


def radial_tables(N: int, scale: str = "dimension") -> tuple[np.ndarray, np.ndarray]:
    """(K_N, K_inf) on the full grid [l, l', lb] with 0 <= l, l', lb <= N-1."""
    g = np.arange(N)
    l, lp, lb = np.meshgrid(g, g, g, indexing="ij")
    valid = (l >= 1) & (lp >= 1) & (lb >= 1)
    Kd = np.where(valid, radial_discrete(N, l, lp, lb, scale), 0.0)
    Kc = np.where(valid, radial_continuous(l, lp, lb), 0.0)
    return Kd, Kc


# ---------------------------------------------------------------------------
# scalar constants


def _sign(m: int) -> float:
    return -1.0 if m % 2 else 1.0


def continuous_C(idx: TripleIndex) -> float:
    if not idx.admissible or idx.L % 2 == 0:
        return 0.0
    tj = wigner.three_j(idx.l, idx.lp, idx.lb, idx.m, idx.mp, -idx.mb)
    return _sign(idx.mb) * float(radial_continuous(idx.l, idx.lp, idx.lb)) * tj


def _check_level(N: int, idx: TripleIndex):
    if N < 2:
        raise ValueError("level must be at least 2")
    if max(idx.l, idx.lp, idx.lb) > N - 1:
        raise ValueError(f"degree exceeds N-1 = {N - 1}")


def discrete_C(N: int, idx: TripleIndex, scale: str = "dimension", check: bool = __debug__) -> float:
    """Level-N constant from the 6j form.

    With ``check`` (on unless Python runs with -O) the expanded factorial form
    is evaluated too and must agree to 1e-9.
    """
    _check_level(N, idx)
    if not idx.admissible or idx.L % 2 == 0:
        return 0.0
    tj = wigner.three_j(idx.l, idx.lp, idx.lb, idx.m, idx.mp, -idx.mb)
    val = _sign(idx.mb) * float(radial_discrete(N, idx.l, idx.lp, idx.lb, scale)) * tj
    if check:
        alt = discrete_C_expanded(N, idx, scale)
        if abs(val - alt) > 1e-9 * max(1.0, abs(val)):
            raise AssertionError(f"6j and expanded forms disagree at {idx}: {val} vs {alt}")
    return val


def discrete_C_expanded(N: int, idx: TripleIndex, scale: str = "dimension") -> float:
    """Level-N constant from the S/R/Delta product form, in rational arithmetic.

    Only the final square root and the 3j factor are taken in floating point.
    """
    _check_level(N, idx)
    if not idx.admissible or idx.L % 2 == 0:
        return 0.0
    a, b, c = idx.l, idx.lp, idx.lb
    L = a + b + c
    f = math.factorial
    n = Fraction(N)

    def S(k):
        out = Fraction(1)
        for i in range(k - L, k + 1):
            out *= 1 + i / n
        return out

    total = Fraction(0)
    for k in range(max(a, b, c), min(a + b, b + c, a + c) + 1):
        R = f(k - a) * f(k - b) * f(k - c) * f(a + b - k) * f(b + c - k) * f(a + c - k)
        total += (-1) ** k * S(k) / R
    prod_sq = Fraction(1)
    for q in (a, b, c):
        for p in range(1, q + 1):
            prod_sq *= n * n / (n * n - p * p)
    radial_sq = (triangle_delta_sq_exact(a, b, c) * prod_sq
                 * (f(a) * f(b) * f(c) * total) ** 2 * (2 * a + 1) * (2 * b + 1) * (2 * c + 1))
    radial = math.copysign(math.sqrt(float(radial_sq)), float(total))
    tj = wigner.three_j(a, b, c, idx.m, idx.mp, -idx.mb)
    rescale = bracket_scale(N, scale) / N ** 1.5
    return -_sign(idx.mb) * 2.0 * N * rescale * radial * tj


# ---------------------------------------------------------------------------
# m-resolved tables


def _shard_pairs(N: int, lb: int):
    """Canonical (l, m) < (l', m') pairs with odd l+l'+lb, triangle, |m+m'| <= lb."""
    ls, lps, ms, mps = [], [], [], []
    for l in range(1, N):
        for lp in range(l, N):
            if (l + lp + lb) % 2 == 0 or not abs(l - lp) <= lb <= l + lp:
                continue
            m = np.arange(-l, l + 1)[:, None]
            mp = np.arange(-lp, lp + 1)[None, :]
            keep = np.abs(m + mp) <= lb
            if l == lp:
                keep &= m < mp
            mm, mpp = np.nonzero(keep)
            ls.append(np.full(mm.size, l))
            lps.append(np.full(mm.size, lp))
            ms.append(mm - l)
            mps.append(mpp - lp)
    if not ls:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z, z
    return tuple(np.concatenate(v).astype(np.int64) for v in (ls, lps, ms, mps))


@dataclass
class Shard:
    lb: int
    l: np.ndarray
    m: np.ndarray
    lp: np.ndarray
    mp: np.ndarray
    three_j: np.ndarray

    @property
    def mb(self):
        return self.m + self.mp


def iter_shards(N: int, lbs=None) -> Iterator[Shard]:
    """Yield the 3j content of the canonical table, one lb at a time."""
    for lb in (range(1, N) if lbs is None else lbs):
        l, lp, m, mp = _shard_pairs(N, lb)
        tj = wigner._three_j_twice(2 * l, 2 * lp, 2 * lb, 2 * m, 2 * mp, -2 * (m + mp))
        yield Shard(lb, l, m, lp, mp, tj)


@dataclass
class StructureTable:
    """Canonical entries C^{c}_{a b} with flat a < b; (b, a) follows by antisymmetry."""

    N: int
    level: str  # "discrete" or "continuous"
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    values: np.ndarray
    scale: Optional[str] = "dimension"
    meta: dict = field(default_factory=dict)
    _lookup: Optional[dict] = field(default=None, repr=False)

    def __len__(self):
        return int(self.values.size)

    def indices(self) -> np.ndarray:
        """(count, 6) array of (l, m, l', m', lb, mb)."""
        ls, ms = lm_arrays(self.N)
        return np.stack([ls[self.a], ms[self.a], ls[self.b], ms[self.b],
                         ls[self.c], ms[self.c]], axis=1)

    def full(self):
        """Both orderings: arrays (a, b, c, value)."""
        return (np.concatenate([self.a, self.b]), np.concatenate([self.b, self.a]),
                np.concatenate([self.c, self.c]), np.concatenate([self.values, -self.values]))

    def entry(self, idx: TripleIndex) -> float:
        if self._lookup is None:
            self._lookup = {(int(x), int(y), int(z)): float(v)
                            for x, y, z, v in zip(self.a, self.b, self.c, self.values)}
        if not idx.admissible or max(idx.l, idx.lp, idx.lb) > self.N - 1:
            return 0.0
        a = flat_index(idx.l, idx.m)
        b = flat_index(idx.lp, idx.mp)
        c = flat_index(idx.lb, idx.mb)
        if a == b:
            return 0.0
        if a < b:
            return self._lookup.get((a, b, c), 0.0)
        return -self._lookup.get((b, a, c), 0.0)

    def dense(self) -> np.ndarray:
        """Dense (d, d, d) array indexed [a, b, c]; only sensible for small N."""
        d = self.N * self.N - 1
        out = np.zeros((d, d, d))
        a, b, c, v = self.full()
        out[a, b, c] = v
        return out

    def checksum(self) -> int:
        return zlib.crc32(_records(self).tobytes())


def build_tables(N: int, scale: str = "dimension") -> tuple[StructureTable, StructureTable]:
    """Discrete and continuous tables on the same canonical index set."""
    Kd, Kc = radial_tables(N, scale)
    parts = {k: [] for k in ("a", "b", "c", "d", "k")}
    for sh in iter_shards(N):
        sgn = np.where(sh.mb % 2 == 0, 1.0, -1.0) * sh.three_j
        parts["a"].append(flat_index(sh.l, sh.m))
        parts["b"].append(flat_index(sh.lp, sh.mp))
        parts["c"].append(flat_index(sh.lb, sh.mb))
        parts["d"].append(sgn * Kd[sh.l, sh.lp, sh.lb])
        parts["k"].append(sgn * Kc[sh.l, sh.lp, sh.lb])
    a, b, c = (np.concatenate(parts[k]).astype(np.int32) for k in "abc")
    disc = StructureTable(N, "discrete", a, b, c, np.concatenate(parts["d"]), scale)
    cont = StructureTable(N, "continuous", a, b, c, np.concatenate(parts["k"]), None)
    return disc, cont


def build_table(N: int, level: str = "discrete", scale: str = "dimension") -> StructureTable:
    disc, cont = build_tables(N, scale)
    return disc if level == "discrete" else cont


# ---------------------------------------------------------------------------
# binary cache

_MAGIC = b"ZSTC"
_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_RECORD = np.dtype([("idx", "<i4", (6,)), ("val", "<f8")])


def _records(table: StructureTable) -> np.ndarray:
    rec = np.empty(len(table), dtype=_RECORD)
    rec["idx"] = table.indices()
    rec["val"] = table.values
    return rec


def save_table(table: StructureTable, path) -> None:
    header = _HEADER.pack(_MAGIC, _VERSION, table.N, len(table))
    body = _records(table).tobytes()
    crc = zlib.crc32(body, zlib.crc32(header))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def load_table(path, level: str = "discrete", scale: Optional[str] = "dimension") -> StructureTable:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size + 4:
        raise ValueError("truncated structure-constant cache")
    magic, version, N, count = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not a structure-constant cache file")
    end = _HEADER.size + count * _RECORD.itemsize
    if len(raw) != end + 4:
        raise ValueError("cache size does not match its header")
    (crc,) = struct.unpack_from("<I", raw, end)
    if zlib.crc32(raw[:end]) != crc:
        raise ValueError("cache checksum mismatch")
    rec = np.frombuffer(raw, dtype=_RECORD, count=count, offset=_HEADER.size)
    idx = rec["idx"]
    a = flat_index(idx[:, 0], idx[:, 1]).astype(np.int32)
    b = flat_index(idx[:, 2], idx[:, 3]).astype(np.int32)
    c = flat_index(idx[:, 4], idx[:, 5]).astype(np.int32)
    return StructureTable(N, level, a, b, c, rec["val"].copy(), scale)


# ---------------------------------------------------------------------------
# difference bounds


@dataclass
class DiffBoundReport:
    N: int
    r1_max: float
    r2_max: float
    r1_argmax: tuple
    r2_argmax: tuple
    entries: int


def diff_bound_check(N: int, kappa_unused=None, scale: str = "dimension",
                     tables: Optional[tuple[StructureTable, StructureTable]] = None) -> DiffBoundReport:
    """Sweep r1 = |dC| / min-pair-product and r2 = N^2 |dC| / (max l^2 * min-pair-product)."""
    if N % 2 == 0:
        raise ValueError("difference sweep expects odd N")
    disc, cont = tables if tables is not None else build_tables(N, scale)
    idx = disc.indices()
    l, lp, lb = (idx[:, k].astype(float) for k in (0, 2, 4))
    diff = np.abs(disc.values - cont.values)
    pmin = np.minimum(np.minimum(l * lp, l * lb), lp * lb)
    lmax2 = np.maximum(np.maximum(l, lp), lb) ** 2
    r1 = diff / pmin
    r2 = N * N * diff / (lmax2 * pmin)
    i1, i2 = int(np.argmax(r1)), int(np.argmax(r2))
    return DiffBoundReport(N, float(r1[i1]), float(r2[i2]), tuple(int(v) for v in idx[i1]),
                           tuple(int(v) for v in idx[i2]), len(disc))


# ---------------------------------------------------------------------------
# torus


def torus_cross(n, k):
    n = np.asarray(n)
    k = np.asarray(k)
    return n[..., 1] * k[..., 0] - k[..., 1] * n[..., 0]


def torus_C(N: int, n, k):
    """(N / 2 pi) sin(2 pi (n x k) / N) - n x k, with n x k = n2 k1 - k2 n1."""
    if N % 2 == 0:
        raise ValueError("torus constants expect odd N")
    n = np.asarray(n)
    k = np.asarray(k)
    h = (N - 1) // 2
    if np.any(np.abs(n) > h) or np.any(np.abs(k) > h):
        raise ValueError(f"lattice components must lie in [-{h}, {h}]")
    if np.any(np.all(k == 0, axis=-1)):
        raise ValueError("k = 0 is excluded")
    x = torus_cross(n, k)
    out = N / (2 * np.pi) * np.sin(2 * np.pi * x / N) - x
    return out if np.ndim(out) else float(out)
