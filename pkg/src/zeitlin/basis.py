"""Spherical matrices, quantized fields and the continuous counterparts.

The polarization tensors (T_lm)_{m1 m2} = (-1)^(s-m1) sqrt(2l+1) 3j(s l s; -m1 m m2)
are real, orthonormal in the Frobenius product and satisfy
T_lm^T = (-1)^m T_{l,-m}. The quantization of Y_lm is B_lm = i T_lm, which is
what a QuantizedField expands in. With these phases the commutator satisfies
s_N [T_a, T_b] = sum_c C^(N)c_ab T_c with the constants of ``structconst``.

Rows and columns are ordered by m1 = s, s-1, ..., -s, so T_lm lives on the
m-th superdiagonal: entry (i, i + m).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np

from . import harmonics, wigner
from .indexing import dim, eigenvalues, flat_index, lm_arrays

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class BasisSet:
    N: int
    T: np.ndarray  # (d, N, N) real

    @property
    def d(self) -> int:
        return dim(self.N)

    @property
    def ls(self):
        return lm_arrays(self.N)[0]

    @property
    def ms(self):
        return lm_arrays(self.N)[1]

    @cached_property
    def B(self) -> np.ndarray:
        """Skew-Hermitian complex basis i*T."""
        return 1j * self.T

    @cached_property
    def E(self) -> np.ndarray:
        """Real orthonormal basis of su(N) matching the real coordinates."""
        E = real_to_complex(np.eye(self.d)) @ self.B.reshape(self.d, -1)
        return E.reshape(self.d, self.N, self.N)

    @cached_property
    def diagonals(self) -> np.ndarray:
        """(d, N) array v with v[a, i] = T_a[i, i + m_a] (zero when out of range)."""
        n = self.N
        v = np.zeros((self.d, n))
        i = np.arange(n)
        for a, m in enumerate(self.ms):
            j = i + m
            ok = (j >= 0) & (j < n)
            v[a, ok] = self.T[a, i[ok], j[ok]]
        return v

    @cached_property
    def inverse_laplacian(self) -> np.ndarray:
        """Real (N^2, N^2) matrix of (-Laplacian)^{-1} acting on row-major vec(W)."""
        Tv = self.T.reshape(self.d, -1)
        return Tv.T @ (Tv / eigenvalues(self.N)[:, None])


@lru_cache(maxsize=16)
def build_basis(N: int) -> BasisSet:
    if N < 2:
        raise ValueError("level must be at least 2")
    n = N
    s2 = n - 1  # twice the spin
    d = dim(n)
    ls, ms = lm_arrays(n)
    T = np.zeros((d, n, n))
    i = np.arange(n)
    u1 = s2 - 2 * i  # twice m1
    for a in range(d):
        l, m = int(ls[a]), int(ms[a])
        j = i + m
        ok = (j >= 0) & (j < n)
        u2 = s2 - 2 * j[ok]
        tj = wigner._three_j_twice(s2, 2 * l, s2, -u1[ok], 2 * m, u2)
        T[a, i[ok], j[ok]] = np.where(i[ok] % 2 == 0, 1.0, -1.0) * np.sqrt(2 * l + 1) * tj
    T.setflags(write=False)
    return BasisSet(n, T)


# ---------------------------------------------------------------------------
# coefficient conventions


def real_to_complex(x: np.ndarray) -> np.ndarray:
    """Real coordinates to complex coefficients omega_lm (last axis).

    m = 0 slots hold omega_l0; for m > 0 the (l, m) slot holds sqrt(2) Re omega_lm
    and the (l, -m) slot sqrt(2) Im omega_lm.
    """
    x = np.asarray(x, dtype=float)
    N = int(round(np.sqrt(x.shape[-1] + 1)))
    ls, ms = lm_arrays(N)
    out = np.zeros(x.shape, dtype=complex)
    zero = ms == 0
    out[..., zero] = x[..., zero]
    pos = np.nonzero(ms > 0)[0]
    neg = flat_index(ls[pos], -ms[pos])
    re, im = x[..., pos], x[..., neg]
    out[..., pos] = (re + 1j * im) / _SQRT2
    sgn = np.where(ms[pos] % 2 == 0, 1.0, -1.0)
    out[..., neg] = sgn * (re - 1j * im) / _SQRT2
    return out


def complex_to_real(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    N = int(round(np.sqrt(c.shape[-1] + 1)))
    ls, ms = lm_arrays(N)
    out = np.zeros(c.shape, dtype=float)
    zero = ms == 0
    out[..., zero] = c[..., zero].real
    pos = np.nonzero(ms > 0)[0]
    neg = flat_index(ls[pos], -ms[pos])
    out[..., pos] = _SQRT2 * c[..., pos].real
    out[..., neg] = _SQRT2 * c[..., pos].imag
    return out


def reality_defect(c: np.ndarray) -> float:
    """max |conj(omega_lm) - (-1)^m omega_{l,-m}|."""
    c = np.asarray(c)
    N = int(round(np.sqrt(c.shape[-1] + 1)))
    ls, ms = lm_arrays(N)
    partner = flat_index(ls, -ms)
    sgn = np.where(ms % 2 == 0, 1.0, -1.0)
    return float(np.max(np.abs(np.conj(c) - sgn * c[..., partner]), initial=0.0))


def coeffs_to_matrix(c: np.ndarray, basis: BasisSet) -> np.ndarray:
    return np.tensordot(np.asarray(c), basis.B, axes=([-1], [0]))


def matrix_to_coeffs(W: np.ndarray, basis: BasisSet) -> np.ndarray:
    Bc = np.conj(basis.B).reshape(basis.d, -1)
    W = np.asarray(W)
    return W.reshape(*W.shape[:-2], -1) @ Bc.T


def real_to_matrix(x: np.ndarray, basis: BasisSet) -> np.ndarray:
    return coeffs_to_matrix(real_to_complex(x), basis)


def matrix_to_real(W: np.ndarray, basis: BasisSet) -> np.ndarray:
    return complex_to_real(matrix_to_coeffs(W, basis))


# ---------------------------------------------------------------------------
# fields


class QuantizedField:
    """An element of su(N), held as real coordinates over the basis E."""

    def __init__(self, N: int, real: np.ndarray):
        real = np.asarray(real, dtype=float)
        if real.shape != (dim(N),):
            raise ValueError(f"expected {dim(N)} real coordinates, got shape {real.shape}")
        self.N = N
        self.real = real
        self._matrix: Optional[np.ndarray] = None

    @classmethod
    def from_coeffs(cls, c, N: Optional[int] = None, tol: float = 1e-10) -> "QuantizedField":
        c = np.asarray(c, dtype=complex)
        N = N or int(round(np.sqrt(c.size + 1)))
        if reality_defect(c) > tol * max(1.0, float(np.max(np.abs(c), initial=0.0))):
            raise ValueError("coefficients violate the reality constraint")
        return cls(N, complex_to_real(c))

    @classmethod
    def from_matrix(cls, W, tol: float = 1e-10) -> "QuantizedField":
        W = np.asarray(W, dtype=complex)
        N = W.shape[0]
        scale = max(1.0, float(np.max(np.abs(W), initial=0.0)))
        if np.max(np.abs(W + W.conj().T)) > tol * scale or abs(np.trace(W)) > tol * scale * N:
            raise ValueError("matrix is not skew-Hermitian and traceless")
        f = cls(N, matrix_to_real(W, build_basis(N)))
        return f

    @classmethod
    def mode(cls, N: int, l: int, m: int = 0) -> "QuantizedField":
        """The matrix B_lm, or for m != 0 the real combination with x_lm = 1."""
        x = np.zeros(dim(N))
        x[flat_index(l, m)] = 1.0
        return cls(N, x)

    @property
    def coeffs(self) -> np.ndarray:
        return real_to_complex(self.real)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = real_to_matrix(self.real, build_basis(self.N))
        return self._matrix

    def __add__(self, other: "QuantizedField") -> "QuantizedField":
        _same_level(self, other)
        return QuantizedField(self.N, self.real + other.real)

    def __sub__(self, other: "QuantizedField") -> "QuantizedField":
        _same_level(self, other)
        return QuantizedField(self.N, self.real - other.real)

    def __mul__(self, k: float) -> "QuantizedField":
        return QuantizedField(self.N, k * self.real)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.real))

    def __repr__(self):
        return f"QuantizedField(N={self.N}, norm={self.norm():.6g})"


def _same_level(A, B):
    if A.N != B.N:
        raise ValueError(f"level mismatch: {A.N} vs {B.N}")


def inner(A: QuantizedField, B: QuantizedField) -> complex:
    """Tr(A^* B)."""
    _same_level(A, B)
    return complex(np.vdot(A.matrix, B.matrix))


def laplacian_pow(W: QuantizedField, s: float) -> QuantizedField:
    """(-Laplacian_N)^s, multiplying each (l, m) coefficient by (l(l+1))^s."""
    return QuantizedField(W.N, W.real * eigenvalues(W.N) ** s)


def sobolev_norm(W: QuantizedField, s: float) -> float:
    return float(np.sqrt(np.sum(eigenvalues(W.N) ** s * W.real ** 2)))


# ---------------------------------------------------------------------------
# smooth fields


class SmoothField:
    """Band-limited function sum_{l <= L_max} c_lm Y_lm (l = 0 included)."""

    def __init__(self, L_max: int, coeffs=None):
        self.L_max = L_max
        size = (L_max + 1) ** 2
        self.coeffs = np.zeros(size, dtype=complex) if coeffs is None else np.asarray(coeffs, dtype=complex)
        if self.coeffs.shape != (size,):
            raise ValueError(f"expected {size} coefficients")

    @classmethod
    def from_modes(cls, L_max: int, modes: dict) -> "SmoothField":
        f = cls(L_max)
        for (l, m), v in modes.items():
            f.coeffs[harmonics.smooth_index(l, m)] = v
        return f

    def degrees(self) -> np.ndarray:
        return np.concatenate([np.full(2 * l + 1, l) for l in range(self.L_max + 1)])

    def orders(self) -> np.ndarray:
        return np.concatenate([np.arange(-l, l + 1) for l in range(self.L_max + 1)])

    def is_real(self, tol=1e-12) -> bool:
        ls, ms = self.degrees(), self.orders()
        partner = harmonics.smooth_index(ls, -ms)
        sgn = np.where(ms % 2 == 0, 1.0, -1.0)
        return bool(np.max(np.abs(np.conj(self.coeffs) - sgn * self.coeffs[partner])) <= tol)

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def laplacian_pow(self, s: float) -> "SmoothField":
        lam = (self.degrees() * (self.degrees() + 1)).astype(float)
        if s < 0:
            if abs(self.coeffs[0]) > 0:
                raise ValueError("negative powers need a mean-free field")
            lam[0] = 1.0
        return SmoothField(self.L_max, self.coeffs * lam ** s)

    def evaluate(self, theta, phi, derivative: Optional[str] = None):
        """Values, or d/dtheta ('theta') or d/dphi ('phi'), on broadcast angles."""
        theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
        out = np.zeros(theta.shape, dtype=complex)
        for l in range(self.L_max + 1):
            for m in range(-l, l + 1):
                c = self.coeffs[harmonics.smooth_index(l, m)]
                if c == 0:
                    continue
                if derivative is None:
                    out += c * harmonics.sph_harm(l, m, theta, phi)
                elif derivative == "phi":
                    out += 1j * m * c * harmonics.sph_harm(l, m, theta, phi)
                elif derivative == "theta":
                    out += c * harmonics.sph_harm_dtheta(l, m, theta, phi)
                else:
                    raise ValueError(derivative)
        return out


def project(f: SmoothField, N: int) -> QuantizedField:
    """Keep 1 <= l <= N-1."""
    c = np.zeros(dim(N), dtype=complex)
    ls, ms = lm_arrays(N)
    have = ls <= f.L_max
    c[have] = f.coeffs[harmonics.smooth_index(ls[have], ms[have])]
    return QuantizedField.from_coeffs(c, N)


def lift(W: QuantizedField) -> SmoothField:
    f = SmoothField(W.N - 1)
    ls, ms = lm_arrays(W.N)
    f.coeffs[harmonics.smooth_index(ls, ms)] = W.coeffs
    return f


# ---------------------------------------------------------------------------
# quadrature oracle


def poisson_bracket_coeffs(f: SmoothField, g: SmoothField, L_out: int,
                           n_theta: Optional[int] = None, n_phi: Optional[int] = None) -> np.ndarray:
    """Coefficients <Y_lm, sqrt(16 pi) {f, g}> for l <= L_out, by product quadrature."""
    band = f.L_max + g.L_max + L_out
    n_theta = n_theta or band + 2
    n_phi = n_phi or 2 * band + 4
    th, ph, w = harmonics.gauss_grid(n_theta, n_phi)
    bracket = (f.evaluate(th, ph, "phi") * g.evaluate(th, ph, "theta")
               - f.evaluate(th, ph, "theta") * g.evaluate(th, ph, "phi")) / np.sin(th)
    bracket *= harmonics.BRACKET_NORM
    out = np.zeros((L_out + 1) ** 2, dtype=complex)
    for l in range(L_out + 1):
        for m in range(-l, l + 1):
            out[harmonics.smooth_index(l, m)] = np.sum(w * np.conj(harmonics.sph_harm(l, m, th, ph)) * bracket)
    return out


def quadrature_bracket_oracle(idx, n_theta: Optional[int] = None, n_phi: Optional[int] = None) -> float:
    """Continuous structure constant from quadrature of conj(Y_c) {Y_a, Y_b}.

    The integral equals i C / sqrt(16 pi); the returned value is C.
    """
    L = idx.l + idx.lp + idx.lb
    mmax = max(abs(idx.m), abs(idx.mp), abs(idx.mb), 1)
    n_theta = n_theta or 2 * L
    n_phi = n_phi or 4 * mmax
    if n_theta < 2 * L or n_phi < 4 * mmax:
        raise ValueError(f"grid below resolution bound: need n_theta >= {2 * L}, n_phi >= {4 * mmax}")
    th, ph, w = harmonics.gauss_grid(n_theta, n_phi)
    Ya = harmonics.sph_harm(idx.l, idx.m, th, ph)
    Yb = harmonics.sph_harm(idx.lp, idx.mp, th, ph)
    dYa = harmonics.sph_harm_dtheta(idx.l, idx.m, th, ph)
    dYb = harmonics.sph_harm_dtheta(idx.lp, idx.mp, th, ph)
    pb = (1j * idx.m * Ya * dYb - dYa * 1j * idx.mp * Yb) / np.sin(th)
    integral = np.sum(w * np.conj(harmonics.sph_harm(idx.lb, idx.mb, th, ph)) * pb)
    return float((-1j * harmonics.BRACKET_NORM * integral).real)


# ---------------------------------------------------------------------------
# basis diagnostics


def orthonormality_residual(basis: BasisSet) -> float:
    Tv = basis.T.reshape(basis.d, -1)
    G = Tv @ Tv.T
    return float(np.max(np.abs(G - np.eye(basis.d))))


def bracket_closure_residual(basis: BasisSet, table, scale_value: float) -> float:
    """max over all (a, b, c) of |Tr(T_c^T s_N [T_a, T_b]) - C^(N)c_ab|.

    The traces are formed from the matrix diagonals: T_a T_b sits on
    superdiagonal m_a + m_b with entries v_a[i] v_b[i + m_a]. Triples missing
    from the table are compared against zero.
    """
    n = basis.N
    ls, ms = basis.ls, basis.ms
    V = basis.diagonals
    groups = {m: np.nonzero(ms == m)[0] for m in range(-(n - 1), n)}
    first_l = {m: max(abs(m), 1) for m in groups}

    a_all, b_all, c_all, v_all = table.full()
    ma_all, mb_all = ms[a_all], ms[b_all]
    order = np.lexsort((mb_all, ma_all))
    a_all, b_all, c_all, v_all = a_all[order], b_all[order], c_all[order], v_all[order]
    key = (ma_all[order] + n) * (2 * n + 1) + (mb_all[order] + n)
    starts = np.searchsorted(key, np.arange((2 * n + 1) ** 2))
    starts = np.append(starts, key.size)

    def shift(X, s):
        out = np.zeros_like(X)
        if s >= 0:
            out[:, : n - s] = X[:, s:]
        else:
            out[:, -s:] = X[:, : n + s]
        return out

    worst = 0.0
    for ma, ga in groups.items():
        A = V[ga]
        for mb, gb in groups.items():
            mc = ma + mb
            if abs(mc) > n - 1:
                continue
            gc = groups[mc]
            Bm = V[gb]
            u = A[:, None, :] * shift(Bm, ma)[None, :, :] - shift(A, mb)[:, None, :] * Bm[None, :, :]
            traces = scale_value * np.einsum("abi,ci->abc", u, V[gc])
            k = (ma + n) * (2 * n + 1) + (mb + n)
            lo, hi = starts[k], starts[k + 1]
            expected = np.zeros_like(traces)
            if hi > lo:
                expected[ls[a_all[lo:hi]] - first_l[ma], ls[b_all[lo:hi]] - first_l[mb],
                         ls[c_all[lo:hi]] - first_l[mc]] = v_all[lo:hi]
            worst = max(worst, float(np.max(np.abs(traces - expected))))
    return worst


def bracket_matrix_residual(basis: BasisSet, table, scale_value: float) -> float:
    """max_{a,b} ||s_N [T_a, T_b] - sum_c C^c_ab T_c||_F by dense matrices (small N)."""
    T = basis.T
    comm = scale_value * (np.einsum("aij,bjk->abik", T, T) - np.einsum("bij,ajk->abik", T, T))
    recon = np.einsum("abc,cij->abij", table.dense(), T)
    return float(np.max(np.sqrt(np.sum((comm - recon) ** 2, axis=(-2, -1)))))


# ---------------------------------------------------------------------------
# serialization

_FIELD_MAGIC = b"ZFLD"


def field_to_json(W: QuantizedField) -> str:
    ls, ms = lm_arrays(W.N)
    c = W.coeffs
    rows = [[int(l), int(m), float(v.real), float(v.imag)] for l, m, v in zip(ls, ms, c)]
    return json.dumps({"N": W.N, "coeffs": rows})


def field_from_json(text: str) -> QuantizedField:
    obj = json.loads(text)
    N = int(obj["N"])
    c = np.zeros(dim(N), dtype=complex)
    for l, m, re, im in obj["coeffs"]:
        c[flat_index(int(l), int(m))] = complex(re, im)
    return QuantizedField.from_coeffs(c, N)


def field_to_bytes(W: QuantizedField) -> bytes:
    c = W.coeffs
    pairs = np.empty(2 * c.size, dtype="<f8")
    pairs[0::2] = c.real
    pairs[1::2] = c.imag
    return _FIELD_MAGIC + struct.pack("<I", W.N) + pairs.tobytes()


def field_from_bytes(raw: bytes) -> QuantizedField:
    if raw[:4] != _FIELD_MAGIC:
        raise ValueError("not a field record")
    (N,) = struct.unpack_from("<I", raw, 4)
    pairs = np.frombuffer(raw, dtype="<f8", count=2 * dim(N), offset=8)
    return QuantizedField.from_coeffs(pairs[0::2] + 1j * pairs[1::2], N)
