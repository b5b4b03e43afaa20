import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from zeitlin import basis as B
from zeitlin.indexing import dim, eigenvalues, flat_index, lm_arrays
from zeitlin.structconst import bracket_scale, build_table


def random_field(N, seed=0):
    return B.QuantizedField(N, np.random.default_rng(seed).standard_normal(dim(N)))


@pytest.mark.parametrize("N", [2, 3, 5, 8, 9])
def test_orthonormal_and_skew(N):
    basis = B.build_basis(N)
    assert B.orthonormality_residual(basis) <= 1e-12
    Em = basis.E
    assert np.max(np.abs(Em + np.conj(np.swapaxes(Em, 1, 2)))) < 1e-15
    assert np.max(np.abs(np.trace(basis.B, axis1=1, axis2=2))) < 1e-13
    # adjoint pairs: B_lm^* = -(-1)^m B_{l,-m}
    ls, ms = basis.ls, basis.ms
    partner = flat_index(ls, -ms)
    sgn = np.where(ms % 2 == 0, 1.0, -1.0)[:, None, None]
    assert np.allclose(np.conj(np.swapaxes(basis.B, 1, 2)), -sgn * basis.B[partner], atol=1e-15)
    E = Em.reshape(basis.d, -1)
    G = np.conj(E) @ E.T
    assert np.max(np.abs(G - np.eye(basis.d))) < 1e-12


def test_level_below_two_rejected():
    with pytest.raises(ValueError):
        B.build_basis(1)


@pytest.mark.parametrize("N", [4, 5])
def test_t10_is_spin_z(N):
    T10 = B.build_basis(N).T[flat_index(1, 0)]
    assert np.allclose(T10, np.diag(np.diag(T10)))
    d = np.diag(T10)
    assert np.allclose(np.diff(d), d[1] - d[0]) and abs(d[1] - d[0]) > 0


def test_laplacian_eigenvectors_via_casimir():
    # sum over l = 1 generators of [J, [J, T]] is proportional to l(l+1) T
    N = 6
    basis = B.build_basis(N)
    s = (N - 1) / 2
    m = np.arange(s, -s - 1, -1)
    Jz = np.diag(m)
    Jp = np.diag(np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1)), 1)
    Js = [Jz, (Jp + Jp.T) / 2, (Jp - Jp.T) / 2j]
    ls = basis.ls
    for a in range(basis.d):
        X = basis.T[a]
        lap = sum(J @ (J @ X - X @ J) - (J @ X - X @ J) @ J for J in Js)
        assert np.allclose(lap, ls[a] * (ls[a] + 1) * X, atol=1e-11)


@pytest.mark.parametrize("N", [5, 6])
def test_bracket_closure_against_table(N):
    basis = B.build_basis(N)
    s = bracket_scale(N)
    table = build_table(N)
    assert B.bracket_closure_residual(basis, table, s) <= 1e-8
    assert B.bracket_matrix_residual(basis, table, s) <= 1e-8


def test_commutators_stay_in_su_n():
    basis = B.build_basis(5)
    X = random_field(5, 1).matrix
    Y = random_field(5, 2).matrix
    C = X @ Y - Y @ X
    assert np.max(np.abs(C + C.conj().T)) < 1e-13 and abs(np.trace(C)) < 1e-13
    assert basis.d == 24


def test_inner_examples():
    N = 5
    T10 = B.QuantizedField.mode(N, 1, 0)
    T11 = B.QuantizedField.mode(N, 1, 1)
    assert B.inner(T10, T10) == pytest.approx(1.0)
    assert abs(B.inner(T10, T11)) < 1e-15
    W = random_field(N, 4)
    assert B.inner(W, W).real == pytest.approx(np.sum(np.abs(W.coeffs) ** 2), rel=1e-13)
    with pytest.raises(ValueError):
        B.inner(W, random_field(4))


@given(st.integers(2, 9), st.integers(0, 2 ** 31))
def test_isometry_and_reality(N, seed):
    W = random_field(N, seed)
    c = W.coeffs
    assert B.reality_defect(c) < 1e-14
    assert np.linalg.norm(W.matrix) == pytest.approx(np.linalg.norm(c), rel=1e-12)
    back = B.QuantizedField.from_matrix(W.matrix)
    assert np.allclose(back.real, W.real, atol=1e-12)
    assert np.allclose(B.complex_to_real(B.real_to_complex(W.real)), W.real, atol=1e-14)


def test_from_coeffs_rejects_non_real():
    c = np.zeros(dim(3), dtype=complex)
    c[flat_index(1, 1)] = 1.0
    with pytest.raises(ValueError, match="reality"):
        B.QuantizedField.from_coeffs(c)
    with pytest.raises(ValueError):
        B.QuantizedField.from_matrix(np.eye(3))
    with pytest.raises(ValueError):
        B.QuantizedField(3, np.zeros(5))


def test_field_arithmetic():
    A, C = random_field(4, 1), random_field(4, 2)
    assert np.allclose((A + C).matrix, A.matrix + C.matrix)
    assert np.allclose((A - C).real, A.real - C.real)
    assert np.allclose((2.5 * A).matrix, 2.5 * A.matrix)
    with pytest.raises(ValueError):
        A + random_field(5)


def test_laplacian_pow_examples():
    N = 5
    T10 = B.QuantizedField.mode(N, 1, 0)
    assert B.laplacian_pow(T10, 1).real[flat_index(1, 0)] == pytest.approx(2.0)
    W = random_field(N, 3)
    assert np.allclose(B.laplacian_pow(B.laplacian_pow(W, -1), 1).real, W.real, atol=1e-14)
    assert np.array_equal(B.laplacian_pow(W, 0).real, W.real)


def test_discrete_laplacian_matches_inverse_operator():
    N = 5
    basis = B.build_basis(N)
    W = random_field(N, 7)
    P = (basis.inverse_laplacian @ W.matrix.reshape(-1)).reshape(N, N)
    assert np.allclose(P, B.laplacian_pow(W, -1).matrix, atol=1e-13)


def test_sobolev_norm_examples():
    N = 5
    T10 = B.QuantizedField.mode(N, 1, 0)
    assert B.sobolev_norm(T10, -2) == pytest.approx(0.5)
    W = random_field(N, 9)
    assert B.sobolev_norm(W, 0) == pytest.approx(np.linalg.norm(W.matrix), rel=1e-13)


def test_sobolev_norm_monotone_above_l_one():
    N = 7
    x = np.random.default_rng(2).standard_normal(dim(N))
    x[lm_arrays(N)[0] == 1] = 0
    W = B.QuantizedField(N, x / np.linalg.norm(x))
    vals = [B.sobolev_norm(W, s) for s in np.linspace(-3, 3, 25)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_project_lift():
    N = 6
    W = random_field(N, 5)
    assert np.array_equal(B.project(B.lift(W), N).coeffs, W.coeffs)
    assert B.lift(W).l2_norm() == pytest.approx(W.norm(), rel=1e-14)
    f = B.SmoothField.from_modes(N, {(N, 0): 1.0})
    assert B.project(f, N).norm() == 0.0


def test_project_commutes_with_laplacian():
    f = B.SmoothField.from_modes(9, {(2, 1): 1 + 2j, (2, -1): -(1 - 2j), (7, 0): 3.0, (9, 3): 1j, (9, -3): 1j})
    assert f.is_real()
    for s in (-1.5, 1.0, 2.0):
        lhs = B.project(f.laplacian_pow(s), 6)
        rhs = B.laplacian_pow(B.project(f, 6), s)
        assert np.allclose(lhs.real, rhs.real, rtol=1e-14, atol=0)
    with pytest.raises(ValueError):
        B.SmoothField.from_modes(2, {(0, 0): 1.0}).laplacian_pow(-1)


def test_smooth_field_evaluation():
    f = B.SmoothField.from_modes(1, {(1, 0): 1.0})
    th = np.array([0.3, 1.2])
    assert np.allclose(f.evaluate(th, 0.0), np.sqrt(3 / (4 * np.pi)) * np.cos(th))
    assert np.allclose(f.evaluate(th, 0.0, "theta"), -np.sqrt(3 / (4 * np.pi)) * np.sin(th))
    assert np.allclose(f.evaluate(th, 0.0, "phi"), 0)


def test_poisson_bracket_of_lifts_matches_structure_constants():
    # {Y_11, Y_10} has a single component on Y_11
    f = B.SmoothField.from_modes(1, {(1, 1): 1.0})
    g = B.SmoothField.from_modes(1, {(1, 0): 1.0})
    c = B.poisson_bracket_coeffs(f, g, 2)
    from zeitlin.harmonics import smooth_index
    from zeitlin.structconst import TripleIndex, continuous_C
    expect = 1j * continuous_C(TripleIndex(1, 1, 1, 0, 1, 1))
    assert c[smooth_index(1, 1)] == pytest.approx(expect, abs=1e-12)
    others = np.delete(c, smooth_index(1, 1))
    assert np.max(np.abs(others)) < 1e-12


def test_serialization_roundtrip():
    W = random_field(5, 11)
    j = B.field_to_json(W)
    rows = json.loads(j)["coeffs"]
    assert len(rows) == 24 and rows[0][:2] == [1, -1]
    assert np.allclose(B.field_from_json(j).real, W.real, atol=1e-15)
    raw = B.field_to_bytes(W)
    assert raw[:4] == b"ZFLD" and len(raw) == 8 + 16 * 24
    assert np.allclose(B.field_from_bytes(raw).real, W.real, atol=1e-15)
    with pytest.raises(ValueError):
        B.field_from_bytes(b"NOPE" + raw[4:])


def test_eigenvalue_helper():
    assert np.array_equal(eigenvalues(3), [2, 2, 2, 6, 6, 6, 6, 6])
