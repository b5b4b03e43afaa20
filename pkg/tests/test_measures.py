import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from zeitlin import measures as Ms
from zeitlin import rng
from zeitlin.basis import SmoothField, lift, project
from zeitlin.dynamics import casimirs
from zeitlin.indexing import dim, flat_index


def z_score(est, expect, err):
    return abs(est - expect) / err


# --- rng -------------------------------------------------------------------


def test_streams_are_prefix_stable_and_split_invariant():
    full = rng.standard_normal(7, "mu", 10_000, 3)
    assert np.array_equal(rng.standard_normal(7, "mu", 50, 3), full[:50])
    parts = np.concatenate([rng.standard_normal(7, "mu", 4100, 3),
                            rng.standard_normal(7, "mu", 5900, 3, start=4100)])
    assert np.array_equal(parts, full)
    assert not np.allclose(rng.standard_normal(7, "wick", 50, 3), full[:50])
    assert not np.allclose(rng.standard_normal(8, "mu", 50, 3), full[:50])
    assert rng.stream_id(9) == 9 and rng.stream_id("torus") == rng.STREAMS["torus"]


# --- sampling --------------------------------------------------------------


def test_sample_mu_shape_and_validation():
    ens = Ms.sample_mu(4, 10, seed=1)
    assert ens.real.shape == (10, 15) and ens.count == 10
    assert np.all(ens.weights == 1)
    assert ens.matrices.shape == (10, 4, 4)
    assert np.allclose(ens.field(3).matrix, ens.matrices[3])
    with pytest.raises(ValueError):
        Ms.sample_mu(1, 10)
    with pytest.raises(ValueError):
        Ms.sample_mu(3, 0)


def test_enstrophy_mean_and_centering():
    N, n = 5, 10_000
    ens = Ms.sample_mu(N, n, seed=2)
    sq = np.sum(np.abs(ens.matrices) ** 2, axis=(1, 2))
    assert z_score(sq.mean(), N * N - 1, sq.std(ddof=1) / np.sqrt(n)) < 4
    c = ens.coeffs
    zr = np.abs(c.real.mean(0)) / (c.real.std(0, ddof=1) / np.sqrt(n) + 1e-300)
    assert np.max(zr[c.real.std(0) > 0]) < 4.5


def test_reality_constraint_per_sample():
    c = Ms.sample_mu(6, 50, seed=3).coeffs
    from zeitlin.basis import reality_defect
    assert reality_defect(c) < 1e-15


def test_covariance_check_small():
    ens = Ms.sample_mu(3, 20_000, seed=4)
    rep = Ms.covariance_check(ens)
    assert rep.passed and rep.max_abs_deviation <= 4 / np.sqrt(rep.count) * 1.5
    assert np.allclose(np.diag(rep.covariance), 1, atol=0.05)
    with pytest.raises(ValueError):
        Ms.covariance_check(Ms.sample_mu(3, 50))


def test_covariance_check_detects_wrong_scale():
    ens = Ms.sample_mu(3, 20_000, seed=5)
    scaled = Ms.GaussianEnsemble(3, 1.1 * ens.real, ens.weights)
    assert not Ms.covariance_check(scaled).passed


# --- Wick ------------------------------------------------------------------


def test_wick_expected_examples():
    f = flat_index
    assert Ms.wick_expected(4, (f(1, 0),) * 4) == 3
    assert Ms.wick_expected(4, (f(1, 1),) * 4) == 2
    assert Ms.wick_expected(4, (f(1, 0), f(2, 0), f(3, 1), f(3, 2))) == 0
    # pairing of (l, m) with (l, -m) carries (-1)^m
    assert Ms.pair_moment(4, f(2, 1), f(2, -1)) == -1
    assert Ms.pair_moment(4, f(2, 2), f(2, -2)) == 1
    assert Ms.wick_expected(4, (f(2, 1), f(2, -1), f(1, 0), f(1, 0))) == -1


def test_wick_check_passes_and_catches_wrong_phase():
    ens = Ms.sample_mu(3, 20_000, seed=6)
    rep = Ms.wick_check(ens)
    assert rep.passed, rep.max_z
    f = flat_index
    wrong = Ms.wick_check(ens, quads=[(f(2, 1), f(2, -1), f(2, 1), f(2, -1))])
    assert wrong.estimates[0].real == pytest.approx(2.0, abs=0.1)  # 1 + 1 + 0, phases cancel in |.|^2
    forged = Ms.wick_check(ens, quads=[(f(2, 1), f(2, -1), f(1, 0), f(1, 0))])
    assert forged.passed and forged.expected[0] == -1
    with pytest.raises(ValueError):
        Ms.wick_check(Ms.sample_mu(3, 100))


def test_default_quadruples_valid():
    q = Ms.default_wick_quadruples(5)
    assert len(q) == 33 and all(0 <= i < dim(5) for t in q for i in t)


# --- Sobolev moments -------------------------------------------------------


def test_sobolev_second_moment_closed_form():
    assert Ms.sobolev_second_moment(5, 0.0) == 24
    ens = Ms.sample_mu(9, 10_000, seed=7)
    mean, err = Ms.sobolev_moment(ens, -1.5, 2)
    assert z_score(mean, Ms.sobolev_second_moment(9, -1.5), err) < 4
    m0, _ = Ms.sobolev_moment(Ms.sample_mu(4, 5000, seed=8), 0.0, 2)
    assert m0 == pytest.approx(15, rel=0.05)


def test_sobolev_second_moment_growth():
    # decade increments shrink by 10^-0.2 when s = -1.1, stay at 2 log 10 when s = -1
    bounded = np.diff([Ms.sobolev_second_moment(N, -1.1) for N in (10, 100, 1000, 10_000)])
    assert np.allclose(bounded[1:] / bounded[:-1], 10 ** -0.2, rtol=0.02)
    log = [Ms.sobolev_second_moment(N, -1.0) for N in (10, 100, 1000, 10_000)]
    steps = np.diff(log)
    assert np.allclose(steps, 2 * np.log(10), rtol=0.05)


# --- Gibbs -----------------------------------------------------------------


def test_gibbs_reweight():
    ens = Ms.sample_mu(3, 2000, seed=9)
    same, rep0 = Ms.gibbs_reweight(ens, 0.0)
    assert np.all(same.weights == 1) and rep0.Z_estimate == 1 and rep0.ess == 2000
    w, rep = Ms.gibbs_reweight(ens, 0.1)
    assert np.all((w.weights > 0) & (w.weights <= 1))
    assert 0 < rep.Z_estimate < 1 and rep.Z_stderr > 0
    C4 = casimirs(ens.matrices, 4)[:, 2]
    assert np.all(C4.real >= 0) and np.max(np.abs(C4.imag)) < 1e-10
    mean, err = Ms.ordered_eigenvalue_stats(w)
    assert mean.shape == (3,) and np.all(err > 0)
    with pytest.raises(ValueError):
        Ms.gibbs_reweight(ens, 0.1, 2)
    with pytest.raises(ValueError):
        Ms.gibbs_reweight(ens, -1.0)


def test_gibbs_degenerate_warning():
    ens = Ms.sample_mu(5, 500, seed=10)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        Ms.gibbs_reweight(ens, 50.0)
    assert any("effective sample size" in str(c.message) for c in caught)


def test_gibbs_partition_function_across_levels():
    # no limit is asserted; at fixed gamma the quartic weight concentrates quickly
    # with N and importance sampling from mu_N degenerates by N = 9
    reps = {}
    for N in (3, 5, 9):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            _, reps[N] = Ms.gibbs_reweight(Ms.sample_mu(N, 4000, seed=11), 0.1)
        assert bool(caught) == (reps[N].ess_fraction < 0.01)
    assert all(0 < r.Z_estimate < 1 and r.Z_stderr > 0 for r in reps.values())
    assert reps[3].ess_fraction > reps[5].ess_fraction > reps[9].ess_fraction
    assert reps[9].ess_fraction < 0.01


def test_weighted_mean_matches_unweighted():
    v = np.arange(10.0)
    mean, err = Ms.weighted_mean(v, np.ones(10))
    assert mean == pytest.approx(4.5) and err == pytest.approx(np.std(v) / np.sqrt(10))


# --- spectral circulations -------------------------------------------------


@settings(max_examples=25)
@given(st.integers(2, 9), st.integers(0, 2 ** 20))
def test_spectral_circulations(N, seed):
    W = Ms.sample_mu(N, 1, seed=seed).field(0)
    sc = Ms.spectral_circulations(W)
    assert abs(np.sum(sc.eigenvalues)) < 1e-12
    assert np.max(np.abs(sc.eigenvalues.real)) < 1e-12
    assert Ms.power_sum_residual(W) < 1e-10
    assert Ms.projector_orthogonality_residual(sc) < 1e-12
    assert np.allclose(sc.paired, np.conj(sc.eigenvalues), atol=1e-12)
    recon = np.einsum("i,iab->ab", sc.eigenvalues, sc.projectors)
    assert np.allclose(recon, W.matrix, atol=1e-12)


# --- pairings --------------------------------------------------------------


def test_projection_pairing_is_exact_above_band_limit():
    f = SmoothField.from_modes(3, {(1, 0): 0.4, (3, 2): 1 + 1j, (3, -2): 1 - 1j})
    g = SmoothField.from_modes(3, {(3, 2): 2j, (3, -2): -2j, (2, 0): 1.0})
    exact = np.vdot(f.coeffs, g.coeffs)
    for N in (4, 5, 9):
        from zeitlin.basis import inner
        assert inner(project(f, N), project(g, N)) == pytest.approx(exact, abs=1e-13)
    assert lift(project(f, 4)).l2_norm() == pytest.approx(f.l2_norm())


def test_test_function_pairing_is_normal():
    # <omega, phi> for a band-limited real phi has law N(0, ||phi||^2) at every level above the band
    x = np.zeros(dim(4))
    x[[flat_index(1, 0), flat_index(2, 1), flat_index(3, -2)]] = [0.5, 1.0, -0.7]
    norm2 = float(x @ x)
    for N in (4, 6, 9):
        ens = Ms.sample_mu(N, 5000, seed=N)
        proj = ens.real[:, :dim(4)] @ x
        assert stats.kstest(proj / np.sqrt(norm2), "norm").pvalue > 1e-3


# --- curves ----------------------------------------------------------------


def test_curve_parse_and_errors():
    c = Ms.CurveSpec.parse("small_circle:0.7,0.3,0.5", nodes=64)
    assert c.kind == "small_circle" and c.param("radius") == 0.5 and c.nodes == 64
    with pytest.raises(ValueError):
        Ms.CurveSpec.parse("spiral:1")
    with pytest.raises(ValueError):
        Ms.curve_geometry(Ms.CurveSpec.latitude(0.0))
    with pytest.raises(ValueError):
        Ms.circulation_variance(Ms.CurveSpec.latitude(1.0, nodes=16), 8)
    with pytest.raises(ValueError):
        Ms.circulation_variance(Ms.CurveSpec.latitude(1.0), 1)


def test_curve_geometry_lengths():
    for curve, length in [(Ms.CurveSpec.latitude(0.6), 2 * np.pi * np.sin(0.6)),
                          (Ms.CurveSpec.great_circle(0.9, 0.2), 2 * np.pi),
                          (Ms.CurveSpec.small_circle(0.4, 1.0, 0.3), 2 * np.pi * np.sin(0.3))]:
        pts, tan, w = Ms.curve_geometry(curve)
        assert np.allclose(np.linalg.norm(pts, axis=1), 1)
        assert np.allclose(np.einsum("ij,ij->i", pts, tan), 0, atol=1e-14)
        assert w * np.linalg.norm(tan, axis=1).sum() == pytest.approx(length, rel=1e-12)


def test_latitude_circulation_only_sees_zonal_modes():
    # Gamma(perp-grad Y_l0) along a latitude is -2 pi sin(t0) dY_l0/dtheta
    t0 = 0.8
    g = Ms.mode_circulations(Ms.CurveSpec.latitude(t0), 4)
    from zeitlin.harmonics import sph_harm_dtheta
    for l in range(1, 5):
        for m in range(-l, l + 1):
            val = g[flat_index(l, m)]
            if m:
                assert abs(val) < 1e-12
            else:
                expect = -2 * np.pi * np.sin(t0) * sph_harm_dtheta(l, 0, t0, 0.0)
                assert val == pytest.approx(expect, rel=1e-10)


def test_circulation_variance_symmetries():
    L = 12
    base = Ms.circulation_variance(Ms.CurveSpec.latitude(0.9), L).variance
    turned = Ms.circulation_variance(Ms.CurveSpec.latitude(0.9, rotation=1.3), L).variance
    assert turned == pytest.approx(base, rel=1e-12)
    gc = Ms.circulation_variance(Ms.CurveSpec.great_circle(0.7, 0.3), L)
    rev = Ms.circulation_variance(Ms.CurveSpec.great_circle(0.7, 0.3, reverse=True), L)
    assert rev.variance == pytest.approx(gc.variance, rel=1e-12)
    assert gc.per_shell.shape == (L,) and gc.per_shell.sum() == pytest.approx(gc.variance)
    assert np.isfinite(gc.tail_estimate) or np.isnan(gc.decay_exponent)


def test_circulation_mc_small():
    curve = Ms.CurveSpec.ellipse(0.6, 0.2, 0.5, 0.3, nodes=96)
    spec = Ms.circulation_variance(curve, 6).variance
    var, err, samples = Ms.circulation_mc(curve, 6, 4000, seed=1, batch=700)
    assert samples.shape == (4000,) and z_score(var, spec, err) < 4
    again = Ms.circulation_mc(curve, 6, 4000, seed=1, batch=4000)[0]
    assert again == pytest.approx(var, rel=1e-12)
