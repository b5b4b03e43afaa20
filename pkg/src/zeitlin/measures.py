"""Gaussian measure on su(N), its moments, Casimir reweighting, spectral
circulations and circulation variance along fixed curves on the sphere."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import harmonics, rng
from .basis import QuantizedField, build_basis, real_to_complex, real_to_matrix
from .indexing import dim, eigenvalues, flat_index, lm_arrays


@dataclass
class GaussianEnsemble:
    N: int
    real: np.ndarray  # (count, d) coordinates over the real orthonormal basis
    weights: np.ndarray
    seed: Optional[int] = None
    stream: Optional[int] = None

    @property
    def count(self) -> int:
        return self.real.shape[0]

    @cached_property
    def coeffs(self) -> np.ndarray:
        return real_to_complex(self.real)

    @cached_property
    def matrices(self) -> np.ndarray:
        return real_to_matrix(self.real, build_basis(self.N))

    def field(self, i: int) -> QuantizedField:
        return QuantizedField(self.N, self.real[i])

    def with_weights(self, w: np.ndarray) -> "GaussianEnsemble":
        return GaussianEnsemble(self.N, self.real, np.asarray(w, dtype=float), self.seed, self.stream)


def sample_mu(N: int, count: int, seed: int = 0, stream="mu") -> GaussianEnsemble:
    if N < 2 or count < 1:
        raise ValueError("need N >= 2 and count >= 1")
    x = rng.standard_normal(seed, stream, count, dim(N))
    return GaussianEnsemble(N, x, np.ones(count), seed, rng.stream_id(stream))


def weighted_mean(values: np.ndarray, weights: np.ndarray):
    """Self-normalized weighted mean along axis 0 and its delta-method standard error."""
    w = weights / weights.sum()
    mean = np.tensordot(w, values, axes=(0, 0))
    resid = values - mean
    var = np.tensordot(w ** 2, np.abs(resid) ** 2, axes=(0, 0))
    return mean, np.sqrt(var)


# ---------------------------------------------------------------------------
# covariance and fourth moments


@dataclass
class CovarianceReport:
    count: int
    covariance: np.ndarray
    max_abs_deviation: float
    max_z: float
    nsigma: float
    passed: bool


def covariance_check(ens: GaussianEnsemble, nsigma: float = 4.0) -> CovarianceReport:
    if ens.count < 100:
        raise ValueError("covariance check needs at least 100 samples")
    x = ens.real
    n = ens.count
    prods = x[:, :, None] * x[:, None, :]
    cov = prods.mean(axis=0)
    sigma = prods.std(axis=0, ddof=1) / np.sqrt(n)
    dev = cov - np.eye(x.shape[1])
    z = np.abs(dev) / sigma
    return CovarianceReport(n, cov, float(np.max(np.abs(dev))), float(np.max(z)), nsigma,
                            bool(np.max(z) <= nsigma))


def pair_moment(N: int, a: int, b: int) -> complex:
    """E[omega_a omega_b] = (-1)^m delta_{l l'} delta_{m, -m'}."""
    ls, ms = lm_arrays(N)
    if ls[a] == ls[b] and ms[a] == -ms[b]:
        return -1.0 if ms[a] % 2 else 1.0
    return 0.0


def wick_expected(N: int, quad: Sequence[int]) -> complex:
    """E[omega_a omega_b conj(omega_c) conj(omega_d)] from pairwise covariances."""
    a, b, c, d = quad
    ab = pair_moment(N, a, b)
    cd = np.conj(pair_moment(N, c, d))
    return complex(ab * cd + (a == c) * (b == d) + (a == d) * (b == c))


def default_wick_quadruples(N: int, n_random: int = 24, seed: int = 0) -> list[tuple[int, int, int, int]]:
    ls, ms = lm_arrays(N)
    f = flat_index
    quads = [
        (f(1, 0),) * 4,                      # real normal fourth moment: 3
        (f(1, 1),) * 4,                      # complex normal: E|z|^4 = 2
        (f(1, 1), f(1, -1), f(1, 1), f(1, -1)),
        (f(1, 1), f(1, -1), f(1, 0), f(1, 0)),
        (f(1, 0), f(2, 0), f(1, 0), f(2, 0)),
        (f(1, 1), f(2, 1), f(1, 1), f(2, 1)),
    ]
    if N > 2:
        quads += [
            (f(2, 1), f(2, -1), f(2, 2), f(2, -2)),
            (f(2, 2), f(2, -2), f(2, 2), f(2, -2)),
            (f(1, 0), f(2, 1), f(1, 1), f(2, -1)),
        ]
    g = np.random.default_rng(seed)
    d = dim(N)
    while len(quads) < 9 + n_random:
        a, c = g.integers(d, size=2)
        b = int(flat_index(ls[a], -ms[a])) if g.random() < 0.5 else int(g.integers(d))
        dd = int(flat_index(ls[c], -ms[c])) if g.random() < 0.5 else int(g.integers(d))
        quads.append((int(a), b, int(c), dd))
    return quads


@dataclass
class WickReport:
    quadruples: list
    estimates: np.ndarray
    expected: np.ndarray
    sigma_re: np.ndarray
    sigma_im: np.ndarray
    max_z: float
    nsigma: float
    passed: bool


def _z(dev, sigma, floor=1e-12):
    return np.where(sigma > 0, np.abs(dev) / np.where(sigma > 0, sigma, 1.0),
                    np.where(np.abs(dev) <= floor, 0.0, np.inf))


def wick_check(ens: GaussianEnsemble, quads=None, nsigma: float = 4.0) -> WickReport:
    if ens.count < 10_000:
        raise ValueError("Wick check needs at least 1e4 samples")
    quads = default_wick_quadruples(ens.N) if quads is None else quads
    z = ens.coeffs
    n = ens.count
    est, exp, sre, sim = [], [], [], []
    for a, b, c, d in quads:
        v = z[:, a] * z[:, b] * np.conj(z[:, c]) * np.conj(z[:, d])
        est.append(v.mean())
        sre.append(v.real.std(ddof=1) / np.sqrt(n))
        sim.append(v.imag.std(ddof=1) / np.sqrt(n))
        exp.append(wick_expected(ens.N, (a, b, c, d)))
    est, exp, sre, sim = map(np.array, (est, exp, sre, sim))
    zz = np.maximum(_z((est - exp).real, sre), _z((est - exp).imag, sim))
    return WickReport(list(quads), est, exp, sre, sim, float(zz.max()), nsigma, bool(zz.max() <= nsigma))


# ---------------------------------------------------------------------------
# Sobolev moments


def sobolev_second_moment(N: int, s: float) -> float:
    """E ||W||^2_{H^s} = sum_{l=1}^{N-1} (2l+1) (l(l+1))^s."""
    l = np.arange(1, N, dtype=float)
    return float(np.sum((2 * l + 1) * (l * (l + 1)) ** s))


def sobolev_moment(ens: GaussianEnsemble, s: float, p: float):
    """Weighted MC estimate of E ||W||^p_{H^s} and its standard error."""
    norms = np.sqrt(np.sum(eigenvalues(ens.N) ** s * ens.real ** 2, axis=1))
    mean, err = weighted_mean(norms ** p, ens.weights)
    return float(mean), float(err)


# ---------------------------------------------------------------------------
# Casimir reweighting


@dataclass
class GibbsReport:
    gamma: float
    p_cas: int
    Z_estimate: float
    Z_stderr: float
    ess: float
    ess_fraction: float


def casimir_values(ens: GaussianEnsemble, p: int) -> np.ndarray:
    W = ens.matrices
    return np.trace(np.linalg.matrix_power(W, p), axis1=-2, axis2=-1)


def gibbs_reweight(ens: GaussianEnsemble, gamma: float, p_cas: int = 4):
    """Attach weights exp(-gamma Tr(W^p)) to an ensemble; returns (ensemble, report).

    Only p divisible by 4 gives a real non-negative trace for every
    skew-Hermitian W, so other values are rejected.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if p_cas % 4:
        raise ValueError("p_cas must be a multiple of 4")
    C = casimir_values(ens, p_cas).real
    w = ens.weights * np.exp(-gamma * C)
    Z = float(w.mean())
    Zerr = float(w.std(ddof=1) / np.sqrt(ens.count)) if ens.count > 1 else 0.0
    ess = float(w.sum() ** 2 / np.sum(w ** 2)) if w.sum() > 0 else 0.0
    rep = GibbsReport(gamma, p_cas, Z, Zerr, ess, ess / ens.count)
    if rep.ess_fraction < 0.01:
        warnings.warn(f"effective sample size {ess:.1f} is below 1% of {ens.count}", RuntimeWarning)
    return ens.with_weights(w), rep


def ordered_eigenvalue_stats(ens: GaussianEnsemble):
    """Weighted mean and standard error of each sorted eigenvalue a_i (eigenvalues are i a_i)."""
    a = np.linalg.eigvalsh(-1j * ens.matrices)
    return weighted_mean(a, ens.weights)


# ---------------------------------------------------------------------------
# spectral circulations


@dataclass
class SpectralCirculations:
    eigenvalues: np.ndarray  # purely imaginary, ascending imaginary part
    vectors: np.ndarray      # columns e_i
    projectors: np.ndarray   # (N, N, N), projectors[i] = e_i e_i^*
    paired: np.ndarray       # Tr(W^* e_i e_i^*)


def spectral_circulations(W) -> SpectralCirculations:
    M = W.matrix if isinstance(W, QuantizedField) else np.asarray(W, dtype=complex)
    a, V = np.linalg.eigh(-1j * M)
    lam = 1j * a
    proj = np.einsum("ik,jk->kij", V, V.conj())
    paired = np.einsum("ij,kij->k", M.conj(), proj)
    return SpectralCirculations(lam, V, proj, paired)


def power_sum_residual(W, k_max: int = 6) -> float:
    """max_k |sum_i lambda_i^k - Tr(W^k)| / max(1, |Tr(W^k)|)."""
    sc = spectral_circulations(W)
    M = W.matrix if isinstance(W, QuantizedField) else np.asarray(W, dtype=complex)
    worst = 0.0
    Mk = np.eye(M.shape[0], dtype=complex)
    for k in range(1, k_max + 1):
        Mk = Mk @ M
        tr = np.trace(Mk)
        worst = max(worst, abs(np.sum(sc.eigenvalues ** k) - tr) / max(1.0, abs(tr)))
    return float(worst)


def projector_orthogonality_residual(sc: SpectralCirculations) -> float:
    G = np.einsum("iab,jab->ij", sc.projectors.conj(), sc.projectors)
    return float(np.max(np.abs(G - np.eye(G.shape[0]))))


# ---------------------------------------------------------------------------
# curves and circulation


@dataclass(frozen=True)
class CurveSpec:
    """Named closed curves on the unit sphere.

    kind: "latitude" (theta0), "great_circle" (axis_theta, axis_phi),
    "small_circle" (axis_theta, axis_phi, radius), "ellipse" (axis_theta,
    axis_phi, a, b: angular semi-axes). ``rotation`` turns the curve about the
    z axis, ``reverse`` flips its orientation.
    """

    kind: str
    params: tuple = ()
    nodes: int = 256
    rotation: float = 0.0
    reverse: bool = False

    @classmethod
    def latitude(cls, theta0, nodes=256, **kw):
        return cls("latitude", (("theta0", theta0),), nodes, **kw)

    @classmethod
    def great_circle(cls, axis_theta, axis_phi, nodes=256, **kw):
        return cls("great_circle", (("axis_theta", axis_theta), ("axis_phi", axis_phi)), nodes, **kw)

    @classmethod
    def small_circle(cls, axis_theta, axis_phi, radius, nodes=256, **kw):
        return cls("small_circle", (("axis_theta", axis_theta), ("axis_phi", axis_phi),
                                    ("radius", radius)), nodes, **kw)

    @classmethod
    def ellipse(cls, axis_theta, axis_phi, a, b, nodes=256, **kw):
        return cls("ellipse", (("axis_theta", axis_theta), ("axis_phi", axis_phi),
                               ("a", a), ("b", b)), nodes, **kw)

    @classmethod
    def parse(cls, text: str, nodes: int = 256) -> "CurveSpec":
        """'latitude:0.8', 'great_circle:0.7,0.3', 'small_circle:0.7,0.3,0.5', 'ellipse:0.5,0,0.6,0.3'."""
        kind, _, rest = text.partition(":")
        vals = [float(v) for v in rest.split(",") if v.strip()]
        makers = {"latitude": cls.latitude, "great_circle": cls.great_circle,
                  "small_circle": cls.small_circle, "ellipse": cls.ellipse}
        if kind not in makers:
            raise ValueError(f"unknown curve family {kind!r}")
        return makers[kind](*vals, nodes=nodes)

    def param(self, name):
        return dict(self.params)[name]


def _frame(theta, phi):
    n = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    e1 = np.array([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)])
    e2 = np.array([-np.sin(phi), np.cos(phi), 0.0])
    return n, e1, e2


def curve_geometry(curve: CurveSpec):
    """Points, tangents d gamma/dt and the trapezoid weight on offset nodes."""
    n_nodes = curve.nodes
    t = 2 * np.pi * (np.arange(n_nodes) + 0.5) / n_nodes
    if curve.kind == "latitude":
        axis, e1, e2 = _frame(0.0, 0.0)
        rho = np.full_like(t, curve.param("theta0"))
        drho = np.zeros_like(t)
    else:
        axis, e1, e2 = _frame(curve.param("axis_theta"), curve.param("axis_phi"))
        if curve.kind == "great_circle":
            rho, drho = np.full_like(t, np.pi / 2), np.zeros_like(t)
        elif curve.kind == "small_circle":
            rho, drho = np.full_like(t, curve.param("radius")), np.zeros_like(t)
        elif curve.kind == "ellipse":
            a, b = curve.param("a"), curve.param("b")
            q = (b * np.cos(t)) ** 2 + (a * np.sin(t)) ** 2
            rho = a * b / np.sqrt(q)
            drho = -0.5 * a * b * q ** -1.5 * (2 * (a * a - b * b) * np.sin(t) * np.cos(t))
        else:
            raise ValueError(f"unknown curve family {curve.kind!r}")
    if not np.all((rho > 0) & (rho < np.pi)):
        raise ValueError("curve radius must lie in (0, pi)")
    c, s = np.cos(t)[:, None], np.sin(t)[:, None]
    radial = c * e1 + s * e2
    pts = np.cos(rho)[:, None] * axis + np.sin(rho)[:, None] * radial
    tan = (-np.sin(rho) * drho)[:, None] * axis + (np.cos(rho) * drho)[:, None] * radial \
        + np.sin(rho)[:, None] * (-s * e1 + c * e2)
    if curve.rotation:
        ca, sa = np.cos(curve.rotation), np.sin(curve.rotation)
        R = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
        pts, tan = pts @ R.T, tan @ R.T
    if curve.reverse:
        pts, tan = pts[::-1], -tan[::-1]
    if np.min(np.linalg.norm(tan, axis=1)) < 1e-8:
        raise ValueError("curve is not regular")
    return pts, tan, 2 * np.pi / n_nodes


def _angles(pts):
    theta = np.arccos(np.clip(pts[:, 2], -1, 1))
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    return theta, phi


def mode_velocities(pts, L_max: int) -> np.ndarray:
    """Cartesian perp-gradient of Y_lm at the points, shape (modes, nodes, 3), l = 1..L_max.

    The velocity of stream function psi is (d_phi psi / sin theta) e_theta - (d_theta psi) e_phi.
    """
    theta, phi = _angles(pts)
    if np.min(np.sin(theta)) < 1e-6:
        raise ValueError("quadrature node too close to a pole; shift the curve or change node count")
    et = np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)], axis=1)
    ep = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)], axis=1)
    out = []
    for l in range(1, L_max + 1):
        for m in range(-l, l + 1):
            Y = harmonics.sph_harm(l, m, theta, phi)
            dth = harmonics.sph_harm_dtheta(l, m, theta, phi)
            u_t = 1j * m * Y / np.sin(theta)
            u_p = -dth
            out.append(u_t[:, None] * et + u_p[:, None] * ep)
    return np.array(out)


def mode_circulations(curve: CurveSpec, L_max: int) -> np.ndarray:
    """Gamma(perp-grad Y_lm) for l = 1..L_max in canonical order (complex)."""
    pts, tan, w = curve_geometry(curve)
    if curve.nodes < 4 * L_max:
        raise ValueError(f"need at least {4 * L_max} quadrature nodes for L_max = {L_max}")
    V = mode_velocities(pts, L_max)
    return w * np.einsum("anx,nx->a", V, tan)


@dataclass
class CirculationReport:
    variance: float
    per_shell: np.ndarray
    tail_estimate: float
    decay_exponent: float
    L_max: int
    nodes: int


def circulation_variance(curve: CurveSpec, L_max: int) -> CirculationReport:
    """Variance of the circulation of v = perp-grad (Laplacian^{-1} omega) with
    omega white noise up to degree L_max: sum |Gamma(perp-grad Y_lm)|^2 / (l(l+1))^2."""
    if L_max < 2:
        raise ValueError("L_max must be at least 2")
    g = mode_circulations(curve, L_max)
    ls, _ = lm_arrays(L_max + 1)
    lam = ls * (ls + 1.0)
    terms = np.abs(g) ** 2 / lam ** 2
    shells = np.bincount(ls - 1, weights=terms)
    # symmetric curves switch off whole shells; fit the decay on the others
    deg = np.arange(1, L_max + 1)
    live = (deg >= max(1, L_max // 2)) & (shells > 1e-14 * shells.max())
    if live.sum() >= 2:
        slope = -np.polyfit(np.log(deg[live]), np.log(shells[live]), 1)[0]
        last = shells[live][-1] * deg[live][-1] / L_max
    else:
        slope, last = np.nan, 0.0
    tail = last * L_max / (slope - 1) if slope > 1 else np.inf
    return CirculationReport(float(terms.sum()), shells, float(tail), float(slope), L_max, curve.nodes)


def circulation_mc(curve: CurveSpec, L_max: int, count: int, seed: int = 0, batch: int = 2000):
    """Sample band-limited white-noise vorticity, synthesize the velocity at
    the curve nodes and integrate; returns (variance, stderr, samples)."""
    pts, tan, w = curve_geometry(curve)
    V = mode_velocities(pts, L_max)
    ls, _ = lm_arrays(L_max + 1)
    lam = ls * (ls + 1.0)
    d = V.shape[0]
    Vflat = V.reshape(d, -1)
    gam = np.empty(count)
    for start in range(0, count, batch):
        k = min(batch, count - start)
        x = rng.standard_normal(seed, "circulation", k, d, start=start)
        psi = -real_to_complex(x) / lam
        v = (psi @ Vflat).reshape(k, *V.shape[1:])
        if np.max(np.abs(v.imag)) > 1e-8 * max(1.0, np.max(np.abs(v.real))):
            raise RuntimeError("synthesized velocity is not real")
        gam[start:start + k] = w * np.einsum("snx,nx->s", v.real, tan)
    var = float(np.mean(gam ** 2))
    err = float(np.std(gam ** 2, ddof=1) / np.sqrt(count))
    return var, err, gam
