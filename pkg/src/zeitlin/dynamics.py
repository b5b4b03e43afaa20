"""Time integration of dW/dt = s_N [P, W] with Laplacian_N P = W.

The default stepper is the isospectral midpoint (Cayley) scheme

    W_n     = (I - h X/2) Wt (I + h X/2)
    W_{n+1} = (I + h X/2) Wt (I - h X/2),     X = s_N P(Wt),

which is a unitary conjugation for any skew-Hermitian X, so eigenvalues are
kept exactly, and which keeps the l = 1 coefficients because rotations
commute with the Laplacian. It does not keep the energy. With
``energy_correction`` the generator becomes X = s_N (P(Wt) + delta Z), where
Z is orthogonal to the three directions that would move the l = 1
coefficients, and delta is solved inside the same fixed point so that
H(W_{n+1}) = H(W_n). Spectrum and momentum stay exact, and delta = O(h^2).

All routines accept a single matrix (N, N) or a stack (..., N, N).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .basis import BasisSet, QuantizedField, build_basis, matrix_to_coeffs
from .indexing import flat_index
from .structconst import bracket_scale

INTEGRATORS = ("isospectral", "rk4")


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"midpoint solve did not converge after {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass
class FlowConfig:
    N: int
    dt: float
    T_final: float
    integrator: str = "isospectral"
    scale: str = "dimension"
    monitor_stride: int = 1
    energy_correction: bool = True
    tol: float = 1e-12
    max_iter: int = 50
    k_max: Optional[int] = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.T_final < self.dt:
            raise ValueError("T_final must be at least dt")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.monitor_stride < 1:
            raise ValueError("monitor_stride must be >= 1")
        if self.k_max is None:
            self.k_max = min(6, self.N)

    @property
    def bracket_scale(self) -> float:
        return bracket_scale(self.N, self.scale)

    @property
    def steps(self) -> int:
        return int(round(self.T_final / self.dt))


# ---------------------------------------------------------------------------
# invariants


def _as_matrix(W) -> np.ndarray:
    return W.matrix if isinstance(W, QuantizedField) else np.asarray(W, dtype=complex)


def _basis_for(W: np.ndarray) -> BasisSet:
    return build_basis(W.shape[-1])


def _apply(op: np.ndarray, W: np.ndarray) -> np.ndarray:
    return (W.reshape(*W.shape[:-2], -1) @ op.T).reshape(W.shape)


def stream_function(W) -> np.ndarray:
    """P = -(-Laplacian_N)^{-1} W."""
    W = _as_matrix(W)
    return -_apply(_basis_for(W).inverse_laplacian, W)


def _re_inner(A, B):
    return np.einsum("...ij,...ij->...", A.conj(), B).real


def hamiltonian(W) -> np.ndarray:
    """H = -1/2 Tr(P^* W)."""
    W = _as_matrix(W)
    return -0.5 * _re_inner(stream_function(W), W)


def momentum(W) -> np.ndarray:
    """(W_{1,1}, W_{1,0}, W_{1,-1}) as complex coefficients."""
    W = _as_matrix(W)
    c = matrix_to_coeffs(W, _basis_for(W))
    return c[..., [flat_index(1, 1), flat_index(1, 0), flat_index(1, -1)]]


def casimirs(W, k_max: int) -> np.ndarray:
    """Tr(W^k) for k = 2..k_max (complex)."""
    W = _as_matrix(W)
    out = []
    Wk = W
    for _ in range(2, k_max + 1):
        Wk = Wk @ W
        out.append(np.trace(Wk, axis1=-2, axis2=-1))
    return np.stack(out, axis=-1)


def spectrum(W) -> np.ndarray:
    """Sorted real a_i with eigenvalues i*a_i."""
    W = _as_matrix(W)
    return np.linalg.eigvalsh(-1j * W)


# ---------------------------------------------------------------------------
# vector field and steppers


def _comm(A, B):
    return A @ B - B @ A


def vector_field(W, s_N: Optional[float] = None):
    """s_N [P, W]; returns the same type it was given."""
    M = _as_matrix(W)
    s_N = bracket_scale(M.shape[-1]) if s_N is None else s_N
    V = s_N * _comm(stream_function(M), M)
    if isinstance(W, QuantizedField):
        return QuantizedField.from_matrix(V)
    return V


def _energy_generator(Wt, P, F, Eone, h_unused=None):
    """Correction direction Z and its multiplier delta for one iterate.

    F is A(Wt + E) with A = (-Laplacian)^{-1}; the energy balance reads
    Re<F, [P + delta Z, Wt]> = 0.
    """
    adj = lambda Y: np.swapaxes(Y.conj(), -1, -2)
    G = adj(_comm(Wt, adj(F)))
    D = np.stack([adj(_comm(Wt, adj(Eone[j]))) for j in range(3)], axis=-3)
    gram = np.einsum("...jab,...kab->...jk", D.conj(), D).real
    rhs = np.einsum("...jab,...ab->...j", D.conj(), G).real
    ridge = 1e-12 * np.trace(gram, axis1=-2, axis2=-1)[..., None, None] * np.eye(3) + 1e-300 * np.eye(3)
    coef = np.linalg.solve(gram + ridge, rhs[..., None])[..., 0]
    Z = G - np.einsum("...j,...jab->...ab", coef, D)
    num = _re_inner(F, _comm(P, Wt))
    den = _re_inner(F, _comm(Z, Wt))
    nF, nW = np.sqrt(_re_inner(F, F)), np.sqrt(_re_inner(Wt, Wt))
    scale = np.sqrt(_re_inner(G, G)) * nF * nW
    # near a steady state both num and den are roundoff; the balance already holds
    balanced = np.abs(num) <= 1e-13 * np.maximum(nF * np.sqrt(_re_inner(P, P)) * nW, 1e-300)
    safe = (np.abs(den) > 1e-13 * np.maximum(scale, 1e-300)) & ~balanced
    delta = np.where(safe, -num / np.where(safe, den, 1.0), 0.0)
    return Z, delta


def _corrected_generator(Wt, P, X, h, s_N, Ainv, Eone, sweeps):
    # E depends on the corrected X itself; each sweep shrinks the mismatch by O(h^2)
    for _ in range(sweeps):
        E = -(h * h / 4) * (X @ Wt @ X)
        F = _apply(Ainv, Wt + E)
        Z, delta = _energy_generator(Wt, P, F, Eone)
        X = s_N * (P + delta[..., None, None] * Z)
    return X


def _isospectral_step(W, h, s_N, cfg: FlowConfig):
    basis = _basis_for(W)
    Ainv = basis.inverse_laplacian
    Eone = basis.E[:3]
    eye = np.eye(W.shape[-1])
    norm0 = np.max(np.abs(W))
    Wt = W.copy()
    X = s_N * (-_apply(Ainv, Wt))
    res = np.inf
    for it in range(1, cfg.max_iter + 1):
        P = -_apply(Ainv, Wt)
        if cfg.energy_correction:
            X = _corrected_generator(Wt, P, X, h, s_N, Ainv, Eone, 1)
        else:
            X = s_N * P
        new = W + (h / 2) * _comm(X, Wt) + (h * h / 4) * (X @ Wt @ X)
        res = float(np.max(np.abs(new - Wt)))
        Wt = new
        if res <= cfg.tol * max(norm0, 1e-300):
            break
    else:
        raise ConvergenceError(cfg.max_iter, res)
    P = -_apply(Ainv, Wt)
    if cfg.energy_correction:
        X = _corrected_generator(Wt, P, X, h, s_N, Ainv, Eone, 3)
    else:
        X = s_N * P
    Q = eye + (h / 2) * X
    Qh = eye - (h / 2) * X
    out = Q @ Wt @ Qh
    return 0.5 * (out - np.swapaxes(out.conj(), -1, -2)), it


def _rk4_step(W, h, s_N):
    f = lambda Y: s_N * _comm(stream_function(Y), Y)
    k1 = f(W)
    k2 = f(W + h / 2 * k1)
    k3 = f(W + h / 2 * k2)
    k4 = f(W + h * k3)
    return W + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def step(W, cfg: FlowConfig, _depth: int = 0):
    """One step of size cfg.dt; falls back to two half steps if the solve stalls."""
    M = _as_matrix(W)
    s_N = cfg.bracket_scale
    if cfg.integrator == "rk4":
        out = _rk4_step(M, cfg.dt, s_N)
    else:
        try:
            out, _ = _isospectral_step(M, cfg.dt, s_N, cfg)
        except ConvergenceError:
            if _depth >= 4:
                raise
            half = replace(cfg, dt=cfg.dt / 2, T_final=max(cfg.T_final, cfg.dt))
            out = step(step(M, half, _depth + 1), half, _depth + 1)
    if isinstance(W, QuantizedField):
        return QuantizedField.from_matrix(out)
    return out


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    N: int
    times: np.ndarray
    states: np.ndarray  # (n_snap, N, N) or (n_snap, batch, N, N)
    diagnostics: dict = field(default_factory=dict)

    def field(self, i: int) -> QuantizedField:
        return QuantizedField.from_matrix(self.states[i])


def _diagnostics(W, k_max):
    return {
        "H": hamiltonian(W),
        "M": momentum(W),
        "C": casimirs(W, k_max),
        "spectral_radius": np.max(np.abs(spectrum(W)), axis=-1),
        "spectrum": spectrum(W),
    }


def simulate(W0, cfg: FlowConfig) -> Trajectory:
    """Integrate to cfg.T_final, recording states and invariants every monitor_stride steps."""
    W = _as_matrix(W0).copy()
    if W.shape[-1] != cfg.N:
        raise ValueError("initial state level does not match the config")
    times, states, diags = [0.0], [W.copy()], [_diagnostics(W, cfg.k_max)]
    for n in range(1, cfg.steps + 1):
        W = step(W, cfg)
        if n % cfg.monitor_stride == 0 or n == cfg.steps:
            times.append(n * cfg.dt)
            states.append(W.copy())
            diags.append(_diagnostics(W, cfg.k_max))
    merged = {k: np.stack([d[k] for d in diags]) for k in diags[0]}
    return Trajectory(cfg.N, np.array(times), np.stack(states), merged)


def evolve(W0, cfg: FlowConfig, record: Sequence[float]) -> dict:
    """Integrate a stack of states, returning {t: states} for the requested times."""
    W = _as_matrix(W0).copy()
    targets = {int(round(t / cfg.dt)): t for t in record}
    out = {}
    if 0 in targets:
        out[targets[0]] = W.copy()
    last = max(targets)
    for n in range(1, last + 1):
        W = step(W, cfg)
        if n in targets:
            out[targets[n]] = W.copy()
    return out


def accelerate(traj: Trajectory, N: Union[int, float]) -> Trajectory:
    """Relabel times t -> t / N^{3/2}: the state at new time t is W(N^{3/2} t)."""
    return Trajectory(traj.N, traj.times / float(N) ** 1.5, traj.states, traj.diagnostics)


def relative_drift(traj: Trajectory) -> dict:
    """Max relative deviation from t = 0 for each monitored invariant.

    Trace invariants are divided by |C_k(0)|, or by ||W_0||^k when C_k(0) is
    small against it (odd traces can nearly vanish by symmetry).
    """
    d = traj.diagnostics
    H = d["H"]
    M = d["M"]
    C = d["C"]
    w0 = float(np.sqrt(np.sum(np.abs(traj.states[0]) ** 2)))
    out = {"H": float(np.max(np.abs(H - H[0])) / abs(H[0])) if H[0] != 0 else float(np.max(np.abs(H)))}
    Mref = max(float(np.linalg.norm(M[0])), 1e-300)
    out["M"] = float(np.max(np.linalg.norm(M - M[0], axis=-1)) / Mref)
    for j in range(C.shape[-1]):
        k = j + 2
        ref = max(abs(C[0, j]), 1e-3 * w0 ** k)
        out[f"C_{k}"] = float(np.max(np.abs(C[:, j] - C[0, j])) / ref)
    out["spectrum"] = float(np.max(np.abs(d["spectrum"] - d["spectrum"][0])))
    return out


def write_diagnostics_csv(traj: Trajectory, path) -> None:
    d = traj.diagnostics
    kmax = d["C"].shape[-1] + 1
    header = ["t", "H"]
    for lab in ("M_1_1", "M_1_0", "M_1_m1"):
        header += [f"{lab}_re", f"{lab}_im"]
    header += [f"C_{k}" for k in range(2, kmax + 1)] + ["spectral_radius"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(traj.times):
            row = [t, d["H"][i]]
            for z in d["M"][i]:
                row += [z.real, z.imag]
            # even traces are real, odd ones imaginary for skew-Hermitian W
            for j, z in enumerate(d["C"][i]):
                row.append(z.real if (j + 2) % 2 == 0 else z.imag)
            row.append(d["spectral_radius"][i])
            w.writerow([format(float(v), ".17g") for v in row])


def save_trajectory(traj: Trajectory, path) -> None:
    """Uncompressed npz container: times, states and every diagnostic array."""
    arrays = {"N": np.array(traj.N), "times": traj.times, "states": traj.states}
    arrays.update({f"diag_{k}": np.asarray(v) for k, v in traj.diagnostics.items()})
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_trajectory(path) -> Trajectory:
    with np.load(path) as z:
        diag = {k[5:]: z[k] for k in z.files if k.startswith("diag_")}
        return Trajectory(int(z["N"]), z["times"], z["states"], diag)
