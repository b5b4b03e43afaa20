"""Complex spherical harmonics (orthonormal, Condon-Shortley phase) and
product quadrature grids on the sphere.

Angles follow the physics convention: theta is colatitude, phi longitude.
"""
from __future__ import annotations

import numpy as np
from scipy.special import sph_harm_y

# Normalization of the Poisson bracket relative to the geometric one.
BRACKET_NORM = float(np.sqrt(16 * np.pi))


def sph_harm(l: int, m: int, theta, phi):
    return sph_harm_y(l, m, theta, phi)


def sph_harm_dtheta(l: int, m: int, theta, phi):
    """d/dtheta Y_lm = m cot(theta) Y_lm + sqrt((l-m)(l+m+1)) e^{-i phi} Y_{l,m+1}."""
    out = m / np.tan(theta) * sph_harm_y(l, m, theta, phi)
    if m < l:
        out = out + np.sqrt((l - m) * (l + m + 1)) * np.exp(-1j * phi) * sph_harm_y(l, m + 1, theta, phi)
    return out


def gauss_grid(n_theta: int, n_phi: int):
    """Gauss-Legendre in cos(theta) times uniform longitude.

    Returns (theta[:, None], phi[None, :], weights) broadcastable to (n_theta, n_phi).
    Exact for integrands whose cos(theta)-degree is below 2*n_theta and whose
    longitude frequencies are below n_phi in absolute value.
    """
    x, w = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(x)[:, None]
    phi = (2 * np.pi * np.arange(n_phi) / n_phi)[None, :]
    weights = w[:, None] * (2 * np.pi / n_phi) * np.ones((1, n_phi))
    return theta, phi, weights


def smooth_index(l, m):
    """Position of (l, m) in a smooth expansion that starts at l = 0."""
    return l * l + l + m
