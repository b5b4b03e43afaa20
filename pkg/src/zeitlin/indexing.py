"""Canonical (l, m) ordering shared by all modules.

Modes with 1 <= l <= N-1 and |m| <= l are laid out as l=1 (m=-1,0,1), l=2, ...
so the flat position of (l, m) is l*l + l + m - 1 and a level-N field has
N*N - 1 coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True, order=True)
class HarmonicIndex:
    l: int
    m: int

    def __post_init__(self):
        if self.l < 0 or abs(self.m) > self.l:
            raise ValueError(f"invalid harmonic index ({self.l}, {self.m})")

    @property
    def flat(self) -> int:
        return flat_index(self.l, self.m)


def flat_index(l, m):
    return l * l + l + m - 1


def dim(N: int) -> int:
    return N * N - 1


@lru_cache(maxsize=None)
def _lm(N: int):
    ls = np.concatenate([np.full(2 * l + 1, l) for l in range(1, N)]) if N > 1 else np.zeros(0, int)
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(1, N)]) if N > 1 else np.zeros(0, int)
    ls.setflags(write=False)
    ms.setflags(write=False)
    return ls, ms


def lm_arrays(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays (l, m) over the canonical ordering for level N."""
    return _lm(N)


def eigenvalues(N: int) -> np.ndarray:
    """l(l+1) for each canonical mode, i.e. the spectrum of -Laplacian."""
    ls, _ = _lm(N)
    return (ls * (ls + 1)).astype(float)
