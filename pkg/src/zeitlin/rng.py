"""Counter-based normal streams.

Sample i of stream s under seed k is drawn from a Philox generator keyed by
(k, s) whose counter starts at block i // BLOCK, so any prefix of an
ensemble is reproducible independently of the requested size and of how the
work is split.
"""
from __future__ import annotations

import numpy as np

BLOCK = 4096

STREAMS = {
    "mu": 0,
    "wick": 1,
    "circulation": 2,
    "torus": 3,
    "remainder": 4,
    "simulate": 5,
}


def _generator(seed: int, stream: int, block: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    counter = np.array([0, 0, 0, block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def stream_id(name_or_id) -> int:
    return STREAMS[name_or_id] if isinstance(name_or_id, str) else int(name_or_id)


def standard_normal(seed: int, stream, count: int, width: int, start: int = 0) -> np.ndarray:
    """Rows start..start+count-1 of the (infinite) normal matrix of the stream."""
    sid = stream_id(stream)
    out = np.empty((count, width))
    row = start
    end = start + count
    while row < end:
        block = row // BLOCK
        lo = row - block * BLOCK
        hi = min(BLOCK, end - block * BLOCK)
        draws = _generator(seed, sid, block).standard_normal((hi, width))
        out[row - start: row - start + hi - lo] = draws[lo:hi]
        row = block * BLOCK + hi
    return out
