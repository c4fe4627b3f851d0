"""Seeded synthetic edge streams with power-law popularity.

Destinations are drawn from a static rank-weighted popularity distribution
(weight of the node at rank r proportional to r^(-1/(skew-1))), which plants
a degree distribution with tail exponent ~= ``skew``; sources are uniform.
Timestamps are integers drawn uniformly over the time span and sorted, so
the stream arrives in chronological order.
"""

from __future__ import annotations

import numpy as np


def generate_synthetic(
    nodes: int,
    edges: int,
    skew: float = 2.2,
    time_span: int = 1_000_000,
    seed: int = 0,
    src_skew: float | None = None,
) -> list[tuple[int, int, int]]:
    """Deterministic preferential-attachment-style stream, self-loop free.

    ``src_skew`` optionally rank-weights sources the same way (useful for
    directed graphs whose out-degree distribution should be heavy-tailed);
    by default sources are uniform. With a single node every edge would be a
    self loop, so the stream is empty.
    """
    if nodes < 1 or edges < 1:
        raise ValueError("need at least one node and one edge")
    if skew <= 1.0:
        raise ValueError("skew must exceed 1 (power-law tail exponent)")
    if nodes == 1:
        return []
    rng = np.random.default_rng(seed)

    def weights(exponent: float) -> np.ndarray:
        w = (np.arange(1, nodes + 1, dtype=np.float64)) ** (-1.0 / (exponent - 1.0))
        return w / w.sum()

    dst = rng.choice(nodes, size=edges, p=weights(skew))
    if src_skew is None:
        src = rng.integers(0, nodes, size=edges)
    else:
        src = rng.choice(nodes, size=edges, p=weights(src_skew))
    # resample self loops
    loops = np.flatnonzero(src == dst)
    while len(loops):
        src[loops] = rng.integers(0, nodes, size=len(loops))
        loops = loops[src[loops] == dst[loops]]
    ts = np.sort(rng.integers(0, time_span, size=edges))
    return list(zip(src.tolist(), dst.tolist(), ts.tolist()))
