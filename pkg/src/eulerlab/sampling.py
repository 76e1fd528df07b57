"""Deterministic low-discrepancy sampling."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import qmc

DEFAULT_SEED = 0x5EED


def halton(dimension: int, n: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """First ``n`` points of a scrambled Halton sequence in ``[0, 1)^dimension``.

    For a fixed seed the first ``n`` points are a prefix of the first ``m > n``
    points, which keeps sample sets nested across sizes.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    engine = qmc.Halton(d=dimension, scramble=True, seed=np.random.default_rng(seed))
    return engine.random(n)


def box_samples(lower, upper, n: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    lower = np.atleast_1d(np.asarray(lower, float))
    upper = np.atleast_1d(np.asarray(upper, float))
    if lower.shape != upper.shape or np.any(upper <= lower):
        raise ValueError(f"degenerate box {lower} .. {upper}")
    return lower + (upper - lower) * halton(lower.size, n, seed)


def ball_volume(dimension: int, radius: float = 1.0) -> float:
    return math.pi ** (dimension / 2) / math.gamma(dimension / 2 + 1) * radius**dimension


def ball_samples(dimension: int, radius: float, n: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """``n`` points of B_radius(0): Halton points in the bounding cube, rejection filtered."""
    if n < 1:
        raise ValueError("need at least one point")
    engine = qmc.Halton(d=dimension, scramble=True, seed=np.random.default_rng(seed))
    accepted = []
    have = 0
    # acceptance rate of the cube is vol(B)/2^d; draw a little more than needed
    rate = ball_volume(dimension) / 2**dimension
    while have < n:
        chunk = int(math.ceil((n - have) / rate * 1.1)) + 16
        pts = radius * (2.0 * engine.random(chunk) - 1.0)
        keep = pts[np.linalg.norm(pts, axis=1) <= radius]
        accepted.append(keep)
        have += keep.shape[0]
    return np.concatenate(accepted)[:n]
