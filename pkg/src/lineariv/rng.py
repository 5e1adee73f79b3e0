"""Pinned random number generation.

All randomness in the package flows through counter-based Philox generators
keyed by numpy SeedSequence entropy, which is stable across platforms and
numpy versions.  Normal variates are produced by the inverse-CDF transform of
uniforms (not the ziggurat), so a (seed, index) pair identifies a bit-exact
stream everywhere.
"""

from __future__ import annotations

import numpy as np

from .glm import normal_quantile

__all__ = ["make_generator", "draw_uniform", "draw_normal", "draw_bernoulli"]


def make_generator(seed_key) -> np.random.Generator:
    """Generator keyed by an int or a sequence of ints (e.g. [seed, rep])."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed_key)))


def draw_uniform(gen: np.random.Generator, n: int) -> np.ndarray:
    return gen.random(n)


def draw_normal(gen: np.random.Generator, n: int) -> np.ndarray:
    """Standard normals via inverse CDF; u=0 is nudged to the smallest double."""
    u = gen.random(n)
    u = np.where(u == 0.0, 5e-324, u)
    return normal_quantile(u)


def draw_bernoulli(gen: np.random.Generator, p) -> np.ndarray:
    """One Bernoulli draw per entry of p (uniform-threshold convention)."""
    p = np.asarray(p, dtype=float)
    return (gen.random(p.shape[0]) < p).astype(float)
