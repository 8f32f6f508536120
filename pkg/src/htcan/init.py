"""Deterministic parameter initialisers."""

from __future__ import annotations

import math

import numpy as np


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall inside +-2 std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def conv_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual conv default."""
    fan_in = math.prod(shape[1:])
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def make(kind: str, rng: np.random.Generator, shape) -> np.ndarray:
    if kind == "zeros":
        return np.zeros(shape)
    if kind == "ones":
        return np.ones(shape)
    if kind == "trunc_normal":
        return trunc_normal(rng, shape)
    if kind == "conv":
        return conv_uniform(rng, shape)
    raise ValueError(f"unknown initialiser {kind!r}")
