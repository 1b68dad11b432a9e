"""Seeded random segments and domain points for property sweeps."""
from __future__ import annotations

import numpy as np

from .model import ModelSpec, StatePoint
from .segments import DEFAULT_N, VectorSegment


def random_segment(rng: np.random.Generator, h: float, n: int, N: int = DEFAULT_N, scale: float = 1.0, modes: int = 4) -> VectorSegment:
    """Smooth random segment, a short trigonometric sum with sup norm at most ``scale``."""
    t = np.linspace(-h, 0.0, N + 1)
    w = np.pi * np.arange(modes + 1) / h
    decay = 1.0 / (1.0 + np.arange(modes + 1)) ** 2
    vals = np.empty((n, N + 1))
    slopes = np.empty((n, N + 1))
    for j in range(n):
        a = rng.uniform(-1, 1, modes + 1) * decay
        b = rng.uniform(-1, 1, modes + 1) * decay
        c = scale / np.sum(np.abs(a) + np.abs(b))
        arg = np.outer(t, w)
        vals[j] = c * (np.cos(arg) @ a + np.sin(arg) @ b)
        slopes[j] = c * ((-np.sin(arg) * w) @ a + (np.cos(arg) * w) @ b)
    return VectorSegment(h, vals, slopes)


def flat_segment(rng: np.random.Generator, h: float, n: int, N: int = DEFAULT_N, scale: float = 1.0) -> VectorSegment:
    """Random segment with zero slope at 0 (an element of the flat space)."""
    seg = random_segment(rng, h, n, N, scale)
    t = np.linspace(-h, 0.0, N + 1)
    e = np.exp(t / h)
    m0 = seg.slopes[:, -1:]
    vals = seg.values - m0 * (t * e)
    slopes = seg.slopes - m0 * ((1.0 + t / h) * e)
    slopes[:, -1] = 0.0
    return VectorSegment(h, vals, slopes)


def default_scale(model: ModelSpec) -> float:
    """Amplitude keeping random points well inside ``W`` and the field region."""
    W = model.delta.W
    half = np.min(np.minimum(W.hi, 1e3) - np.maximum(W.lo, -1e3)) / 2.0
    return float(min(1.0, 0.9 * half / 3.0))


def random_r(model: ModelSpec, rng: np.random.Generator, margin: float = 0.01) -> np.ndarray:
    lo, hi = model.I
    pad = margin * (hi - lo)
    return rng.uniform(lo + pad, hi - pad, model.k)


def random_domain_point(model: ModelSpec, rng: np.random.Generator, N: int = DEFAULT_N, scale: float | None = None, tries: int = 200) -> StatePoint:
    """Random ``(r, phi)`` in the domain, by rejection."""
    scale = default_scale(model) if scale is None else scale
    for _ in range(tries):
        p = StatePoint(random_r(model, rng), random_segment(rng, model.h, model.n, N, scale))
        if model.in_domain(p):
            return p
    raise RuntimeError("could not sample a domain point")
