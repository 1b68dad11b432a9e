"""Piecewise cubic Hermite segments on [-h, 0].

A segment stores, at the nodes of a uniform mesh ``t_0 = -h < ... < t_N = 0``,
the value and the slope of a C^1 function. Between nodes the function is the
cubic Hermite interpolant of that data, so node values and node slopes are
reproduced exactly and the slope at ``t = 0`` is a plain array entry.

Components are indexed from 0 throughout the Python API. The hat vector uses
the flat index ``iota = kappa * n + j`` (0-based ``kappa`` over delays, ``j``
over components), the 0-based form of ``(kappa - 1) n + j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError

DEFAULT_N = 64
INTERIOR_SAMPLES = 8

_S_INTERIOR = np.arange(1, INTERIOR_SAMPLES + 1) / (INTERIOR_SAMPLES + 1.0)


@lru_cache(maxsize=64)
def _nodes(h: float, N: int) -> np.ndarray:
    nodes = np.linspace(-h, 0.0, N + 1)
    nodes.setflags(write=False)
    return nodes


def _basis(s):
    """Hermite basis values and their s-derivatives."""
    s2 = s * s
    one_m = 1.0 - s
    h00 = (1.0 + 2.0 * s) * one_m * one_m
    h10 = s * one_m * one_m
    h01 = s2 * (3.0 - 2.0 * s)
    h11 = s2 * (s - 1.0)
    d00 = 6.0 * s * (s - 1.0)  # d/ds of h00; d/ds h01 = -d00
    d10 = 3.0 * s2 - 4.0 * s + 1.0
    d11 = 3.0 * s2 - 2.0 * s
    return h00, h10, h01, h11, d00, d10, d11


_B_INTERIOR = _basis(_S_INTERIOR)


def _hermite(values: np.ndarray, slopes: np.ndarray, h: float, t: np.ndarray):
    """Evaluate Hermite data with leading shape ``L`` at points ``t``.

    Returns arrays of shape ``L + t.shape``.
    """
    N = values.shape[-1] - 1
    nodes = _nodes(h, N)
    dx = h / N
    i = np.searchsorted(nodes, t, side="right") - 1
    i = np.clip(i, 0, N)
    ip = np.minimum(i + 1, N)
    s = (t - nodes[i]) / dx
    _, h10, h01, h11, d00, d10, d11 = _basis(s)
    u0, u1 = values[..., i], values[..., ip]
    m0, m1 = slopes[..., i], slopes[..., ip]
    # h00 = 1 - h01; this form keeps constants exact
    val = u0 + h01 * (u1 - u0) + dx * (h10 * m0 + h11 * m1)
    slope = d00 * (u0 - u1) / dx + d10 * m0 + d11 * m1
    return val, slope


def _check_interval(t: np.ndarray, lo: float, hi: float, what: str) -> np.ndarray:
    slack = 1e-12 * max(1.0, abs(lo), abs(hi))
    bad = (t < lo - slack) | (t > hi + slack) | ~np.isfinite(t)
    if np.any(bad):
        worst = t[bad].flat[0]
        raise DomainError(f"t={worst!r} outside {what} [{lo}, {hi}]")
    return np.clip(t, lo, hi)


def default_J(h: float) -> tuple[float, float]:
    return (-2.0 * h, h)


@dataclass(frozen=True, eq=False)
class _Hermite:
    h: float
    values: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        slopes = np.array(self.slopes, dtype=float)
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError(f"segment length h must be positive, got {self.h!r}")
        if values.shape != slopes.shape:
            raise ValueError("values and slopes must have the same shape")
        if values.shape[-1] < 2:
            raise ValueError("need at least one mesh interval (N >= 1)")
        for name, arr in (("value", values), ("slope", slopes)):
            bad = np.argwhere(~np.isfinite(arr))
            if len(bad):
                raise ValueError(f"non-finite {name} at node index {tuple(bad[0])}")
        values.setflags(write=False)
        slopes.setflags(write=False)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "slopes", slopes)

    @property
    def N(self) -> int:
        return self.values.shape[-1] - 1

    @property
    def dx(self) -> float:
        return self.h / self.N

    @property
    def nodes(self) -> np.ndarray:
        return _nodes(self.h, self.N)

    def eval(self, t):
        """Value and slope of the interpolant at ``t`` in [-h, 0]."""
        t = _check_interval(np.asarray(t, dtype=float), -self.h, 0.0, "[-h, 0]")
        return _hermite(self.values, self.slopes, self.h, t)

    def eval_extension(self, t, J: tuple[float, float] | None = None):
        """Value and slope of the odd extension at ``t`` in ``J``.

        Right of 0 the segment is reflected through ``(0, phi(0))``, left of
        ``-h`` through ``(-h, phi(-h))``; both reflections keep the slope.
        """
        h = self.h
        lo, hi = J if J is not None else default_J(h)
        t = _check_interval(np.asarray(t, dtype=float), lo, hi, "J")
        right = t > 0.0
        left = t < -h
        tr = np.where(right, -t, np.where(left, -t - 2.0 * h, t))
        val, slope = _hermite(self.values, self.slopes, h, tr)
        if np.any(right) or np.any(left):
            shape = self.values.shape[:-1] + (1,) * t.ndim
            anchor0 = self.values[..., -1].reshape(shape)
            anchor_h = self.values[..., 0].reshape(shape)
            val = np.where(right, 2.0 * anchor0 - val, val)
            val = np.where(left, 2.0 * anchor_h - val, val)
        return val, slope

    def _samples(self):
        """Values and slopes at all nodes and the interior sample points."""
        _, h10, h01, h11, d00, d10, d11 = _B_INTERIOR
        dx = self.dx
        u0 = self.values[..., :-1, None]
        u1 = self.values[..., 1:, None]
        m0 = self.slopes[..., :-1, None]
        m1 = self.slopes[..., 1:, None]
        val = u0 + h01 * (u1 - u0) + dx * (h10 * m0 + h11 * m1)
        slope = d00 * (u0 - u1) / dx + d10 * m0 + d11 * m1
        lead = self.values.shape[:-1]
        val = np.concatenate([val.reshape(lead + (-1,)), self.values], axis=-1)
        slope = np.concatenate([slope.reshape(lead + (-1,)), self.slopes], axis=-1)
        return val, slope

    def _same_mesh(self, other: "_Hermite") -> bool:
        return self.h == other.h and self.N == other.N


@dataclass(frozen=True, eq=False)
class ScalarSegment(_Hermite):
    """Element of C^1 = C^1([-h, 0], R)."""

    def __post_init__(self):
        super().__post_init__()
        if self.values.ndim != 1:
            raise ValueError("ScalarSegment data must be one-dimensional")

    def __mul__(self, c: float) -> "ScalarSegment":
        return ScalarSegment(self.h, c * self.values, c * self.slopes)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorSegment(_Hermite):
    """Element of C^1_n; ``values`` and ``slopes`` have shape ``(n, N + 1)``."""

    def __post_init__(self):
        super().__post_init__()
        if self.values.ndim != 2:
            raise ValueError("VectorSegment data must have shape (n, N+1)")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def component(self, j: int) -> ScalarSegment:
        return ScalarSegment(self.h, self.values[j], self.slopes[j])

    @classmethod
    def from_components(cls, comps: Sequence[ScalarSegment]) -> "VectorSegment":
        if not comps:
            raise ValueError("need at least one component")
        first = comps[0]
        for c in comps[1:]:
            if not first._same_mesh(c):
                raise ValueError("components must share h and N")
        return cls(first.h, np.stack([c.values for c in comps]), np.stack([c.slopes for c in comps]))

    @classmethod
    def zeros(cls, h: float, n: int, N: int = DEFAULT_N) -> "VectorSegment":
        z = np.zeros((n, N + 1))
        return cls(h, z, z)

    def __add__(self, other: "VectorSegment") -> "VectorSegment":
        return linear_combine([self, other], [1.0, 1.0])

    def __sub__(self, other: "VectorSegment") -> "VectorSegment":
        return linear_combine([self, other], [1.0, -1.0])

    def __mul__(self, c: float) -> "VectorSegment":
        return VectorSegment(self.h, c * self.values, c * self.slopes)

    __rmul__ = __mul__

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "n": self.n,
            "N": self.N,
            "values": self.values.tolist(),
            "slopes": self.slopes.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VectorSegment":
        seg = cls(d["h"], d["values"], d["slopes"])
        if seg.n != d.get("n", seg.n) or seg.N != d.get("N", seg.N):
            raise ValueError("declared n/N do not match the data")
        return seg


@dataclass(frozen=True)
class SegmentNorms:
    c_norm: float
    c1_norm: float


def make_segment(h: float, N: int, f: Callable, fp: Callable) -> ScalarSegment:
    """Sample ``f`` and ``fp`` at the ``N + 1`` uniform nodes of [-h, 0]."""
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    nodes = _nodes(float(h), int(N))
    u = np.array([f(t) for t in nodes], dtype=float)
    du = np.array([fp(t) for t in nodes], dtype=float)
    for name, arr in (("f", u), ("fp", du)):
        bad = np.flatnonzero(~np.isfinite(arr))
        if len(bad):
            raise ValueError(f"{name} is non-finite at node index {bad[0]}")
    return ScalarSegment(h, u, du)


def make_vector_segment(h: float, N: int, fs: Sequence[Callable], fps: Sequence[Callable]) -> VectorSegment:
    return VectorSegment.from_components([make_segment(h, N, f, fp) for f, fp in zip(fs, fps)])


def constant_segment(h: float, c, N: int = DEFAULT_N) -> VectorSegment:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    vals = np.repeat(c[:, None], N + 1, axis=1)
    return VectorSegment(h, vals, np.zeros_like(vals))


def hat_vector(r, phi: VectorSegment, J: tuple[float, float] | None = None) -> np.ndarray:
    """Delay-argument vector with entries ``E phi_j(r_kappa)`` at ``kappa * n + j``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    vals, _ = phi.eval_extension(r, J)  # (n, k)
    return vals.T.reshape(-1)


def hat_index(kappa: int, j: int, n: int) -> int:
    return kappa * n + j


def odot(phi: VectorSegment, c) -> VectorSegment:
    c = np.asarray(c, dtype=float)
    if c.shape != (phi.n,):
        raise ValueError(f"coefficient vector has shape {c.shape}, expected ({phi.n},)")
    return VectorSegment(phi.h, c[:, None] * phi.values, c[:, None] * phi.slopes)


def embed_component(phi: ScalarSegment, j: int, n: int) -> VectorSegment:
    if not 0 <= j < n:
        raise IndexError(f"component index {j} out of range for n={n}")
    vals = np.zeros((n, phi.N + 1))
    slps = np.zeros((n, phi.N + 1))
    vals[j] = phi.values
    slps[j] = phi.slopes
    return VectorSegment(phi.h, vals, slps)


def norms(phi: _Hermite) -> SegmentNorms:
    """Sup norms of value and slope, sampled at nodes plus 8 points per interval.

    For vector data the pointwise size is the Euclidean norm over components.
    """
    val, slope = phi._samples()
    if val.ndim == 2:
        val = np.sqrt(np.sum(val * val, axis=0))
        slope = np.sqrt(np.sum(slope * slope, axis=0))
    c = float(np.max(np.abs(val)))
    return SegmentNorms(c, c + float(np.max(np.abs(slope))))


def extension_norms(phi: _Hermite, J: tuple[float, float] | None = None) -> SegmentNorms:
    """Sup norms of ``E phi`` over ``J``.

    Sampled at the sample points of ``[-h, 0]`` and their mirror images in
    ``J``, so the sampled ratio to :func:`norms` is bounded by 3 as for the
    exact operator.
    """
    h = phi.h
    lo, hi = J if J is not None else default_J(h)
    base = np.concatenate([phi.nodes[:-1, None] + phi.dx * _S_INTERIOR[None, :], phi.nodes[:-1, None]], axis=1)
    base = np.append(base.ravel(), 0.0)
    right = -base
    left = -base - 2.0 * h
    t = np.concatenate([base, right[(right > 0) & (right <= hi)], left[(left < -h) & (left >= lo)]])
    for end in (lo, hi):
        t = np.append(t, end)
    val, slope = phi.eval_extension(t, (lo, hi))
    if val.ndim == 2:
        val = np.sqrt(np.sum(val * val, axis=0))
        slope = np.sqrt(np.sum(slope * slope, axis=0))
    c = float(np.max(np.abs(val)))
    return SegmentNorms(c, c + float(np.max(np.abs(slope))))


def linear_combine(segments: Sequence[_Hermite], coeffs: Iterable[float]):
    """Nodewise linear combination of segments sharing one mesh."""
    coeffs = [float(c) for c in coeffs]
    if len(coeffs) != len(segments) or not segments:
        raise ValueError("need one coefficient per segment")
    first = segments[0]
    for s in segments[1:]:
        if not first._same_mesh(s) or s.values.shape != first.values.shape:
            raise ValueError("mesh mismatch in linear_combine")
    vals = sum(c * s.values for c, s in zip(coeffs, segments))
    slps = sum(c * s.slopes for c, s in zip(coeffs, segments))
    return type(first)(first.h, vals, slps)


def refine(phi: _Hermite, factor: int):
    """Resample on a mesh ``factor`` times finer.

    Every fine interval lies in one coarse interval, so the interpolant is
    unchanged up to rounding; coarse node data is copied verbatim.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError("refinement factor must be >= 1")
    if factor == 1:
        return phi
    fine = _nodes(phi.h, phi.N * factor)
    val, slope = _hermite(phi.values, phi.slopes, phi.h, fine)
    val = np.array(val)
    slope = np.array(slope)
    val[..., ::factor] = phi.values
    slope[..., ::factor] = phi.slopes
    return type(phi)(phi.h, val, slope)


def lift_to(phi: VectorSegment, N: int) -> VectorSegment:
    """Refine ``phi`` onto an ``N``-interval mesh; ``N`` must be a multiple of ``phi.N``."""
    if phi.N == N:
        return phi
    if N % phi.N:
        raise ValueError(f"cannot lift a {phi.N}-interval segment onto {N} intervals")
    return refine(phi, N // phi.N)


def max_abs_diff(a: _Hermite, b: _Hermite) -> SegmentNorms:
    """C and C^1 norms of ``a - b`` (meshes refined to a common one if needed)."""
    if a.N != b.N:
        N = np.lcm(a.N, b.N)
        a = refine(a, N // a.N)
        b = refine(b, N // b.N)
    return norms(linear_combine([a, b], [1.0, -1.0]))
