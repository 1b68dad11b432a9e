"""Algebraic-delay systems built from structured maps.

A :class:`ModelSpec` describes the coupled system

    x'(t) = G(r(t), x_t),    0 = Delta(r(t), x_t)

with ``G(r, phi) = g(hat(r, phi))`` and ``Delta(r, phi) = delta(r, Q(r, phi))``,
where ``hat(r, phi)`` collects the delayed values ``E phi_j(r_kappa)`` and each
``Q(r, .)`` is linear. The class evaluates ``G``, ``Delta`` and their analytic
derivatives and decides membership in the open domain

    U = {(r, phi) : r in I^k, hat(r, phi) in V, Q(r, phi) in W}.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .report import CheckResult
from .segments import (
    DEFAULT_N,
    ScalarSegment,
    VectorSegment,
    embed_component,
    hat_vector,
    make_segment,
)


# --------------------------------------------------------------------------- boxes


@dataclass(frozen=True, eq=False)
class Box:
    """Open axis-aligned box; infinite bounds are allowed."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo >= hi):
            raise ValueError(f"empty box: lo={lo.tolist()} hi={hi.tolist()}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def everything(cls, dim: int) -> "Box":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > self.lo) and np.all(x < self.hi))

    def margin(self, x) -> float:
        """Distance from ``x`` (inside) to the complement: the smallest face gap."""
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.lo), np.min(self.hi - x)))

    def pull_inside(self, x, pad: float = 1e-9) -> np.ndarray:
        """Move ``x`` toward the centre just far enough to lie ``pad`` inside."""
        x = np.asarray(x, dtype=float)
        return np.clip(x, self.lo + pad, self.hi - pad)

    def to_list(self) -> list:
        return [[None if not np.isfinite(a) else float(a), None if not np.isfinite(b) else float(b)] for a, b in zip(self.lo, self.hi)]

    @classmethod
    def from_list(cls, bounds) -> "Box":
        lo = [-np.inf if a is None else float(a) for a, _ in bounds]
        hi = [np.inf if b is None else float(b) for _, b in bounds]
        return cls(lo, hi)


@dataclass(frozen=True, eq=False)
class VDomain:
    """The open set V: all of R^{kn} (no boxes) or a finite union of open boxes."""

    boxes: tuple = ()

    @property
    def is_all(self) -> bool:
        return not self.boxes

    def contains(self, v) -> bool:
        return self.is_all or any(b.contains(v) for b in self.boxes)

    def dist_to_complement(self, v) -> float:
        """Exact for one box; a lower bound (largest per-box margin) for unions."""
        if self.is_all:
            return np.inf
        gaps = [b.margin(v) for b in self.boxes if b.contains(v)]
        return max(gaps) if gaps else 0.0


# --------------------------------------------------------------------------- g


@dataclass(frozen=True, eq=False)
class GSpec:
    """The right-hand side ``g`` on ``V`` with its Jacobian (``n x kn``)."""

    k: int
    n: int
    value: Callable
    jacobian: Callable
    V: VDomain = field(default_factory=VDomain)

    def __call__(self, v) -> np.ndarray:
        return np.asarray(self.value(np.asarray(v, dtype=float)), dtype=float).reshape(self.n)

    def jac(self, v) -> np.ndarray:
        return np.asarray(self.jacobian(np.asarray(v, dtype=float)), dtype=float).reshape(self.n, self.k * self.n)


# --------------------------------------------------------------------------- Q


def _unfold_extension(t: float, h: float):
    """Write ``E phi(t)`` as a combination of point values of ``phi``."""
    if t > 0.0:
        return [(0.0, 2.0), (-t, -1.0)]
    if t < -h:
        return [(-h, 2.0), (-t - 2.0 * h, -1.0)]
    return [(t, 1.0)]


class QSpec:
    """Base class for the linear-in-phi map ``Q : J^k x C_n -> F = R^dim``."""

    dim: int
    n: int
    k: int

    def value(self, r, phi, J=None) -> np.ndarray:
        raise NotImplementedError

    def dr(self, r, phi, J=None) -> np.ndarray:
        """Partial derivative in ``r``, shape ``(dim, k)``."""
        raise NotImplementedError

    def component_value(self, j: int, r, seg: ScalarSegment, J=None) -> np.ndarray:
        """``Q_j(r, seg) = Q(r, seg . e_j)``."""
        return self.value(r, embed_component(seg, j, self.n), J)

    def component_functional(self, j: int, r, h: float):
        """Points ``p`` and weights ``W`` with ``Q_j(r, phi) = W @ phi(p)``, or None."""
        return None

    def opnorm_bound(self, j: int, r, h: float) -> float:
        """Upper bound of the norm of ``Q_j(r, .)`` from ``(C, sup)`` to Euclidean ``R^dim``."""
        pts, W = self.component_functional(j, r, h)
        return float(np.sqrt(np.sum(np.sum(np.abs(W), axis=1) ** 2)))

    def betas(self, j: int, h: float, N: int, r_ref) -> list[ScalarSegment]:
        return auto_betas(self, j, h, N, r_ref)

    def to_dict(self) -> dict:
        raise NotImplementedError


class PointQ(QSpec):
    """Q built from weighted evaluations ``w * E phi_j(t)``."""

    def _terms(self, r):
        """Arrays ``(row, weight, comp, t, rdep)``; ``rdep`` is the r-index a point follows, or -1."""
        raise NotImplementedError

    def value(self, r, phi, J=None):
        row, w, comp, t, _ = self._terms(r)
        vals, _ = phi.eval_extension(t, J)
        return np.bincount(row, weights=w * vals[comp, np.arange(t.size)], minlength=self.dim)

    def dr(self, r, phi, J=None):
        row, w, comp, t, rdep = self._terms(r)
        out = np.zeros((self.dim, self.k))
        moving = rdep >= 0
        if np.any(moving):
            _, slopes = phi.eval_extension(t[moving], J)
            idx = np.arange(t.size)[moving]
            np.add.at(out, (row[moving], rdep[moving]), w[moving] * slopes[comp[moving], np.arange(idx.size)])
        return out

    def component_value(self, j, r, seg, J=None):
        row, w, comp, t, _ = self._terms(r)
        sel = comp == j
        out = np.zeros(self.dim)
        if np.any(sel):
            vals, _ = seg.eval_extension(t[sel], J)
            out += np.bincount(row[sel], weights=w[sel] * vals, minlength=self.dim)
        return out

    def component_functional(self, j, r, h):
        row, w, comp, t, _ = self._terms(r)
        acc: dict[float, np.ndarray] = {}
        for m, wt, c, tt in zip(row, w, comp, t):
            if c != j:
                continue
            for p, coef in _unfold_extension(float(tt), h):
                col = acc.setdefault(p, np.zeros(self.dim))
                col[m] += wt * coef
        if not acc:
            return np.zeros(0), np.zeros((self.dim, 0))
        pts = np.array(sorted(acc))
        return pts, np.stack([acc[p] for p in pts], axis=1)


class ConstantL(PointQ):
    """``Q(r, phi) = L phi`` with ``L`` a list of point-evaluation functionals.

    ``functionals[m]`` is a list of ``(weight, component, t)`` triples
    (0-based component) whose weighted sum is the ``m``-th entry of ``L phi``.
    """

    def __init__(self, functionals: Sequence[Sequence[tuple]], n: int, k: int):
        self.functionals = [[(float(w), int(c), float(t)) for w, c, t in f] for f in functionals]
        self.dim = len(self.functionals)
        self.n, self.k = n, k
        rows, ws, cs, ts = [], [], [], []
        for m, f in enumerate(self.functionals):
            for w, c, t in f:
                if not 0 <= c < n:
                    raise ValueError(f"functional {m} refers to component {c} (n={n})")
                rows.append(m)
                ws.append(w)
                cs.append(c)
                ts.append(t)
        self._cached = (
            np.array(rows, dtype=int),
            np.array(ws, dtype=float),
            np.array(cs, dtype=int),
            np.array(ts, dtype=float),
            np.full(len(rows), -1, dtype=int),
        )

    def _terms(self, r):
        return self._cached

    def to_dict(self):
        return {
            "variant": "constant_l",
            "functionals": [[{"weight": w, "component": c + 1, "t": t} for w, c, t in f] for f in self.functionals],
        }


class CoordSelect(PointQ):
    """``Q(r, phi)_m = E phi_{nu(m)}(r_{kappa(m)})`` with injective ``nu`` (0-based)."""

    def __init__(self, nu: Sequence[int], kappa: Sequence[int], n: int, k: int):
        self.nu = [int(x) for x in nu]
        self.kappa = [int(x) for x in kappa]
        if len(self.nu) != len(self.kappa):
            raise ValueError("nu and kappa must have the same length")
        if len(set(self.nu)) != len(self.nu):
            raise ValueError("nu must be injective")
        if any(not 0 <= x < n for x in self.nu) or any(not 0 <= x < k for x in self.kappa):
            raise ValueError("nu/kappa index out of range")
        self.dim = len(self.nu)
        self.n, self.k = n, k
        self._row = np.arange(self.dim)
        self._w = np.ones(self.dim)
        self._comp = np.array(self.nu, dtype=int)
        self._rdep = np.array(self.kappa, dtype=int)

    def _terms(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return self._row, self._w, self._comp, r[self._rdep], self._rdep

    def to_dict(self):
        return {"variant": "coord_select", "nu": [x + 1 for x in self.nu], "kappa": [x + 1 for x in self.kappa]}


class UserQ(QSpec):
    """Opaque ``Q`` with user-supplied (Hq) data.

    ``betas[j]`` lists the basis candidates for component ``j`` as ScalarSegments
    or ``(f, fp)`` pairs (an empty list declares ``Q_j = 0``); ``opnorm[j]``
    bounds the norm of ``Q_j(r, .)`` uniformly in ``r``. ``fn`` must be linear
    in ``phi``; ``dr_fn`` defaults to central differences.
    """

    def __init__(self, fn, dim: int, n: int, k: int, betas, opnorm, dr_fn=None):
        self.fn, self.dr_fn = fn, dr_fn
        self.dim, self.n, self.k = dim, n, k
        self._betas = betas
        self._opnorm = opnorm

    def value(self, r, phi, J=None):
        return np.asarray(self.fn(np.atleast_1d(np.asarray(r, dtype=float)), phi), dtype=float).reshape(self.dim)

    def dr(self, r, phi, J=None):
        if self.dr_fn is not None:
            return np.asarray(self.dr_fn(r, phi), dtype=float).reshape(self.dim, self.k)
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.zeros((self.dim, self.k))
        for kap in range(self.k):
            e = np.zeros(self.k)
            e[kap] = 1e-6 * (1.0 + abs(r[kap]))
            out[:, kap] = (self.value(r + e, phi, J) - self.value(r - e, phi, J)) / (2 * e[kap])
        return out

    def opnorm_bound(self, j, r, h):
        return float(self._opnorm[j])

    def betas(self, j, h, N, r_ref):
        out = []
        for b in self._betas[j]:
            out.append(b if isinstance(b, ScalarSegment) else make_segment(h, N, b[0], b[1]))
        return out

    def to_dict(self):
        return {"variant": "user"}


def _monomial(h: float, N: int, p: int) -> ScalarSegment:
    return make_segment(
        h,
        N,
        lambda t: (t / h) ** p,
        lambda t: 0.0 if p == 0 else p * (t / h) ** (p - 1) / h,
    )


def auto_betas(q: QSpec, j: int, h: float, N: int, r_ref) -> list[ScalarSegment]:
    """Greedy choice of monomials ``(t/h)^p`` whose images span the range of ``Q_j(r_ref, .)``."""
    pts, W = q.component_functional(j, r_ref, h)
    if W.size == 0:
        return []
    sv = np.linalg.svd(W, compute_uv=False)
    d = int(np.sum(sv > 1e-10 * max(1.0, sv[0])))
    chosen, images = [], []
    p = 0
    while len(chosen) < d and p <= pts.size + 8:
        img = W @ (pts / h) ** p
        trial = np.array(images + [img]).T
        if np.linalg.svd(trial, compute_uv=False)[-1] > 1e-8:
            chosen.append(_monomial(h, N, p))
            images.append(img)
        p += 1
    return chosen


# --------------------------------------------------------------------------- delta


@dataclass(frozen=True, eq=False)
class OffsetDelta:
    """``delta(r, w) = d(w) + r``; ``dd`` is the ``k x dim F`` Jacobian of ``d``."""

    k: int
    d: Callable
    dd: Callable
    W: Box

    def value(self, r, w):
        return np.asarray(self.d(w), dtype=float).reshape(self.k) + np.asarray(r, dtype=float)

    def D1(self, r, w):
        return np.eye(self.k)

    def D2(self, r, w):
        return np.asarray(self.dd(w), dtype=float).reshape(self.k, self.W.dim)


@dataclass(frozen=True, eq=False)
class GeneralDelta:
    """General ``delta(r, w)`` with both partial Jacobians."""

    k: int
    fn: Callable
    d1: Callable
    d2: Callable
    W: Box

    def value(self, r, w):
        return np.asarray(self.fn(r, w), dtype=float).reshape(self.k)

    def D1(self, r, w):
        return np.asarray(self.d1(r, w), dtype=float).reshape(self.k, self.k)

    def D2(self, r, w):
        return np.asarray(self.d2(r, w), dtype=float).reshape(self.k, self.W.dim)


# --------------------------------------------------------------------------- model


@dataclass(frozen=True, eq=False)
class StatePoint:
    """A pair ``(r, phi)`` in ``R^k x C^1_n``."""

    r: np.ndarray
    phi: VectorSegment

    def __post_init__(self):
        object.__setattr__(self, "r", np.atleast_1d(np.asarray(self.r, dtype=float)).copy())

    def to_dict(self) -> dict:
        return {"r": self.r.tolist(), "phi": self.phi.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "StatePoint":
        return cls(np.asarray(d["r"], dtype=float), VectorSegment.from_dict(d["phi"]))


class DomainCheck:
    """Truthy result of a domain test; ``reason`` names the first failed condition."""

    __slots__ = ("ok", "reason")

    def __init__(self, ok: bool, reason: str = ""):
        self.ok, self.reason = ok, reason

    def __bool__(self):
        return self.ok

    def __repr__(self):
        return f"DomainCheck({self.ok}, {self.reason!r})"


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: str
    h: float
    n: int
    k: int
    g: GSpec
    q: QSpec
    delta: OffsetDelta | GeneralDelta
    I: tuple = None
    J: tuple = None

    def __post_init__(self):
        h = float(self.h)
        if not h > 0:
            raise ValueError("h must be positive")
        I = tuple(map(float, self.I)) if self.I is not None else (-9.0 * h / 8.0, h / 8.0)
        J = tuple(map(float, self.J)) if self.J is not None else (-2.0 * h, h)
        if not (I[0] < -h and I[1] > 0.0):
            raise ValueError(f"I={I} must be an open interval containing [-h, 0]")
        if not (J[0] <= I[0] and I[1] <= J[1]):
            raise ValueError(f"closure of I={I} must lie in J={J}")
        if not (J[0] >= -2.0 * h - 1e-15 * h and J[1] <= h + 1e-15 * h):
            raise ValueError(f"J={J} must lie in [-2h, h]")
        if self.g.k != self.k or self.g.n != self.n:
            raise ValueError("g dimensions do not match (k, n)")
        if self.q.n != self.n or self.q.k != self.k:
            raise ValueError("Q dimensions do not match (k, n)")
        if self.delta.W.dim != self.q.dim or self.delta.k != self.k:
            raise ValueError("W must live in F = R^{dim Q} and delta must map to R^k")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "J", J)

    # -- structure --------------------------------------------------------

    @property
    def kn(self) -> int:
        return self.k * self.n

    @property
    def delta_min(self) -> float:
        return self.h / 20.0

    @property
    def explicit_delay(self) -> bool:
        """True for ``Q = L`` constant and ``delta(r, w) = d(w) + r``."""
        return isinstance(self.q, ConstantL) and isinstance(self.delta, OffsetDelta)

    # -- evaluation -------------------------------------------------------

    def hat(self, r, phi) -> np.ndarray:
        return hat_vector(r, phi, self.J)

    def Q(self, r, phi) -> np.ndarray:
        return self.q.value(np.atleast_1d(r), phi, self.J)

    def in_domain(self, p: StatePoint) -> DomainCheck:
        r = p.r
        if r.shape != (self.k,) or p.phi.n != self.n:
            raise ValueError(f"point has r of shape {r.shape} and n={p.phi.n}; model needs ({self.k},), n={self.n}")
        if not np.all((r > self.I[0]) & (r < self.I[1])):
            return DomainCheck(False, "r not in I^k")
        if p.phi.h != self.h:
            return DomainCheck(False, "segment length differs from h")
        if not self.g.V.contains(self.hat(r, p.phi)):
            return DomainCheck(False, "hat(r,phi) not in V")
        if not self.delta.W.contains(self.Q(r, p.phi)):
            return DomainCheck(False, "Q(r,phi) not in W")
        return DomainCheck(True)

    def _require(self, p: StatePoint) -> None:
        chk = self.in_domain(p)
        if not chk:
            raise DomainError(f"point outside U: {chk.reason}")

    def G(self, p: StatePoint, check: bool = True) -> np.ndarray:
        if check:
            self._require(p)
        return self.g(self.hat(p.r, p.phi))

    def Delta(self, p: StatePoint, check: bool = True) -> np.ndarray:
        if check:
            self._require(p)
        return self.delta.value(p.r, self.Q(p.r, p.phi))

    def DG(self, p: StatePoint, s, psi, check: bool = True) -> np.ndarray:
        """``DG(r, phi)(s, psi)``; uses only values of ``psi``, so it also serves continuous ``psi``."""
        if check:
            self._require(p)
        s = np.atleast_1d(np.asarray(s, dtype=float))
        _, slopes = p.phi.eval_extension(p.r, self.J)  # (n, k): (E phi_j)'(r_kappa)
        direction = self.hat(p.r, psi) + (slopes * s[None, :]).T.reshape(-1)
        return self.g.jac(self.hat(p.r, p.phi)) @ direction

    def D2Delta(self, p: StatePoint, psi, check: bool = True) -> np.ndarray:
        if check:
            self._require(p)
        w = self.Q(p.r, p.phi)
        return self.delta.D2(p.r, w) @ self.Q(p.r, psi)

    def D1Delta(self, p: StatePoint, check: bool = True) -> np.ndarray:
        if check:
            self._require(p)
        w = self.Q(p.r, p.phi)
        return self.delta.D1(p.r, w) + self.delta.D2(p.r, w) @ self.q.dr(p.r, p.phi, self.J)

    # -- (Hq) -------------------------------------------------------------

    def r_grid(self, size: int) -> np.ndarray:
        axis = np.linspace(self.J[0], self.J[1], size)
        return np.array(list(itertools.product(axis, repeat=self.k)))

    def betas(self, j: int, N: int = DEFAULT_N) -> list[ScalarSegment]:
        r_ref = np.full(self.k, -self.h / 2.0)
        return self.q.betas(j, self.h, N, r_ref)


def verify_hq(model: ModelSpec, r_grid_size: int = 9, N: int = DEFAULT_N, floor: float = 1e-8) -> CheckResult:
    """Check (Hq) for every component on a ``r_grid_size^k`` grid over ``J^k``.

    For each component the candidate images ``Q_j(r, beta_m)`` must have
    smallest singular value ``>= floor`` and span the same subspace at every
    grid point; where ``Q_j(r, .)`` is given by point functionals, its full
    range is also compared with that span.
    """
    grid = model.r_grid(r_grid_size)
    worst_sv, worst_at, failures = np.inf, None, []
    dims = {}
    for j in range(model.n):
        betas = model.betas(j, N)
        dims[j] = len(betas)
        ref_proj = None
        for r in grid:
            fn = model.q.component_functional(j, r, model.h)
            if fn is not None:
                _, W = fn
                sv_full = np.linalg.svd(W, compute_uv=False) if W.size else np.zeros(0)
                rank = int(np.sum(sv_full > 1e-10 * max(1.0, sv_full[0] if sv_full.size else 1.0)))
                if rank != len(betas):
                    failures.append({"j": j, "r": r.tolist(), "error": f"range dimension {rank} != {len(betas)}"})
            if not betas:
                continue
            M = np.stack([model.q.component_value(j, r, b, model.J) for b in betas], axis=1)
            sv = np.linalg.svd(M, compute_uv=False)
            smin = float(sv[-1]) if sv.size == len(betas) else 0.0
            if smin < worst_sv:
                worst_sv, worst_at = smin, {"j": j, "r": r.tolist()}
            if smin < floor:
                failures.append({"j": j, "r": r.tolist(), "error": f"singular value {smin:.3e}"})
                continue
            U, _, _ = np.linalg.svd(M, full_matrices=False)
            proj = U @ U.T
            if ref_proj is None:
                ref_proj = proj
            elif np.max(np.abs(proj - ref_proj)) > 1e-8:
                failures.append({"j": j, "r": r.tolist(), "error": "range of Q_j(r, .) moves with r"})
            if fn is not None and fn[1].size:
                # the full range must sit inside the span of the beta images
                resid = fn[1] - proj @ fn[1]
                if np.max(np.abs(resid)) > 1e-8 * max(1.0, np.max(np.abs(fn[1]))):
                    failures.append({"j": j, "r": r.tolist(), "error": "beta images do not span the range"})
    if worst_sv == np.inf:
        worst_sv = float("inf")
    return CheckResult(
        name="Hq",
        passed=not failures,
        worst=worst_sv,
        samples=len(grid) * model.n,
        tolerance=floor,
        sense="min",
        where=failures[0] if failures else worst_at,
        detail={"range_dims": dims, "failures": failures[:10], "grid_size": r_grid_size},
    )
