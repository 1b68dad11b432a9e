"""Complement fields: small unit-slope segments in the kernels of ``Q_j``.

For every component ``j`` the field ``chi_g`` assigns to ``(r, v)`` a segment
``chi`` with

    Q_j(r, chi) = 0,    chi'(0) = 1,    |chi|_C <= h_g(v),

and with v-partials bounded by ``h_g(v)`` as well. It is assembled in two
stages. A single-level map ``chi_single`` projects a seed of slope one at 0
onto the kernel along a fixed zero-slope basis (:class:`ChiBasis`). Then an
exhaustion of ``V`` by nested boxes and smoothstep bumps glues single-level
maps with shrinking size bounds (:class:`ChiField`).

Every field value is a linear combination of a few fixed segments (the seeds
of each level and the basis ``gamma_m``), so the field stores coefficient
vectors and materializes segments only on request.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, DomainError
from .model import Box, GSpec, ModelSpec, QSpec, VDomain
from .segments import DEFAULT_N, ScalarSegment, VectorSegment, norms, refine

SV_FLOOR = 1e-8
MAX_SHRINK = 20
SEED_FACTOR = 0.9
H_SAFETY = 0.5
MAX_FIELD_NODES = 4_000_000


# --------------------------------------------------------------------------- h_g


def h_g_eval(g: GSpec, v) -> float:
    """Size bound ``min(1, dist(v, V^c)) / (6kn(1 + max|dg| + max|g|))``."""
    v = np.asarray(v, dtype=float)
    if not g.V.contains(v):
        raise DomainError("v is not in V")
    dist = g.V.dist_to_complement(v)
    size = 1.0 + np.max(np.abs(g.jac(v))) + np.max(np.abs(g(v)))
    return float(min(1.0, dist) / (6.0 * g.k * g.n * size))


# --------------------------------------------------------------------------- seeds


def seed_data(a: float, nodes: np.ndarray):
    """Node values and slopes of ``t exp(t/a)``: slope exactly 1 at 0, sup norm ``a/e``."""
    e = np.exp(nodes / a)
    return nodes * e, (1.0 + nodes / a) * e


def seed_segment(a: float, h: float, N: int) -> ScalarSegment:
    vals, slopes = seed_data(a, np.linspace(-h, 0.0, N + 1))
    slopes[-1] = 1.0
    return ScalarSegment(h, vals, slopes)


def seed_mesh(a: float, bound: float, h: float, N_base: int) -> int:
    """Smallest tried multiple of ``N_base`` on which the seed's sampled C-norm is below ``bound``."""
    m = max(1, int(np.ceil(h / (4.0 * a * N_base))))
    while True:
        N = m * N_base
        if N > MAX_FIELD_NODES:
            raise ConstructionError(f"seed of scale {a:.3e} needs more than {MAX_FIELD_NODES} mesh intervals")
        if norms(seed_segment(a, h, N)).c_norm < bound:
            return N
        m = int(np.ceil(1.5 * m))


# --------------------------------------------------------------------------- basis


@dataclass(frozen=True, eq=False)
class ChiBasis:
    """Zero-slope basis ``gamma_m`` whose ``Q_j``-images span the range ``F_q``.

    ``tau`` has orthonormal rows spanning ``F_q``, so ``tau @ Q_j(r, .)`` takes
    values in ``R^{d_q}``. ``c_tau`` bounds ``|M(r)^{-1}|`` and ``c_q`` bounds
    ``|tau Q_j(r, .)|`` from the sup norm, both uniformly on the grid; ``c_gamma``
    bounds ``|sum c_m gamma_m|_C / |c|``.
    """

    j: int
    h: float
    J: tuple
    q: QSpec = field(repr=False)
    gammas: tuple = ()
    tau: np.ndarray = None
    c_tau: float = 0.0
    c_q: float = 0.0
    c_gamma: float = 0.0
    a0: float = 0.0
    min_sv: float = np.inf
    r_grid: np.ndarray = None

    @property
    def d_q(self) -> int:
        return len(self.gammas)

    @property
    def seed_divisor(self) -> float:
        return 1.0 + self.c_tau * self.c_q * self.c_gamma

    def image(self, r, seg: ScalarSegment) -> np.ndarray:
        """``tau Q_j(r, seg)`` in ``R^{d_q}``."""
        return self.tau @ self.q.component_value(self.j, r, seg, self.J)

    def M(self, r, gammas=None) -> np.ndarray:
        gammas = self.gammas if gammas is None else gammas
        if not gammas:
            return np.zeros((0, 0))
        return np.stack([self.image(r, g) for g in gammas], axis=1)

    def to_dict(self) -> dict:
        return {
            "j": self.j + 1,
            "d_q": self.d_q,
            "c_tau": self.c_tau,
            "c_q": self.c_q,
            "c_gamma": self.c_gamma,
            "eta_scale": self.a0,
            "min_singular_value": self.min_sv if self.d_q else None,
            "r_grid_points": 0 if self.r_grid is None else len(self.r_grid),
        }


def _range_basis(q: QSpec, j: int, betas, h: float, J, r_ref) -> np.ndarray:
    """Orthonormal basis (columns) of ``F_q``."""
    fn = q.component_functional(j, r_ref, h)
    if fn is not None:
        W = fn[1]
    else:
        W = np.stack([q.component_value(j, r_ref, b, J) for b in betas], axis=1)
    U, s, _ = np.linalg.svd(W, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * max(1.0, s[0] if s.size else 1.0)))
    return U[:, :rank]


def _sup_opnorm(basis_tau: np.ndarray, q: QSpec, j: int, r, h: float) -> float:
    fn = q.component_functional(j, r, h)
    if fn is None:
        return q.opnorm_bound(j, r, h)
    TW = basis_tau @ fn[1]
    return float(np.sqrt(np.sum(np.sum(np.abs(TW), axis=1) ** 2)))


def build_chi_basis(model: ModelSpec, j: int, N: int = DEFAULT_N, r_grid_size: int = 9) -> ChiBasis:
    """Zero-slope basis for component ``j``, verified on a grid over ``J^k``.

    Candidates ``beta_m`` are made slope-free at 0 by subtracting
    ``beta_m'(0) t exp(t/a0)``; if ``M(r)`` is nearly singular somewhere on
    the grid, ``a0`` is halved and the check repeated.
    """
    h, J, q = model.h, model.J, model.q
    grid = model.r_grid(r_grid_size)
    betas = model.betas(j, N)
    if not betas:
        return ChiBasis(j=j, h=h, J=J, q=q, gammas=(), tau=np.zeros((0, q.dim)), r_grid=grid)
    r_ref = np.full(model.k, -h / 2.0)
    U = _range_basis(q, j, betas, h, J, r_ref)
    if U.shape[1] != len(betas):
        raise ConstructionError(f"component {j + 1}: {len(betas)} basis candidates for a {U.shape[1]}-dimensional range")
    tau = U.T
    a0 = h / 8.0
    last_sv = 0.0
    for _ in range(MAX_SHRINK + 1):
        eta = seed_segment(a0, h, N)
        gammas = tuple(
            ScalarSegment(h, b.values - b.slopes[-1] * eta.values, b.slopes - b.slopes[-1] * eta.slopes)
            for b in betas
        )
        probe = ChiBasis(j=j, h=h, J=J, q=q, gammas=gammas, tau=tau)
        svs, inv_norms = [], []
        for r in grid:
            s = np.linalg.svd(probe.M(r), compute_uv=False)
            svs.append(s[-1])
            inv_norms.append(1.0 / s[-1] if s[-1] > 0 else np.inf)
        last_sv = float(min(svs))
        if last_sv >= SV_FLOOR:
            c_q = max(_sup_opnorm(tau, q, j, r, h) for r in grid)
            gnorms = [norms(g).c_norm for g in gammas]
            return ChiBasis(
                j=j,
                h=h,
                J=J,
                q=q,
                gammas=gammas,
                tau=tau,
                c_tau=float(max(inv_norms)),
                c_q=float(c_q),
                c_gamma=float(np.sqrt(np.sum(np.square(gnorms)))),
                a0=a0,
                min_sv=last_sv,
                r_grid=grid,
            )
        a0 *= 0.5
    raise ConstructionError(f"component {j + 1}: basis stays degenerate (smallest singular value {last_sv:.3e})")


def _lift_scalar(seg: ScalarSegment, N: int) -> ScalarSegment:
    if seg.N == N:
        return seg
    if N % seg.N:
        raise ValueError(f"cannot refine {seg.N} intervals onto {N}")
    return refine(seg, N // seg.N)


def chi_single(basis: ChiBasis, eps: float, r, N: int | None = None) -> ScalarSegment:
    """Kernel element ``chi(r) = seed - sum c_m(r) gamma_m`` with slope 1 at 0 and ``|chi|_C < eps``.

    The seed is ``t exp(t/a)`` with ``a = 0.9 eps / (1 + c_tau c_q c_gamma)``;
    ``N`` fixes the mesh, otherwise the coarsest adequate refinement of the
    basis mesh is used.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    lo, hi = basis.J
    if np.any(r < lo) or np.any(r > hi):
        raise DomainError(f"r={r.tolist()} outside J^k")
    a = SEED_FACTOR * eps / basis.seed_divisor
    if N is None:
        N_base = basis.gammas[0].N if basis.gammas else DEFAULT_N
        N = seed_mesh(a, eps / basis.seed_divisor, basis.h, N_base)
    seed = seed_segment(a, basis.h, N)
    if basis.d_q == 0:
        return seed
    gammas = [_lift_scalar(g, N) for g in basis.gammas]
    c = np.linalg.solve(basis.M(r, gammas), basis.image(r, seed))
    vals = seed.values - sum(cm * g.values for cm, g in zip(c, gammas))
    slopes = seed.slopes - sum(cm * g.slopes for cm, g in zip(c, gammas))
    return ScalarSegment(basis.h, vals, slopes)


# --------------------------------------------------------------------------- exhaustion


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s)


@dataclass(frozen=True, eq=False)
class Bump:
    """C^1 product of smoothstep ramps: 1 on the closed inner box, 0 off the open outer box."""

    inner: Box
    outer: Box

    def __call__(self, v) -> tuple[float, np.ndarray]:
        """Value and gradient at ``v``."""
        v = np.asarray(v, dtype=float)
        lo_o, lo_i, hi_i, hi_o = self.outer.lo, self.inner.lo, self.inner.hi, self.outer.hi
        up, dup = _smoothstep((v - lo_o) / (lo_i - lo_o))
        down, ddown = _smoothstep((hi_o - v) / (hi_o - hi_i))
        f = up * down
        df = dup / (lo_i - lo_o) * down - up * ddown / (hi_o - hi_i)
        val = float(np.prod(f))
        grad = np.empty_like(f)
        for i in range(f.size):
            grad[i] = df[i] * np.prod(np.delete(f, i))
        return val, grad

    def slope_bound(self) -> np.ndarray:
        gaps = np.minimum(self.inner.lo - self.outer.lo, self.outer.hi - self.inner.hi)
        return 1.5 / gaps


class Exhaustion:
    """Boxes ``set(q) = {v in V : face margin > 1/(q+3), |v|_inf < q+3}``.

    Level ``l`` uses ``V_l1 = set(3l-2)``, ``V_l2 = set(3l-1)``, ``V_l = set(3l)``,
    shifted by ``offset`` chain steps when the first sets would be empty.
    """

    def __init__(self, V: VDomain, dim: int):
        if len(V.boxes) > 1:
            raise ValueError("the exhaustion supports V = R^d or a single box")
        self.box = V.boxes[0] if V.boxes else Box.everything(dim)
        self.dim = dim
        self.offset = 0
        while self._bounds(1)[0] is None:
            self.offset += 1
            if self.offset > 10_000:
                raise ValueError("V is too thin for the exhaustion")

    def _bounds(self, q: int):
        q = q + self.offset
        m = 1.0 / (q + 3.0)
        lo = np.maximum(self.box.lo + m, -(q + 3.0))
        hi = np.minimum(self.box.hi - m, q + 3.0)
        if np.any(lo >= hi):
            return None, None
        return lo, hi

    def set(self, q: int) -> Box:
        lo, hi = self._bounds(q)
        if lo is None:
            raise ValueError(f"chain set {q} is empty")
        return Box(lo, hi)

    def level_sets(self, level: int) -> tuple[Box, Box, Box]:
        return self.set(3 * level - 2), self.set(3 * level - 1), self.set(3 * level)


def _stratified_box(box: Box, count: int, rng: np.random.Generator) -> np.ndarray:
    """Latin-hypercube points in the closed box plus all corners."""
    d = box.dim
    u = (np.argsort(rng.random((count, d)), axis=0) + rng.random((count, d))) / count
    pts = box.lo + u * (box.hi - box.lo)
    corners = np.array(list(itertools.product(*zip(box.lo, box.hi))))
    return np.vstack([pts, corners])


def sampled_min_h_g(g: GSpec, box: Box, count: int, seed: int = 0) -> float:
    """Sampled minimum of ``h_g`` over a closed box that lies inside ``V``."""
    rng = np.random.default_rng(seed)
    best = np.inf
    for v in _stratified_box(box, count, rng):
        dist = g.V.dist_to_complement(v)
        size = 1.0 + np.max(np.abs(g.jac(v))) + np.max(np.abs(g(v)))
        best = min(best, min(1.0, dist) / (6.0 * g.k * g.n * size))
    return float(best)


@dataclass(frozen=True)
class Level:
    index: int
    inner: Box
    middle: Box
    outer: Box
    A: float
    h: float
    eps: float

    def to_dict(self) -> dict:
        return {
            "level": self.index,
            "eps": self.eps,
            "A": self.A,
            "h": self.h,
            "V_inner": self.inner.to_list(),
            "V_middle": self.middle.to_list(),
            "V_outer": self.outer.to_list(),
        }


# --------------------------------------------------------------------------- field


class _ComponentData:
    """Stacked segments ``[seed_1, ..., seed_{L+1}, gamma_1, ..., gamma_d]`` on the field mesh."""

    def __init__(self, basis: ChiBasis, levels: list[Level], N: int):
        self.basis = basis
        self.n_seeds = len(levels)
        self.seed_scales = [SEED_FACTOR * lv.eps / basis.seed_divisor for lv in levels]
        self.seeds = [seed_segment(a, basis.h, N) for a in self.seed_scales]
        rows_v = [s.values for s in self.seeds]
        rows_s = [s.slopes for s in self.seeds]
        self.gammas = [_lift_scalar(g, N) for g in basis.gammas]
        for g in self.gammas:
            rows_v.append(g.values)
            rows_s.append(g.slopes)
        self.stack = VectorSegment(basis.h, np.array(rows_v), np.array(rows_s))
        self._samples = None

    def samples(self):
        if self._samples is None:
            self._samples = self.stack._samples()
        return self._samples

    def level_coeffs(self, level: int, r) -> np.ndarray:
        """Coefficients of ``chi_level(r)`` in the stacked rows."""
        coef = np.zeros(self.n_seeds + len(self.gammas))
        coef[level - 1] = 1.0
        if self.gammas:
            c = np.linalg.solve(self.basis.M(r, self.gammas), self.basis.image(r, self.seeds[level - 1]))
            coef[self.n_seeds :] = -c
        return coef


class ChiField:
    """The glued complement field ``chi_g`` on ``I^k x V_L``.

    ``levels`` fixes how many gluing levels are materialized; the field is
    defined for ``v`` in the outer box of the last level (for ``V = R^{kn}``
    with two levels: ``|v|_inf < 9``). Queries elsewhere raise
    :class:`DomainError`.
    """

    def __init__(
        self,
        model: ModelSpec,
        levels: int | None = None,
        N: int = DEFAULT_N,
        r_grid_size: int = 9,
        h_samples: int | None = None,
        sample_seed: int = 0,
        bases: list[ChiBasis] | None = None,
    ):
        self.model = model
        g = model.g
        kn = model.kn
        if levels is None:
            levels = 2 if g.V.is_all else 1
        self.n_levels = int(levels)
        self.bases = bases if bases is not None else [build_chi_basis(model, j, N, r_grid_size) for j in range(model.n)]
        self.chain = Exhaustion(g.V, kn)
        count = h_samples if h_samples is not None else 10 ** min(kn, 4)
        lv_list: list[Level] = []
        A_run, h_run = 1.0, np.inf
        for ell in range(1, self.n_levels + 2):
            inner, middle, outer = self.chain.level_sets(ell)
            bump = Bump(inner, middle)
            A_run = max(A_run, 1.01 * (1.0 + float(np.sum(bump.slope_bound()))))
            h_min = sampled_min_h_g(g, outer, count, seed=sample_seed + ell)
            if not h_min > 0:
                raise ConstructionError(f"level {ell}: sampled minimum of h_g is {h_min}")
            h_run = min(h_run, H_SAFETY * h_min)
            lv_list.append(Level(ell, inner, middle, outer, A_run, h_run, h_run / (2.0 * A_run)))
        self.levels = lv_list
        self._bumps = [Bump(lv.inner, lv.middle) for lv in lv_list]
        eps_min = lv_list[-1].eps
        meshes = [N]
        for b in self.bases:
            a = SEED_FACTOR * eps_min / b.seed_divisor
            meshes.append(seed_mesh(a, eps_min / b.seed_divisor, model.h, N))
        self.N_field = int(max(meshes))
        self.N_state = N
        self._lock = threading.Lock()
        self._data: dict[int, _ComponentData] = {}

    # -- internals --------------------------------------------------------

    def _component(self, j: int) -> _ComponentData:
        data = self._data.get(j)
        if data is None:
            with self._lock:
                data = self._data.get(j)
                if data is None:
                    data = _ComponentData(self.bases[j], self.levels, self.N_field)
                    self._data[j] = data
        return data

    def level_of(self, v) -> int:
        """Smallest level whose outer box contains ``v``."""
        v = np.asarray(v, dtype=float)
        if not self.model.g.V.contains(v):
            raise DomainError("v is not in V")
        for lv in self.levels[: self.n_levels]:
            if lv.outer.contains(v):
                return lv.index
        raise DomainError(f"v outside the materialized region ({self.n_levels} levels); |v|_inf={np.max(np.abs(v)):.3g}")

    def _check(self, r, v):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        v = np.asarray(v, dtype=float)
        lo, hi = self.model.I
        if r.shape != (self.model.k,) or not np.all((r > lo) & (r < hi)):
            raise DomainError(f"r={r.tolist()} not in I^k")
        if v.shape != (self.model.kn,):
            raise ValueError(f"v must have length {self.model.kn}")
        return r, v

    def coeffs(self, j: int, r, v) -> np.ndarray:
        r, v = self._check(r, v)
        ell = self.level_of(v)
        a, _ = self._bumps[ell - 1](v)
        data = self._component(j)
        c_next = data.level_coeffs(ell + 1, r)
        if a == 0.0:
            return c_next
        c_here = data.level_coeffs(ell, r)
        return c_next + a * (c_here - c_next)

    def partial_coeffs(self, j: int, r, v, iota: int) -> np.ndarray:
        r, v = self._check(r, v)
        ell = self.level_of(v)
        _, grad = self._bumps[ell - 1](v)
        data = self._component(j)
        if grad[iota] == 0.0:
            return np.zeros(data.n_seeds + len(data.gammas))
        return grad[iota] * (data.level_coeffs(ell, r) - data.level_coeffs(ell + 1, r))

    def materialize(self, j: int, coef) -> ScalarSegment:
        st = self._component(j).stack
        return ScalarSegment(st.h, coef @ st.values, coef @ st.slopes)

    def coeff_norms(self, j: int, coef) -> tuple[float, float]:
        """Sampled ``(C, C^1)`` norms of the combination, same samples as :func:`norms`."""
        val, slope = self._component(j).samples()
        c = float(np.max(np.abs(coef @ val)))
        return c, c + float(np.max(np.abs(coef @ slope)))

    def extension_values(self, j: int, coef, t) -> tuple[np.ndarray, np.ndarray]:
        """``E chi(t)`` and its slope for the combination ``coef``."""
        val, slope = self._component(j).stack.eval_extension(np.asarray(t, dtype=float), self.model.J)
        return coef @ val, coef @ slope

    # -- public evaluation ------------------------------------------------

    def chi_eval(self, j: int, r, v) -> ScalarSegment:
        return self.materialize(j, self.coeffs(j, r, v))

    def chi_partial(self, j: int, r, v, iota: int) -> ScalarSegment:
        """Analytic ``d chi_{g,j} / d v_iota`` (0-based ``iota``)."""
        return self.materialize(j, self.partial_coeffs(j, r, v, iota))

    def chi_vector(self, r, v) -> VectorSegment:
        return VectorSegment.from_components([self.chi_eval(j, r, v) for j in range(self.model.n)])

    def level_chi(self, j: int, level: int, r) -> ScalarSegment:
        """The single-level map ``chi_level(r)`` on the field mesh."""
        return self.materialize(j, self._component(j).level_coeffs(level, np.atleast_1d(r)))

    def bump(self, level: int, v) -> tuple[float, np.ndarray]:
        return self._bumps[level - 1](v)

    def region(self) -> Box:
        return self.levels[self.n_levels - 1].outer

    def to_dict(self) -> dict:
        return {
            "mesh_intervals": self.N_field,
            "state_mesh_intervals": self.N_state,
            "materialized_levels": self.n_levels,
            "chain_offset": self.chain.offset,
            "levels": [lv.to_dict() for lv in self.levels],
            "bases": [b.to_dict() for b in self.bases],
        }
