"""The flattening map ``T`` and its inverse ``Y``.

``T(r, phi) = (r, phi - g(v) . chi_g(r, v))`` with ``v = hat(r, phi)`` sends the
solution manifold into the flat strip ``{psi'(0) = 0}``. Writing
``y = hat(T(r, phi))`` gives ``y = S(r, v) = v - R(r, v)``, and since
``|D_2 R| <= 1/2`` the map ``S_r`` is inverted by the fixed-point iteration
``v <- y + R(r, v)``. This yields ``Y(r, psi) = (r, psi + g(v) . chi_g(r, v))``.

Outputs of ``T`` and ``Y`` live on the mesh of the complement field, a
refinement of the input mesh; inputs are refined exactly before use.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .complement import ChiField
from .errors import DomainError, NotInImageError
from .model import ModelSpec, StatePoint
from .report import CheckResult
from .segments import VectorSegment, lift_to, max_abs_diff

DET_FLOOR = 1e-6


@dataclass(eq=False)
class TransformContext:
    model: ModelSpec
    field: ChiField
    fp_tol: float = 1e-12
    max_iter: int = 80

    @classmethod
    def build(cls, model: ModelSpec, **field_kwargs) -> "TransformContext":
        return cls(model, ChiField(model, **field_kwargs))

    @property
    def N(self) -> int:
        return self.field.N_field

    def lift(self, phi: VectorSegment) -> VectorSegment:
        return lift_to(phi, self.N)

    def _shift(self, r, v, phi: VectorSegment, sign: float) -> VectorSegment:
        """``lift(phi) + sign * g(v) . chi_g(r, v)``."""
        gv = self.model.g(v)
        base = self.lift(phi)
        vals = np.array(base.values)
        slopes = np.array(base.slopes)
        for j in range(self.model.n):
            if gv[j] == 0.0:
                continue
            chi = self.field.chi_eval(j, r, v)
            vals[j] += sign * gv[j] * chi.values
            slopes[j] += sign * gv[j] * chi.slopes
        return VectorSegment(base.h, vals, slopes)


# --------------------------------------------------------------------------- T


def T_map(ctx: TransformContext, p: StatePoint, check: bool = True) -> StatePoint:
    """``T(r, phi) = (r, A(r, phi))``; ``check=False`` skips the domain test (``chi_g`` only needs ``r in I^k``, ``v in V``)."""
    m = ctx.model
    if check:
        m._require(p)
    v = m.hat(p.r, p.phi)
    return StatePoint(p.r, ctx._shift(p.r, v, p.phi, -1.0))


# --------------------------------------------------------------------------- R, S


def R_eval(ctx: TransformContext, r, v) -> np.ndarray:
    """``R_iota = g_j(v) E chi_{g,j}(r, v)(r_kappa)`` at ``iota = kappa n + j``."""
    m = ctx.model
    r = np.atleast_1d(np.asarray(r, dtype=float))
    v = np.asarray(v, dtype=float)
    gv = m.g(v)
    out = np.zeros((m.k, m.n))
    for j in range(m.n):
        coef = ctx.field.coeffs(j, r, v)
        if gv[j] == 0.0:
            continue
        vals, _ = ctx.field.extension_values(j, coef, r)
        out[:, j] = gv[j] * vals
    return out.reshape(-1)


def S_eval(ctx: TransformContext, r, v) -> np.ndarray:
    return np.asarray(v, dtype=float) - R_eval(ctx, r, v)


def d2R_jacobian(ctx: TransformContext, r, v) -> np.ndarray:
    """Central-difference Jacobian of ``R`` in ``v`` (step ``1e-6 (1 + |v_i|)``)."""
    v = np.asarray(v, dtype=float)
    d = v.size
    jac = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1e-6 * (1.0 + abs(v[i]))
        jac[:, i] = (R_eval(ctx, r, v + e) - R_eval(ctx, r, v - e)) / (2.0 * e[i])
    return jac


def d2R_norm_estimate(ctx: TransformContext, r, v) -> float:
    """Largest singular value of the finite-difference v-Jacobian of ``R``."""
    return float(np.linalg.norm(d2R_jacobian(ctx, r, v), 2))


@dataclass
class InverseResult:
    v: np.ndarray
    iterations: int
    ratios: list = field(default_factory=list)
    residual: float = 0.0


def _start_point(ctx: TransformContext, y: np.ndarray) -> np.ndarray:
    V = ctx.model.g.V
    if V.contains(y):
        return y.copy()
    # nearest box by distance after clipping, pulled just inside
    best, best_d = None, np.inf
    for b in V.boxes:
        c = b.pull_inside(y)
        d = float(np.max(np.abs(c - y)))
        if d < best_d:
            best, best_d = c, d
    return best


def S_inverse(ctx: TransformContext, r, y, full_output: bool = False):
    """Solve ``S(r, v) = y`` by ``v <- y + R(r, v)`` from ``v = y``.

    Raises :class:`NotInImageError` when an iterate leaves the domain of the
    field or the iteration does not settle within ``ctx.max_iter`` steps.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    y = np.asarray(y, dtype=float)
    v = _start_point(ctx, y)
    ratios, prev = [], None
    noise = 1e-14 * max(1.0, float(np.max(np.abs(y))))
    for it in range(1, ctx.max_iter + 1):
        try:
            v_new = y + R_eval(ctx, r, v)
        except DomainError as exc:
            raise NotInImageError(f"y not in S_r(V): iterate left the domain ({exc})") from None
        step = float(np.max(np.abs(v_new - v)))
        if prev is not None and prev > noise and step > noise:
            ratios.append(step / prev)
        prev = step
        v = v_new
        if step <= ctx.fp_tol:
            if not ctx.model.g.V.contains(v):
                raise NotInImageError("y not in S_r(V): limit lies outside V")
            res = float(np.max(np.abs(S_eval(ctx, r, v) - y)))
            out = InverseResult(v, it, ratios, res)
            return out if full_output else v
    raise NotInImageError(f"y not in S_r(V): no convergence in {ctx.max_iter} iterations (last step {prev:.3e})")


# --------------------------------------------------------------------------- Y


def Y_map(ctx: TransformContext, q: StatePoint, check: bool = True, full_output: bool = False):
    """``Y(r, psi) = (r, psi + g(v) . chi_g(r, v))`` with ``v = S_r^{-1}(hat(r, psi))``."""
    m = ctx.model
    r = q.r
    if check:
        lo, hi = m.I
        if not np.all((r > lo) & (r < hi)):
            raise NotInImageError("not in O: r not in I^k")
        if not m.delta.W.contains(m.Q(r, q.phi)):
            raise NotInImageError("not in O: Q(r,psi) not in W")
    y = m.hat(r, q.phi)
    inv = S_inverse(ctx, r, y, full_output=True)
    out = StatePoint(r, ctx._shift(r, inv.v, q.phi, +1.0))
    return (out, inv) if full_output else out


def roundtrip_error(ctx: TransformContext, p: StatePoint, direction: str = "forward") -> float:
    """C^1 distance of ``Y(T(p))`` (forward) or ``T(Y(p))`` (inverse) to ``p``."""
    if direction == "forward":
        back = Y_map(ctx, T_map(ctx, p))
    else:
        back = T_map(ctx, Y_map(ctx, p))
    return max_abs_diff(back.phi, ctx.lift(p.phi)).c1_norm


# --------------------------------------------------------------------------- classification


@dataclass
class PointClass:
    """Membership flags and defining residuals of a point.

    The point is read both as ``(r, phi)`` (domain and manifold tests) and as
    ``(r, psi)`` (image-set tests).
    """

    in_U: bool
    on_manifold: bool
    in_O: bool
    in_image: bool
    graph_residual: float | None = None
    residuals: dict = field(default_factory=dict)
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "in_U": self.in_U,
            "on_manifold": self.on_manifold,
            "in_O": self.in_O,
            "in_image": self.in_image,
            "graph_residual": self.graph_residual,
            "residuals": self.residuals,
            "reason": self.reason,
        }


def manifold_residuals(model: ModelSpec, p: StatePoint) -> dict:
    """``|phi'(0) - G|``, ``|Delta|`` (max norms) and ``|det D1 Delta|``; assumes ``p`` in the domain."""
    return {
        "ode": float(np.max(np.abs(p.phi.slopes[:, -1] - model.G(p, check=False)))),
        "delta": float(np.max(np.abs(model.Delta(p, check=False)))),
        "det": float(abs(np.linalg.det(model.D1Delta(p, check=False)))),
    }


def graph_residual(model: ModelSpec, p: StatePoint) -> float | None:
    """``|r + d(L psi)|`` for explicit delays (constant ``L``, offset ``delta``)."""
    if not model.explicit_delay:
        return None
    return float(np.max(np.abs(p.r + model.delta.d(model.Q(p.r, p.phi)))))


def classify_point(ctx: TransformContext, p: StatePoint, tol: float = 1e-9) -> PointClass:
    m = ctx.model
    res: dict = {}
    dom = m.in_domain(p)
    on_manifold = False
    if dom:
        mr = manifold_residuals(m, p)
        res.update(mr)
        on_manifold = mr["ode"] <= tol and mr["delta"] <= tol and mr["det"] >= DET_FLOOR
    in_O, in_image, reason = False, False, "" if dom else dom.reason
    try:
        back = Y_map(ctx, p)
        in_O = True
    except (NotInImageError, DomainError) as exc:
        reason = reason or str(exc)
    if in_O:
        res["slope0"] = float(np.max(np.abs(p.phi.slopes[:, -1])))
        res["image_delta"] = float(np.max(np.abs(m.Delta(p, check=False))))
        res["image_det"] = float(abs(np.linalg.det(m.D1Delta(back, check=False))))
        in_image = res["slope0"] <= tol and res["image_delta"] <= tol and res["image_det"] >= DET_FLOOR
    return PointClass(bool(dom), on_manifold, in_O, in_image, graph_residual(m, p), res, reason)


def forward_image_residual(ctx: TransformContext, p: StatePoint) -> tuple[float, float]:
    """For a manifold point: max of ``|psi'(0)|``, ``|Delta(T p)|`` and the pull-back error; and ``|det D1 Delta(p)|``."""
    m = ctx.model
    q = T_map(ctx, p)
    back = Y_map(ctx, q)
    err = max(
        float(np.max(np.abs(q.phi.slopes[:, -1]))),
        float(np.max(np.abs(m.Delta(q, check=False)))),
        max_abs_diff(back.phi, ctx.lift(p.phi)).c1_norm,
    )
    return err, float(abs(np.linalg.det(m.D1Delta(p, check=False))))


def reverse_image_residual(ctx: TransformContext, q: StatePoint) -> tuple[float, float]:
    """For a flat point with ``Delta = 0``: manifold residuals of ``Y(q)`` and its ``|det D1 Delta|``."""
    m = ctx.model
    p = Y_map(ctx, q)
    if not m.in_domain(p):
        return np.inf, 0.0
    mr = manifold_residuals(m, p)
    return max(mr["ode"], mr["delta"]), mr["det"]


def verify_image_identity(ctx: TransformContext, samples: int = 20, seed: int = 42, tol: float = 1e-7) -> CheckResult:
    """Sampled check that ``T`` maps the manifold onto the flat set ``{psi'(0)=0, Delta=0, det != 0}``.

    Forward: manifold points found from random seeds map into the flat set.
    Reverse: flat points (random ``psi`` with ``psi'(0) = 0`` and ``r`` solving
    ``Delta(r, psi) = 0``) map under ``Y`` onto the manifold.
    """
    from .dynamics import perturbed_manifold_points, flat_image_points

    rng = np.random.default_rng(seed)
    fwd = perturbed_manifold_points(ctx.model, rng, samples, N=ctx.field.N_state)
    rev = flat_image_points(ctx.model, rng, samples, N=ctx.field.N_state)
    values, where, dets = [], [], []
    for i, p in enumerate(fwd):
        err, det = forward_image_residual(ctx, p)
        values.append(err if det >= DET_FLOOR else np.inf)
        where.append({"direction": "forward", "index": i, "r": p.r.tolist()})
        dets.append(det)
    for i, q in enumerate(rev):
        err, det = reverse_image_residual(ctx, q)
        values.append(err if det >= DET_FLOOR else np.inf)
        where.append({"direction": "reverse", "index": i, "r": q.r.tolist()})
        dets.append(det)
    detail = {"forward": len(fwd), "reverse": len(rev), "min_det": float(min(dets)) if dets else None, "seed": seed}
    if len(fwd) < samples or len(rev) < samples:
        detail["error"] = "could not construct enough sample points"
        return CheckResult("image_characterization", False, float("nan"), len(values), tol, "max", None, detail)
    return CheckResult.from_values("image_characterization", values, tol, where=where, detail=detail)
