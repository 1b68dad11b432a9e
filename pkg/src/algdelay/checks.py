"""Property checks shared by the ``verify`` command and the test-suite.

Each function draws seeded samples, evaluates one family of identities or
bounds, and returns a :class:`CheckResult` (worst value, tolerance, sample
count and the location of the worst sample).
"""
from __future__ import annotations

import numpy as np

from .complement import ChiField, h_g_eval
from .dynamics import (
    find_manifold_point,
    integrate,
    perturbed_manifold_points,
    trajectory_residuals,
)
from .errors import ConvergenceError, DomainError
from .model import ModelSpec, OffsetDelta, StatePoint, verify_hq
from .report import CheckResult, VerificationReport
from .sampling import default_scale, random_domain_point, random_r, random_segment
from .segments import (
    DEFAULT_N,
    VectorSegment,
    extension_norms,
    linear_combine,
    make_vector_segment,
    max_abs_diff,
    norms,
)
from .transform import (
    DET_FLOOR,
    R_eval,
    S_eval,
    S_inverse,
    T_map,
    TransformContext,
    Y_map,
    d2R_norm_estimate,
    graph_residual,
    verify_image_identity,
)

FD_STEP = 1e-6


def rel_err(a, b, floor: float = 1e-4) -> float:
    """``|a - b| / (max(|a|, |b|) + floor)`` in the max norm."""
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return float(np.max(np.abs(a - b)) / (max(np.max(np.abs(a)), np.max(np.abs(b))) + floor))


# --------------------------------------------------------------------------- segments


def check_extension(rng: np.random.Generator, count: int = 1000, N: int = DEFAULT_N, h: float = 1.0) -> CheckResult:
    """``|E phi|_C(J) <= 3 |phi|_C`` on random segments, the cosine witness, and exact affine extension."""
    ratios = []
    for _ in range(count):
        phi = random_segment(rng, h, 1, N, scale=rng.uniform(0.1, 10.0), modes=int(rng.integers(1, 8)))
        ratios.append(extension_norms(phi).c_norm / norms(phi).c_norm)
    cos = make_vector_segment(h, N, [lambda t: np.cos(np.pi * t / h)], [lambda t: -np.pi / h * np.sin(np.pi * t / h)])
    witness = extension_norms(cos).c_norm / norms(cos).c_norm
    affine_err = 0.0
    t = np.linspace(-2.0 * h, h, 301)
    for _ in range(20):
        a, b = rng.uniform(-3, 3, 2)
        seg = make_vector_segment(h, N, [lambda s: a + b * s], [lambda s: b])
        val, slope = seg.eval_extension(t)
        affine_err = max(affine_err, float(np.max(np.abs(val[0] - (a + b * t)))), float(np.max(np.abs(slope[0] - b))))
    worst = max(ratios)
    ok = worst <= 3.0 + 1e-12 and witness >= 2.99 and affine_err <= 1e-12
    return CheckResult(
        "extension_operator",
        ok,
        worst,
        count,
        3.0 + 1e-12,
        detail={"cosine_ratio": witness, "affine_error": affine_err},
    )


# --------------------------------------------------------------------------- model


def check_q_linearity(model: ModelSpec, rng: np.random.Generator, count: int = 100) -> CheckResult:
    vals = []
    for _ in range(count):
        r = random_r(model, rng)
        phi = random_segment(rng, model.h, model.n)
        psi = random_segment(rng, model.h, model.n)
        a, b = rng.uniform(-2, 2, 2)
        lhs = model.Q(r, linear_combine([phi, psi], [a, b]))
        rhs = a * model.Q(r, phi) + b * model.Q(r, psi)
        vals.append(float(np.max(np.abs(lhs - rhs))))
    return CheckResult.from_values("Q_linearity", vals, 1e-10)


def check_derivatives(model: ModelSpec, rng: np.random.Generator, count: int = 100, tol: float = 1e-5) -> list[CheckResult]:
    """Analytic ``DG``, ``D2 Delta`` and ``D1 Delta`` against central differences."""
    dg, d2, d1 = [], [], []
    eps = FD_STEP
    for _ in range(count):
        p = random_domain_point(model, rng)
        s = rng.uniform(-1, 1, model.k)
        psi = random_segment(rng, model.h, model.n, scale=default_scale(model))
        plus = StatePoint(p.r + eps * s, linear_combine([p.phi, psi], [1.0, eps]))
        minus = StatePoint(p.r - eps * s, linear_combine([p.phi, psi], [1.0, -eps]))
        fd = (model.G(plus, check=False) - model.G(minus, check=False)) / (2 * eps)
        dg.append(rel_err(model.DG(p, s, psi), fd))
        plus = StatePoint(p.r, linear_combine([p.phi, psi], [1.0, eps]))
        minus = StatePoint(p.r, linear_combine([p.phi, psi], [1.0, -eps]))
        fd = (model.Delta(plus, check=False) - model.Delta(minus, check=False)) / (2 * eps)
        d2.append(rel_err(model.D2Delta(p, psi), fd))
        fd = np.empty((model.k, model.k))
        for kap in range(model.k):
            e = np.zeros(model.k)
            e[kap] = eps
            fd[:, kap] = (model.Delta(StatePoint(p.r + e, p.phi), check=False) - model.Delta(StatePoint(p.r - e, p.phi), check=False)) / (2 * eps)
        d1.append(rel_err(model.D1Delta(p), fd))
    return [
        CheckResult.from_values("derivative_DG", dg, tol),
        CheckResult.from_values("derivative_D2Delta", d2, tol),
        CheckResult.from_values("derivative_D1Delta", d1, tol),
    ]


def check_hq(model: ModelSpec, grid: int = 9) -> CheckResult:
    return verify_hq(model, grid)


def check_manifold_point(model: ModelSpec, seed: StatePoint, tol: float = 1e-10, det_floor: float = 0.5) -> CheckResult:
    try:
        p = find_manifold_point(model, seed, tol=tol)
    except (ConvergenceError, DomainError) as exc:
        return CheckResult("manifold_point", False, float("inf"), 1, tol, detail={"error": str(exc)})
    ode = float(np.max(np.abs(p.phi.slopes[:, -1] - model.G(p))))
    dl = float(np.max(np.abs(model.Delta(p))))
    det = float(abs(np.linalg.det(model.D1Delta(p))))
    worst = max(ode, dl)
    detail = {"r": p.r.tolist(), "ode": ode, "delta": dl, "det": det}
    if isinstance(model.delta, OffsetDelta):
        detail["offset_residual"] = float(np.max(np.abs(p.r + model.delta.d(model.Q(p.r, p.phi)))))
    return CheckResult("manifold_point", worst <= tol and det >= det_floor, worst, 1, tol, detail=detail)


# --------------------------------------------------------------------------- complement


def sample_field_point(field: ChiField, rng: np.random.Generator):
    """Random ``(r, v)`` in ``I^k`` times the materialized region of the field (kept inside ``V``)."""
    m = field.model
    box = field.region()
    for _ in range(1000):
        v = rng.uniform(box.lo, box.hi)
        if m.g.V.contains(v):
            return random_r(m, rng), v
    raise RuntimeError("cannot sample the field region")


def check_chi_contract(field: ChiField, rng: np.random.Generator, count: int = 500) -> list[CheckResult]:
    """Kernel residual, unit slope, size and v-partial bounds of the complement field.

    Sizes are sampled norms of the materialized segments (nodes plus 8 interior
    points per interval). Partials are central differences of the field in
    ``v_iota``, also compared with the analytic bump formula.
    """
    m = field.model
    resid, slope, size, part, part_fd = [], [], [], [], []
    where = []
    for _ in range(count):
        r, v = sample_field_point(field, rng)
        hg = h_g_eval(m.g, v)
        where.append({"r": r.tolist(), "v": v.tolist()})
        rs, ss, zs, ps, pf = 0.0, 0.0, 0.0, 0.0, 0.0
        for j in range(m.n):
            coef = field.coeffs(j, r, v)
            chi = field.materialize(j, coef)
            rs = max(rs, float(np.max(np.abs(m.q.component_value(j, r, chi, m.J)), initial=0.0)))
            ss = max(ss, abs(chi.slopes[-1] - 1.0))
            zs = max(zs, field.coeff_norms(j, coef)[0] / hg)
            for iota in range(m.kn):
                step = FD_STEP * (1.0 + abs(v[iota]))
                e = np.zeros(m.kn)
                e[iota] = step
                fd = (field.coeffs(j, r, v + e) - field.coeffs(j, r, v - e)) / (2 * step)
                an = field.partial_coeffs(j, r, v, iota)
                ps = max(ps, field.coeff_norms(j, fd)[0] - hg)
                pf = max(pf, field.coeff_norms(j, fd - an)[0])
        resid.append(rs)
        slope.append(ss)
        size.append(zs)
        part.append(ps)
        part_fd.append(pf)
    return [
        CheckResult.from_values("chi_kernel_residual", resid, 1e-8, where=where),
        CheckResult.from_values("chi_unit_slope", slope, 0.0, where=where),
        CheckResult.from_values("chi_size_over_h_g", size, 1.0, where=where),
        CheckResult.from_values("chi_partial_minus_h_g", part, 1e-6, where=where),
        CheckResult.from_values("chi_partial_fd_agreement", part_fd, 1e-6, where=where),
    ]


def check_chi_overlap(field: ChiField, rng: np.random.Generator, count: int = 20) -> CheckResult:
    """Adjacent glued levels agree where the lower bump has switched off."""
    m = field.model
    if field.n_levels < 2:
        return CheckResult("chi_level_overlap", True, 0.0, 0, 1e-12, detail={"note": "single level"})
    vals = []
    lv1, lv2 = field.levels[0], field.levels[1]
    for _ in range(count):
        # v outside closure(V_12) but inside V_1
        for _ in range(1000):
            v = rng.uniform(lv1.outer.lo, lv1.outer.hi)
            if not (np.all(v >= lv1.middle.lo) and np.all(v <= lv1.middle.hi)) and m.g.V.contains(v):
                break
        r = random_r(m, rng)
        for j in range(m.n):
            a_here, _ = field.bump(1, v)
            a_next, _ = field.bump(2, v)
            c1 = field._component(j).level_coeffs(2, r)
            h1 = field._component(j).level_coeffs(1, r)
            H1 = c1 + a_here * (h1 - c1)
            H2 = field._component(j).level_coeffs(3, r) + a_next * (c1 - field._component(j).level_coeffs(3, r))
            vals.append(field.coeff_norms(j, H1 - H2)[1])
    return CheckResult.from_values("chi_level_overlap", vals, 1e-12)


# --------------------------------------------------------------------------- transform


def check_contraction(ctx: TransformContext, rng: np.random.Generator, count: int = 200) -> list[CheckResult]:
    m = ctx.model
    est, where, dist = [], [], []
    for _ in range(count):
        r, v = sample_field_point(ctx.field, rng)
        est.append(d2R_norm_estimate(ctx, r, v))
        where.append({"r": r.tolist(), "v": v.tolist()})
        if not m.g.V.is_all:
            dist.append(float(np.linalg.norm(R_eval(ctx, r, v)) - 0.5 * m.g.V.dist_to_complement(v)))
    out = [CheckResult.from_values("R_contraction", est, 0.5 + 1e-6, where=where)]
    if dist:
        out.append(CheckResult.from_values("R_half_distance", dist, 1e-9, where=where))
    return out


def check_s_inverse(ctx: TransformContext, rng: np.random.Generator, count: int = 100) -> list[CheckResult]:
    res, ratios, iters, where = [], [], [], []
    for _ in range(count):
        r, v = sample_field_point(ctx.field, rng)
        y = S_eval(ctx, r, v)
        out = S_inverse(ctx, r, y, full_output=True)
        res.append(float(np.max(np.abs(S_eval(ctx, r, out.v) - y))))
        ratios.append(max(out.ratios, default=0.0))
        iters.append(out.iterations)
        where.append({"r": r.tolist(), "y": y.tolist()})
    return [
        CheckResult.from_values("S_inverse_residual", res, 1e-10, where=where),
        CheckResult.from_values("S_inverse_step_ratio", ratios, 0.5 + 1e-3, where=where),
        CheckResult.from_values("S_inverse_iterations", iters, 60, where=where),
    ]


def random_o_point(ctx: TransformContext, rng: np.random.Generator) -> StatePoint:
    """Random ``(r, psi)`` with ``Q(r, psi) in W`` whose hat vector is reachable by the inverse."""
    m = ctx.model
    for _ in range(200):
        q = random_domain_point(m, rng)
        try:
            Y_map(ctx, q)
        except DomainError:
            continue
        return q
    raise RuntimeError("cannot sample a point of O")


def check_roundtrips(ctx: TransformContext, rng: np.random.Generator, count: int = 100, tol: float = 1e-8) -> list[CheckResult]:
    m = ctx.model
    fwd, inv = [], []
    for _ in range(count):
        p = random_domain_point(m, rng)
        fwd.append(max_abs_diff(Y_map(ctx, T_map(ctx, p)).phi, ctx.lift(p.phi)).c1_norm)
        q = random_o_point(ctx, rng)
        inv.append(max_abs_diff(T_map(ctx, Y_map(ctx, q)).phi, ctx.lift(q.phi)).c1_norm)
    return [
        CheckResult.from_values("roundtrip_Y_after_T", fwd, tol),
        CheckResult.from_values("roundtrip_T_after_Y", inv, tol),
    ]


def check_transform_identities(ctx: TransformContext, rng: np.random.Generator, count: int = 100) -> list[CheckResult]:
    """Slope identity, Q- and Delta-invariance of ``T`` and ``Y``, and hat transport."""
    m = ctx.model
    slope, qinv, dinv, hat, qinv_y = [], [], [], [], []
    for _ in range(count):
        p = random_domain_point(m, rng)
        v = m.hat(p.r, p.phi)
        q = T_map(ctx, p)
        slope.append(float(np.max(np.abs(q.phi.slopes[:, -1] - (p.phi.slopes[:, -1] - m.g(v))))))
        qinv.append(float(np.max(np.abs(m.Q(p.r, q.phi) - m.Q(p.r, p.phi)))))
        dinv.append(float(np.max(np.abs(m.Delta(q, check=False) - m.Delta(p)))))
        hat.append(float(np.max(np.abs(m.hat(q.r, q.phi) - S_eval(ctx, p.r, v)))))
        o = random_o_point(ctx, rng)
        qinv_y.append(float(np.max(np.abs(m.Q(o.r, Y_map(ctx, o).phi) - m.Q(o.r, o.phi)))))
    return [
        CheckResult.from_values("T_slope_identity", slope, 1e-14),
        CheckResult.from_values("T_Q_invariance", qinv, 1e-10),
        CheckResult.from_values("Y_Q_invariance", qinv_y, 1e-10),
        CheckResult.from_values("T_Delta_invariance", dinv, 1e-9),
        CheckResult.from_values("T_hat_transport", hat, 1e-10),
    ]


def check_image_characterization(ctx: TransformContext, count: int = 20, seed: int = 42, tol: float = 1e-7) -> CheckResult:
    return verify_image_identity(ctx, samples=count, seed=seed, tol=tol)


def check_graph(ctx: TransformContext, rng: np.random.Generator, count: int = 20, tol: float = 1e-9) -> CheckResult | None:
    """``r = -d(L psi)`` on T-images of manifold points (explicit delays only)."""
    m = ctx.model
    if not m.explicit_delay:
        return None
    pts = perturbed_manifold_points(m, rng, count, N=ctx.field.N_state)
    vals = [graph_residual(m, T_map(ctx, p)) for p in pts]
    if len(vals) < count:
        return CheckResult("explicit_delay_graph", False, float("nan"), len(vals), tol, detail={"error": "too few manifold points"})
    return CheckResult.from_values("explicit_delay_graph", vals, tol)


# --------------------------------------------------------------------------- dynamics


def convergence_order(model: ModelSpec, p0: StatePoint, t_end: float, dts, reference) -> tuple[float, list[float]]:
    """Observed order from runs at ``dts`` (each half the previous) against a reference trajectory."""
    errs = []
    for dt in dts:
        tr = integrate(model, p0, t_end, dt)
        if tr.status != "ok":
            raise ConvergenceError(tr.error)
        idx = np.round(tr.t / reference.dt).astype(int)
        errs.append(float(np.max(np.abs(tr.x - reference.x[idx]))))
    orders = [float(np.log2(a / b)) for a, b in zip(errs[:-1], errs[1:])]
    return min(orders), errs


def check_trajectory(model: ModelSpec, p0: StatePoint, t_end: float, dt: float) -> list[CheckResult]:
    tr = integrate(model, p0, t_end, dt)
    out = trajectory_residuals(model, tr)
    out.append(
        CheckResult(
            "trajectory_completed",
            tr.status == "ok" and tr.t_e >= t_end - 1e-9,
            tr.t_e,
            len(tr.t),
            t_end,
            sense="min",
            detail=tr.summary(),
        )
    )
    out.append(CheckResult.from_values("trajectory_step_delta", [max(tr.res_delta)], 1e-7))
    out.append(CheckResult.from_values("trajectory_step_ode", [max(tr.res_ode)], 1e-6))
    return out


# --------------------------------------------------------------------------- suite


def run_suite(
    model: ModelSpec,
    seed: int = 42,
    samples: int = 50,
    chi_samples: int = 100,
    N: int = DEFAULT_N,
    manifold_seed: StatePoint | None = None,
    trajectory: tuple[StatePoint, float, float] | None = None,
    ctx: TransformContext | None = None,
) -> VerificationReport:
    """All property checks for one model."""
    rng = np.random.default_rng(seed)
    rep = VerificationReport()
    rep.add(check_extension(rng, count=samples, N=N, h=model.h))
    rep.add(check_hq(model))
    rep.add(check_q_linearity(model, rng, samples))
    for c in check_derivatives(model, rng, samples):
        rep.add(c)
    ctx = ctx or TransformContext.build(model, N=N)
    for c in check_chi_contract(ctx.field, rng, chi_samples):
        rep.add(c)
    rep.add(check_chi_overlap(ctx.field, rng))
    for c in check_contraction(ctx, rng, samples):
        rep.add(c)
    for c in check_s_inverse(ctx, rng, samples):
        rep.add(c)
    for c in check_roundtrips(ctx, rng, samples):
        rep.add(c)
    for c in check_transform_identities(ctx, rng, samples):
        rep.add(c)
    rep.add(check_image_characterization(ctx, count=min(samples, 20), seed=seed))
    graph = check_graph(ctx, rng, min(samples, 20))
    if graph is not None:
        rep.add(graph)
    if manifold_seed is None:
        manifold_seed = StatePoint(np.full(model.k, -model.h / 2.0), VectorSegment.zeros(model.h, model.n, N))
    rep.add(check_manifold_point(model, manifold_seed))
    if trajectory is not None:
        for c in check_trajectory(model, *trajectory):
            rep.add(c)
    rep.provenance = {
        "seed": seed,
        "samples": samples,
        "chi_samples": chi_samples,
        "state_mesh_intervals": N,
        "field": ctx.field.to_dict(),
        "tolerances": {
            "derivative_relative": 1e-5,
            "kernel_residual": 1e-8,
            "contraction": 0.5 + 1e-6,
            "inverse_residual": 1e-10,
            "roundtrip_c1": 1e-8,
            "image_residual": 1e-7,
            "graph_residual": 1e-9,
            "manifold_residual": 1e-10,
            "det_floor": DET_FLOOR,
        },
    }
    return rep
