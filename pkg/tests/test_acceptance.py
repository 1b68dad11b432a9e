"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a single PASS/FAIL line; the lines are repeated in the
terminal summary.
"""
import time

import numpy as np

from algdelay.checks import (
    check_chi_contract,
    check_contraction,
    check_derivatives,
    check_extension,
    check_graph,
    check_hq,
    check_image_characterization,
    check_manifold_point,
    check_roundtrips,
    check_s_inverse,
    convergence_order,
)
from algdelay.complement import ChiField
from algdelay.dynamics import integrate
from algdelay.scenarios import documented_seed, echo_compatible_point

from scenario_cache import SCENARIOS, context, model, record


def summarize(results):
    return "; ".join(f"{c.name}[{c.detail['scenario']}] worst={c.worst:.3g}" for c in results)


def tag(results, name):
    for c in results:
        c.detail = {**(c.detail or {}), "scenario": name}
    return results


def test_ac01_extension_operator():
    t0 = time.perf_counter()
    c = check_extension(np.random.default_rng(1), count=1000, N=64)
    elapsed = time.perf_counter() - t0
    ok = c.passed and elapsed < 2.0
    d = c.detail
    text = f"max ratio={c.worst:.4f} (<= 3), cosine ratio={d['cosine_ratio']:.4f} (>= 2.99), affine error={d['affine_error']:.2g} (<= 1e-12), {elapsed:.2f} s (< 2 s)"
    record("AC1 extension operator on 1000 segments", ok, text)
    assert ok, c.line()


def test_ac02_hq():
    res = [tag([check_hq(model(name), grid=9)], name)[0] for name in SCENARIOS]
    ok = all(c.passed for c in res)
    record("AC2 (Hq) with smallest singular value >= 1e-8", ok, summarize(res))
    assert ok


def test_ac03_complement_field_contract():
    t0 = time.perf_counter()
    res = []
    for i, name in enumerate(SCENARIOS):
        # fresh field so the timing includes construction
        res += tag(check_chi_contract(ChiField(model(name)), np.random.default_rng(100 + i), count=500), name)
    elapsed = time.perf_counter() - t0
    ok = all(c.passed for c in res) and elapsed < 30.0
    worst = {}
    for c in res:
        worst[c.name] = max(worst.get(c.name, -np.inf), c.worst)
    text = ", ".join(f"{k}={v:.3g}" for k, v in worst.items())
    record("AC3 complement field contract (500 samples x 3)", ok, f"{text}; {elapsed:.1f} s (< 30 s)")
    assert ok, [c.line() for c in res if not c.passed]


def test_ac04_contraction():
    res = []
    for i, name in enumerate(SCENARIOS + ("echo_box",)):
        res += tag(check_contraction(context(name), np.random.default_rng(200 + i), count=200), name)
    ok = all(c.passed for c in res) and any(c.name == "R_half_distance" for c in res)
    record("AC4 contraction and half-distance bound", ok, summarize(res))
    assert ok, [c.line() for c in res if not c.passed]


def test_ac05_s_inverse():
    res = []
    for i, name in enumerate(SCENARIOS):
        res += tag(check_s_inverse(context(name), np.random.default_rng(300 + i), count=100), name)
    ok = all(c.passed for c in res)
    record("AC5 S_r inversion", ok, summarize(res))
    assert ok, [c.line() for c in res if not c.passed]


def test_ac06_round_trips():
    res = []
    for i, name in enumerate(SCENARIOS):
        res += tag(check_roundtrips(context(name), np.random.default_rng(400 + i), count=100, tol=1e-8), name)
    ok = all(c.passed for c in res)
    record("AC6 Y after T and T after Y", ok, summarize(res))
    assert ok, [c.line() for c in res if not c.passed]


def test_ac07_image_identity():
    res = [tag([check_image_characterization(context(name), count=20, seed=500 + i, tol=1e-7)], name)[0] for i, name in enumerate(SCENARIOS)]
    ok = all(c.passed and c.detail["forward"] == 20 and c.detail["reverse"] == 20 for c in res)
    record("AC7 manifold image identity (20 forward + 20 reverse)", ok, summarize(res))
    assert ok, [c.line() for c in res]


def test_ac08_lin2_graph():
    c = check_graph(context("lin2"), np.random.default_rng(600), count=20, tol=1e-9)
    ok = c is not None and c.passed and c.samples == 20
    record("AC8 lin2 delay graph", ok, c.line())
    assert ok, c.line()


def test_ac09_derivatives():
    res = []
    for i, name in enumerate(SCENARIOS):
        res += tag(check_derivatives(model(name), np.random.default_rng(700 + i), count=100, tol=1e-5), name)
    ok = all(c.passed for c in res)
    record("AC9 derivatives against finite differences", ok, summarize(res))
    assert ok, [c.line() for c in res if not c.passed]


def test_ac10_semiflow():
    m = model("echo")
    p0 = echo_compatible_point()
    t0 = time.perf_counter()
    tr = integrate(m, p0, 10.0, 1e-3)
    order, errs = convergence_order(m, p0, 10.0, [0.02, 0.01], tr)
    elapsed = time.perf_counter() - t0
    md, mo = max(tr.res_delta), max(tr.res_ode)
    ok = tr.status == "ok" and md <= 1e-7 and mo <= 1e-6 and order >= 3.5 and elapsed < 10.0
    record(
        "AC10 echo semiflow to t=10",
        ok,
        f"max|Delta|={md:.3g} (<= 1e-7), max|x'-G|={mo:.3g} (<= 1e-6), order={order:.2f} (>= 3.5, errs {errs[0]:.3g}, {errs[1]:.3g}), {elapsed:.1f} s (< 10 s)",
    )
    assert ok


def test_ac11_manifold_search():
    res = [tag([check_manifold_point(model(name), documented_seed(name), tol=1e-10, det_floor=0.5)], name)[0] for name in SCENARIOS]
    ok = all(c.passed for c in res)
    dets = ", ".join(f"{c.detail['scenario']} det={c.detail.get('det', float('nan')):.3g}" for c in res)
    record("AC11 manifold search from documented seeds", ok, f"{summarize(res)}; {dets}")
    assert ok, [c.line() for c in res]
