import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algdelay.dynamics import (
    History,
    find_manifold_point,
    integrate,
    newton,
    perturbed_manifold_points,
    solve_delay,
    trajectory_residuals,
    write_sidecar,
)
from algdelay.errors import ConvergenceError, DomainError
from algdelay.model import StatePoint
from algdelay.sampling import random_segment
from algdelay.scenarios import documented_seed, echo_compatible_point
from algdelay.segments import VectorSegment, make_vector_segment
from algdelay.transform import classify_point

from scenario_cache import SCENARIOS, context, model


# --------------------------------------------------------------------------- Newton and delay solves


def test_newton_converges_quadratically():
    out = newton(lambda x: x**2 - 2.0, [1.0], lambda x: np.array([[2.0 * x[0]]]), tol=1e-15)
    assert out.x[0] == pytest.approx(np.sqrt(2), abs=1e-15) and out.iterations <= 6


def test_newton_reports_failure():
    with pytest.raises(ConvergenceError):
        newton(lambda x: x**2 + 1.0, [1.0], lambda x: np.array([[2.0 * x[0]]]), max_iter=10)


def test_solve_delay_on_rest_history():
    echo = model("echo")
    assert solve_delay(echo, VectorSegment.zeros(2.0, 1), [-0.9])[0] == pytest.approx(-1.0, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solve_delay_explicit_form(seed):
    m = model("lin2")
    x = random_segment(np.random.default_rng(seed), 1.0, 1)
    out = solve_delay(m, x, [-0.7], full_output=True)
    L = x.eval(-0.5)[0][0]
    assert out.x[0] == pytest.approx(-(1 + np.tanh(L)) / 2, abs=1e-15)
    assert out.iterations <= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solve_delay_on_perturbed_echo_history(seed):
    m = model("echo")
    x = random_segment(np.random.default_rng(seed), 2.0, 1, scale=0.2)
    out = solve_delay(m, x, [-1.0], full_output=True)
    assert out.residual <= 1e-12 and out.iterations <= 6


def test_solve_delay_refuses_small_delays():
    m = model("lin2")
    # d(L x) close to 0 forces r close to 0
    x = VectorSegment(1.0, np.full((1, 65), -20.0), np.zeros((1, 65)))
    with pytest.raises(DomainError):
        solve_delay(m, x, [-0.1])


# --------------------------------------------------------------------------- manifold points


@pytest.mark.parametrize("name, r", [("echo", [-1.0]), ("lin2", [-0.5]), ("pair", [-0.6, -0.7])])
def test_documented_seeds(name, r):
    m = model(name)
    p = find_manifold_point(m, documented_seed(name))
    assert np.max(np.abs(p.r - r)) <= 1e-10
    assert np.max(np.abs(p.phi.values)) <= 1e-10
    assert np.max(np.abs(p.r + m.delta.d(m.Q(p.r, p.phi)))) <= 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(SCENARIOS))
def test_found_points_classify_on_manifold(seed, name):
    ctx = context(name)
    for p in perturbed_manifold_points(ctx.model, np.random.default_rng(seed), 2):
        assert classify_point(ctx, p, 1e-9).on_manifold


def test_echo_compatible_point_is_on_manifold():
    m = model("echo")
    p = echo_compatible_point(0.2)
    cls = classify_point(context("echo"), p)
    assert cls.on_manifold and cls.residuals["det"] == pytest.approx(1.0, abs=1e-12)
    assert m.in_domain(p)


# --------------------------------------------------------------------------- history


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_history_scalar_and_vector_paths_agree(seed):
    rng = np.random.default_rng(seed)
    phi = random_segment(rng, 1.0, 2)
    hist = History(phi, 0.1, 20)
    hist.append(phi.values[:, -1], phi.slopes[:, -1])
    for _ in range(10):
        hist.append(rng.normal(size=2), rng.normal(size=2))
    t = rng.uniform(-1.0, hist.t_last, 40)
    v, s = hist.eval(t)
    for c, tt in enumerate(t):
        pv, ps = hist.point(float(tt))
        assert np.max(np.abs(pv - v[:, c])) <= 1e-14 and np.max(np.abs(ps - s[:, c])) <= 1e-13


# --------------------------------------------------------------------------- integration


def test_equilibrium_stays_put():
    m = model("echo")
    p0 = find_manifold_point(m, documented_seed("echo"))
    tr = integrate(m, p0, 2.0, 0.01)
    assert tr.status == "ok"
    # the start point comes from a search at tolerance 1e-10; later delays are exact
    assert np.all(tr.x == 0) and abs(tr.r[0, 0] + 1.0) <= 1e-10 and np.all(tr.r[1:] == -1.0)
    assert max(tr.res_delta[1:]) == 0.0 and max(tr.res_ode) <= 1e-14
    for c in trajectory_residuals(m, tr, checks=20, delta_tol=1e-10, ode_tol=1e-14):
        assert c.passed, c.line()


@pytest.fixture(scope="module")
def echo_run():
    m = model("echo")
    return m, integrate(m, echo_compatible_point(0.2), 4.0, 0.01)


def test_generic_run_residuals(echo_run):
    m, tr = echo_run
    assert tr.status == "ok" and tr.t_e == pytest.approx(4.0)
    assert max(tr.res_delta) <= 1e-7 and max(tr.res_ode) <= 1e-6
    for c in trajectory_residuals(m, tr):
        assert c.passed, c.line()


def test_solution_is_globally_C1(echo_run):
    m, tr = echo_run
    rec = trajectory_residuals(m, tr)[-1]
    assert rec.worst <= 1e-9 and rec.detail["slope_jump_near_nodes"] <= 1e-10


def test_delay_continuous_along_run(echo_run):
    _, tr = echo_run
    assert np.max(np.abs(np.diff(tr.r[:, 0]))) / tr.dt <= 1.0


def test_pair_short_run():
    m = model("pair")
    p0 = perturbed_manifold_points(m, np.random.default_rng(1), 1)[0]
    dt = m.delta_min / 20
    tr = integrate(m, p0, 200 * dt, dt)
    assert tr.status == "ok"
    for c in trajectory_residuals(m, tr, checks=20):
        assert c.passed, c.line()


def test_order_against_fine_reference():
    m = model("echo")
    p0 = echo_compatible_point(0.2)
    ref = integrate(m, p0, 2.0, 5e-4)
    errs = []
    for dt in (0.02, 0.01):
        tr = integrate(m, p0, 2.0, dt)
        idx = np.round(tr.t / ref.dt).astype(int)
        errs.append(np.max(np.abs(tr.x - ref.x[idx])))
    assert np.log2(errs[0] / errs[1]) >= 3.5


def test_step_guard():
    m = model("echo")
    with pytest.raises(ValueError, match="delta_min/4"):
        integrate(m, echo_compatible_point(), 1.0, 0.05)


def test_start_must_be_on_manifold():
    m = model("echo")
    off = StatePoint(np.array([-1.0]), make_vector_segment(2.0, 64, [lambda t: 0.1 + 0 * t], [lambda t: 0 * t]))
    with pytest.raises(DomainError, match="not on the manifold"):
        integrate(m, off, 1.0, 0.01)


def test_csv_and_sidecar(tmp_path, echo_run):
    _, tr = echo_run
    path = tmp_path / "run.csv"
    tr.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x_1", "dx_1", "r_1", "res_delta", "res_ode"]
    assert len(rows) == len(tr.t) + 1
    assert float(rows[5][1]) == tr.x[4, 0]
    write_sidecar(tr, tmp_path / "run.json", {"seed": 42})
    side = json.loads((tmp_path / "run.json").read_text())
    assert side["seed"] == 42 and side["max_res_delta"] == float(max(tr.res_delta))
