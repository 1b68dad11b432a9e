import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algdelay.checks import check_chi_contract, check_chi_overlap
from algdelay.complement import (
    Bump,
    ChiField,
    Exhaustion,
    build_chi_basis,
    chi_single,
    h_g_eval,
    seed_segment,
)
from algdelay.errors import DomainError
from algdelay.expr import ExprMap
from algdelay.model import Box, CoordSelect, GSpec, ModelSpec, OffsetDelta, VDomain
from algdelay.segments import norms, odot

from scenario_cache import context, model


def scalar_g(expr, V=VDomain()):
    f = ExprMap([expr], ["v1"])
    return GSpec(1, 1, f, f.jacobian, V)


# --------------------------------------------------------------------------- h_g


def test_h_g_examples():
    g = scalar_g("-v1")
    assert h_g_eval(g, [2.0]) == pytest.approx(1 / 24, rel=1e-15)
    assert h_g_eval(g, [0.0]) == pytest.approx(1 / 12, rel=1e-15)
    box = scalar_g("0*v1", VDomain((Box.from_list([[-1, 1]]),)))
    assert h_g_eval(box, [0.9]) == pytest.approx(1 / 60, rel=1e-12)
    with pytest.raises(DomainError):
        h_g_eval(box, [1.0])


# --------------------------------------------------------------------------- basis and single-level kernel elements


@pytest.mark.parametrize("name", ["echo", "lin2"])
def test_constant_candidate_basis(name):
    b = build_chi_basis(model(name), 0)
    assert b.d_q == 1
    gamma = b.gammas[0]
    assert np.all(gamma.values == 1.0) and np.all(gamma.slopes == 0.0)
    for r in b.r_grid:
        assert abs(b.M(r)[0, 0]) == pytest.approx(1.0, abs=1e-15)
    assert b.c_tau == pytest.approx(1.0, abs=1e-15)
    assert b.c_q <= 3.0


def half_selected_model():
    """n = 2 with Q reading only the first component, so Q_2 vanishes."""
    f = ExprMap(["-v1", "-v2"], ["v1", "v2"])
    g = GSpec(1, 2, f, f.jacobian, VDomain())
    d = ExprMap(["1 + w1**2/2"], ["w1"])
    return ModelSpec("half", 2.0, 2, 1, g, CoordSelect([0], [0], 2, 1), OffsetDelta(1, d, d.jacobian, Box.from_list([[-1, 1]])))


def test_unselected_component_has_empty_basis():
    m = half_selected_model()
    b = build_chi_basis(m, 1)
    assert b.d_q == 0
    chi = chi_single(b, 0.01, [-1.0])
    assert chi.slopes[-1] == 1.0
    assert norms(chi).c_norm < 0.01
    assert np.array_equal(chi.values, seed_segment(0.9 * 0.01, m.h, chi.N).values)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2.2, 1.1), st.sampled_from([1e-2, 1e-3, 1e-4]))
def test_echo_single_level_projection(r, eps):
    b = build_chi_basis(model("echo"), 0)
    chi = chi_single(b, eps, [r])
    assert chi.slopes[-1] == 1.0
    assert abs(model("echo").q.component_value(0, np.array([r]), chi)[0]) <= 1e-15
    seed_norm = norms(seed_segment(0.9 * eps / b.seed_divisor, b.h, chi.N)).c_norm
    assert norms(chi).c_norm <= seed_norm * b.seed_divisor * (1 + 1e-12)
    assert norms(chi).c_norm < eps


# --------------------------------------------------------------------------- bumps and exhaustion


def test_bump_values_and_slopes():
    bump = Bump(Box.from_list([[-1, 1], [-2, 2]]), Box.from_list([[-1.5, 1.5], [-3, 3]]))
    assert bump([1.0, -2.0]) == (1.0, pytest.approx([0.0, 0.0]))
    assert bump([1.5, 0.0])[0] == 0.0
    rng = np.random.default_rng(0)
    bound = bump.slope_bound()
    for v in rng.uniform([-1.6, -3.1], [1.6, 3.1], (300, 2)):
        _, grad = bump(v)
        assert np.all(np.abs(grad) <= bound * (1 + 1e-12))
        for i in range(2):
            e = np.zeros(2)
            e[i] = 1e-7
            fd = (bump(v + e)[0] - bump(v - e)[0]) / 2e-7
            assert fd == pytest.approx(grad[i], abs=1e-6)


@pytest.mark.parametrize("V", [VDomain(), VDomain((Box.from_list([[-1, 1], [0, 0.05]]),))])
def test_exhaustion_is_compactly_nested(V):
    ex = Exhaustion(V, 2)
    for q in range(1, 9):
        a, b = ex.set(q), ex.set(q + 1)
        assert np.all(b.lo < a.lo) and np.all(a.hi < b.hi)
        assert np.all(b.lo > V.boxes[0].lo) if V.boxes else True


# --------------------------------------------------------------------------- glued field


def test_field_levels_are_finite_and_bounded():
    field = context("echo").field
    assert len(field.levels) == field.n_levels + 1
    assert all(b.eps <= a.eps for a, b in zip(field.levels, field.levels[1:]))
    assert all(b.A >= a.A for a, b in zip(field.levels, field.levels[1:]))
    with pytest.raises(DomainError):
        field.chi_eval(0, [-1.0], [50.0])
    json.dumps(field.to_dict())


def test_echo_origin_is_first_level_kernel_element():
    field = context("echo").field
    assert field.bump(1, [0.0])[0] == 1.0
    chi = field.chi_eval(0, [-1.0], [0.0])
    assert np.array_equal(chi.values, field.level_chi(0, 1, [-1.0]).values)
    lv = field.levels[0]
    single = chi_single(field.bases[0], lv.eps, [-1.0], N=field.N_field)
    assert np.max(np.abs(single.values - chi.values)) <= 1e-15


def test_partial_vanishes_deep_inside():
    field = context("pair").field
    v = np.zeros(4)
    for iota in range(4):
        p = field.chi_partial(0, [-0.6, -0.7], v, iota)
        assert np.all(p.values == 0) and np.all(p.slopes == 0)


@pytest.mark.parametrize("name", ["echo", "echo_box"])
def test_glued_levels_agree(name):
    c = check_chi_overlap(context(name).field, np.random.default_rng(1))
    assert c.passed, c.line()


def test_field_continuous_across_level_switch():
    field = context("echo").field
    edge = field.levels[0].outer.hi[0]
    r = [-0.8]
    left = field.coeffs(0, r, [edge - 1e-11])
    right = field.coeffs(0, r, [edge + 1e-11])
    assert field.level_of([edge - 1e-11]) == 1 and field.level_of([edge + 1e-11]) == 2
    assert field.coeff_norms(0, left - right)[1] <= 1e-8


def test_field_contract_on_echo():
    for c in check_chi_contract(context("echo").field, np.random.default_rng(2), count=500):
        assert c.passed, c.line()


def test_odot_with_field_has_prescribed_slope():
    field = context("pair").field
    chi = field.chi_vector([-0.55, -0.75], np.array([0.3, -0.2, 1.5, 0.1]))
    c = np.array([0.37, -2.5])
    assert np.array_equal(odot(chi, c).slopes[:, -1], c)


def test_component_data_built_once_under_concurrency():
    field = ChiField(model("lin2"))
    with ThreadPoolExecutor(8) as pool:
        data = list(pool.map(lambda _: field._component(0), range(16)))
    assert all(d is data[0] for d in data)
