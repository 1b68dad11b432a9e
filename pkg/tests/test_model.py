import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algdelay.errors import DomainError
from algdelay.model import (
    Box,
    ConstantL,
    CoordSelect,
    GSpec,
    ModelSpec,
    OffsetDelta,
    StatePoint,
    UserQ,
    VDomain,
    verify_hq,
)
from algdelay.checks import check_derivatives, check_q_linearity
from algdelay.sampling import random_domain_point, random_segment
from algdelay.segments import VectorSegment, constant_segment, make_vector_segment

from scenario_cache import SCENARIOS, model


def affine(h, a, b, N=64):
    return make_vector_segment(h, N, [lambda t: a + b * t], [lambda t: b + 0 * t])


def zero_point(name, r):
    m = model(name)
    return StatePoint(np.atleast_1d(r), VectorSegment.zeros(m.h, m.n))


# --------------------------------------------------------------------------- domain types


def test_box_is_open_and_rejects_empty():
    box = Box.from_list([[-1, 1]])
    assert box.contains([0.999]) and not box.contains([1.0])
    with pytest.raises(ValueError, match="empty box"):
        Box.from_list([[1, -1]])
    assert Box.from_list([[None, None]]).contains([1e300])


def test_vdomain_distance_is_face_margin():
    V = VDomain((Box.from_list([[-1, 1], [-2, 2]]),))
    assert V.dist_to_complement(np.array([0.9, 0.0])) == pytest.approx(0.1)
    assert V.dist_to_complement(np.array([2.0, 0.0])) <= 0


def test_model_validation():
    base = model("echo")
    with pytest.raises(ValueError):
        ModelSpec("bad", 2.0, 1, 1, base.g, base.q, base.delta, I=(-1.0, 0.1))
    with pytest.raises(ValueError):
        ModelSpec("bad", 2.0, 1, 1, base.g, base.q, base.delta, J=(-2.0, 0.0))


# --------------------------------------------------------------------------- G and Delta


def test_echo_G_examples():
    m = model("echo")
    assert m.G(zero_point("echo", -1.0)).tolist() == [0.0]
    # phi(t) = t is outside U (Q = -1 is on the boundary of W), so evaluate unchecked
    p = StatePoint(np.array([-1.0]), affine(2.0, 0.0, 1.0))
    assert m.hat(p.r, p.phi)[0] == pytest.approx(-1.0, abs=1e-15)
    assert m.G(p, check=False)[0] == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DomainError, match="not in W"):
        m.G(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_linear_g_scales(seed):
    m = model("pair")
    rng = np.random.default_rng(seed)
    p = random_domain_point(m, rng, scale=0.3)
    double = StatePoint(p.r, p.phi * 2.0)
    assert np.max(np.abs(m.G(double) - 2 * m.G(p))) <= 1e-14


def test_delta_examples():
    assert model("echo").Delta(zero_point("echo", -1.0)).tolist() == [0.0]
    assert model("lin2").Delta(zero_point("lin2", -0.5)).tolist() == [0.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1.05, 0.1))
def test_offset_delta_difference_is_r_difference(seed, r2):
    m = model("lin2")
    p = random_domain_point(m, np.random.default_rng(seed))
    q = StatePoint(np.array([r2]), p.phi)
    # Q is r-independent for a constant functional
    assert (m.Delta(p) - m.Delta(q))[0] == pytest.approx(p.r[0] - r2, abs=1e-15)


# --------------------------------------------------------------------------- derivatives


def test_DG_zero_direction():
    m = model("pair")
    p = random_domain_point(m, np.random.default_rng(2))
    assert np.all(m.DG(p, np.zeros(2), VectorSegment.zeros(1.0, 2)) == 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.2, 0.2), st.floats(-1, 1), st.integers(0, 1000))
def test_echo_DG_affine_closed_form(a, b, s, seed):
    m = model("echo")
    p = StatePoint(np.array([-1.0]), affine(2.0, a, b))
    psi = random_segment(np.random.default_rng(seed), 2.0, 1)
    expected = -(m.hat(p.r, psi)[0] + s * b)
    assert m.DG(p, [s], psi)[0] == pytest.approx(expected, abs=1e-14)


def test_D2Delta_zero_direction_and_chain_rule():
    m = model("lin2")
    p = random_domain_point(m, np.random.default_rng(4))
    assert m.D2Delta(p, VectorSegment.zeros(1.0, 1)).tolist() == [0.0]
    psi = random_segment(np.random.default_rng(5), 1.0, 1)
    Lphi = p.phi.eval(-0.5)[0][0]
    Lpsi = psi.eval(-0.5)[0][0]
    expected = 0.5 * (1 - np.tanh(Lphi) ** 2) * Lpsi
    assert m.D2Delta(p, psi)[0] == pytest.approx(expected, abs=1e-14)


def test_D1Delta_identity_for_explicit_delay():
    m = model("lin2")
    p = random_domain_point(m, np.random.default_rng(6))
    assert np.array_equal(m.D1Delta(p), np.eye(1))
    assert model("echo").D1Delta(zero_point("echo", -1.0)).tolist() == [[1.0]]


@pytest.mark.parametrize("name", SCENARIOS)
def test_derivatives_match_finite_differences(name):
    for c in check_derivatives(model(name), np.random.default_rng(7), count=30):
        assert c.passed, c.line()


@pytest.mark.parametrize("name", SCENARIOS)
def test_Q_linear(name):
    c = check_q_linearity(model(name), np.random.default_rng(8), count=50)
    assert c.passed, c.line()


# --------------------------------------------------------------------------- domain membership


def test_in_domain_examples():
    m = model("echo")
    assert m.in_domain(zero_point("echo", -1.0))
    out = m.in_domain(zero_point("echo", m.I[0]))
    assert not out and out.reason == "r not in I^k"
    two = StatePoint(np.array([-1.0]), constant_segment(2.0, [2.0]))
    chk = m.in_domain(two)
    assert not chk and "not in W" in chk.reason


# --------------------------------------------------------------------------- (Hq)


@pytest.mark.parametrize("name", SCENARIOS + ("echo_box",))
def test_builtins_satisfy_hq(name):
    c = verify_hq(model(name))
    assert c.passed and c.worst >= 1e-8, c.line()


def test_coord_select_constant_beta_gives_unit_vector():
    m = model("pair")
    one = constant_segment(1.0, [1.0], 8).component(0)
    for r in m.r_grid(5):
        assert m.q.component_value(1, r, one, m.J).tolist() == [0.0, 1.0]


def test_constant_l_images_independent_of_r():
    q = ConstantL([[(1.0, 0, -0.5)], [(2.0, 0, -0.1), (1.0, 1, -0.9)]], 2, 1)
    phi = random_segment(np.random.default_rng(9), 1.0, 2)
    a = q.value(np.array([-1.0]), phi)
    b = q.value(np.array([0.05]), phi)
    assert np.array_equal(a, b)


def test_degenerate_user_basis_fails_hq():
    echo = model("echo")
    h = echo.h

    def fn(r, phi):
        return [phi.eval_extension(r[0])[0][0]]

    q = UserQ(fn, 1, 1, 1, betas=[[(lambda t: 0 * t, lambda t: 0 * t)]], opnorm=[3.0])
    m = ModelSpec("broken", h, 1, 1, echo.g, q, echo.delta)
    c = verify_hq(m, 5)
    assert not c.passed and c.worst == 0.0


def test_statepoint_round_trip():
    p = random_domain_point(model("pair"), np.random.default_rng(10))
    back = StatePoint.from_dict(p.to_dict())
    assert np.array_equal(back.r, p.r) and np.array_equal(back.phi.values, p.phi.values)


def test_coord_select_requires_injective_pairs():
    with pytest.raises(ValueError):
        CoordSelect([0, 0], [0, 0], 1, 1)


def test_gspec_dimensions_checked():
    echo = model("echo")
    g = GSpec(2, 1, echo.g.value, echo.g.jacobian, echo.g.V)
    with pytest.raises(ValueError):
        ModelSpec("bad", 2.0, 1, 1, g, echo.q, echo.delta)
    assert isinstance(echo.delta, OffsetDelta)
