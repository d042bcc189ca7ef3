from __future__ import annotations

import math

import numpy as np
import pytest
from helpers import hoelder, ou_set, scalar_set
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate

from levy_picard.errors import DomainError, InputDomainError, NoCertificateError
from levy_picard.moduli import StepFunction, linear_modulus, log_modulus, loglog_modulus, power_modulus
from levy_picard.noise import TimeGrid
from levy_picard.scenarios import build_scenario
from levy_picard.stability import (BihariBound, GTable, bihari_bound, bihari_G, bihari_G_inv,
                                   delta_for_epsilon, kappa3_scale, mean_square_stability_test)

E = math.e
LIN, LOG, LOGLOG, POW = linear_modulus(), log_modulus(), loglog_modulus(), power_modulus(p=0.75)


def g_log_closed(q):
    """G for kappa(q) = q ln(1/q) with the flat continuation above 1/e."""
    if q <= 1 / E:
        return -(E - 1) - math.log(math.log(1 / q))
    return E * (q - 1)


def kappa_log_scalar(u):
    return u * math.log(1 / u) if u <= 1 / E else 1 / E


# G -------------------------------------------------------------------------

def test_G_linear():
    assert bihari_G(LIN, E) == pytest.approx(1.0, abs=1e-9)
    assert bihari_G(LIN, 1e-5) == pytest.approx(math.log(1e-5), rel=1e-10)


@pytest.mark.parametrize("mod", [LIN, LOG, LOGLOG, POW])
def test_G_vanishes_at_one(mod):
    assert bihari_G(mod, 1.0) == 0.0


@pytest.mark.parametrize("q", [E**-E, 1e-3, 1e-12, 0.2, 0.9, 5.0])
def test_G_log_modulus_closed_form(q):
    assert bihari_G(LOG, q) == pytest.approx(g_log_closed(q), abs=1e-8)


def test_G_power_closed_form():
    for q in (1e-8, 0.3, 2.0):
        assert bihari_G(POW, q) == pytest.approx(4 * (q**0.25 - 1), abs=1e-9)


def test_G_rejects_nonpositive():
    with pytest.raises(InputDomainError):
        bihari_G(LIN, 0.0)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(1e-250, 1e10), b=st.floats(1e-250, 1e10),
       which=st.sampled_from([0, 1, 2, 3]))
def test_G_strictly_increasing(a, b, which):
    assume(b > a * (1 + 1e-6))
    mod = [LIN, LOG, LOGLOG, POW][which]
    assert bihari_G(mod, b) > bihari_G(mod, a)


def test_G_table_refinement_stable():
    coarse = GTable(LOG, tol=1e-8, panel=2.0)
    fine = GTable(LOG, tol=1e-12, panel=0.5)
    for q in (1e-200, 1e-9, 0.01, 3.0):
        assert coarse.G(q) == pytest.approx(fine.G(q), abs=1e-7)


# G^-1 ------------------------------------------------------------------------

def test_G_inv_linear():
    assert bihari_G_inv(LIN, 1.0) == pytest.approx(E, rel=1e-8)


@pytest.mark.parametrize("mod", [LIN, LOG, LOGLOG, POW])
@pytest.mark.parametrize("q", [1e-6, 1.0, 10.0])
def test_G_roundtrip(mod, q):
    assert bihari_G_inv(mod, bihari_G(mod, q)) == pytest.approx(q, rel=1e-8)


@pytest.mark.parametrize("mod", [LIN, LOG, POW])
@pytest.mark.parametrize("x", [-3.0, -0.5, 0.7, 4.0])
def test_G_of_G_inv(mod, x):
    assert bihari_G(mod, bihari_G_inv(mod, x)) == pytest.approx(x, abs=1e-8)


def test_G_inv_power_below_range():
    # G(q) = 4 (q^(1/4) - 1) is bounded below by -4.
    with pytest.raises(DomainError):
        bihari_G_inv(POW, -4.1)
    with pytest.raises(DomainError):
        bihari_G_inv(LIN, math.nan)


# bihari_bound ------------------------------------------------------------------

def test_gronwall_example():
    assert bihari_bound(0.01, 1.0, LIN, 2.0) == pytest.approx(0.01 * E**2, rel=1e-8)
    assert bihari_bound(0.01, 1.0, LIN, 2.0) == pytest.approx(0.073891, abs=1e-6)


@pytest.mark.parametrize("u0", [1e-6, 1e-4, 1e-3, 1e-1, 1.0])
@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 2.0])
def test_gronwall_specialization(u0, t):
    assert bihari_bound(u0, 1.0, LIN, t) == pytest.approx(u0 * math.exp(t), rel=1e-8)


def test_bihari_with_step_function_v():
    v = StepFunction([0.0, 1.0], [2.0, 0.5])
    assert bihari_bound(0.1, v, LIN, 1.5) == pytest.approx(0.1 * math.exp(2.0 + 0.25), rel=1e-8)


def test_bihari_zero_start_osgood():
    for mod in (LIN, LOG, LOGLOG):
        assert bihari_bound(0.0, 1.0, mod, 3.0) == 0.0


def test_bihari_zero_start_non_osgood_is_positive():
    # u' = q^(3/4) leaves 0: G^-1(-4 + t) = (t / 4)^4.
    assert bihari_bound(0.0, 1.0, POW, 2.0) == pytest.approx((2.0 / 4) ** 4, rel=1e-6)


def test_bihari_rejects_negative_inputs():
    with pytest.raises(InputDomainError):
        bihari_bound(-1.0, 1.0, LIN, 1.0)
    with pytest.raises(InputDomainError):
        bihari_bound(1.0, -1.0, LIN, 1.0)


def rk4_flow(u0, t_end, h):
    n = int(round(t_end / h))
    u = u0
    f = kappa_log_scalar
    for _ in range(n):
        k1 = f(u)
        k2 = f(u + 0.5 * h * k1)
        k3 = f(u + 0.5 * h * k2)
        k4 = f(u + h * k3)
        u += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    return u


def test_bihari_log_modulus_is_ode_flow():
    u0 = 1e-6
    expect = rk4_flow(u0, 1.0, 1e-5)
    assert bihari_bound(u0, 1.0, LOG, 1.0) == pytest.approx(expect, rel=1e-7)


def test_bihari_bound_object():
    bb = BihariBound(POW, 0.0, 1.0)
    assert bb.valid_until(2.0)
    assert bb(2.0) == pytest.approx(bihari_bound(0.0, 1.0, POW, 2.0))


@settings(max_examples=40, deadline=None)
@given(u0=st.floats(1e-8, 10.0), du=st.floats(0, 5.0), t=st.floats(0, 3.0), dt=st.floats(0, 1.0),
       v=st.floats(0, 2.0), dv=st.floats(0, 1.0), which=st.sampled_from([0, 1, 2]))
def test_bihari_monotone_in_arguments(u0, du, t, dt, v, dv, which):
    mod = [LIN, LOG, LOGLOG][which]
    base = bihari_bound(u0, v, mod, t)
    tol = 1e-9 * max(1.0, base)
    assert bihari_bound(u0 + du, v, mod, t) >= base - tol
    assert bihari_bound(u0, v, mod, t + dt) >= base - tol
    assert bihari_bound(u0, v + dv, mod, t) >= base - tol


@settings(max_examples=40, deadline=None)
@given(u0=st.floats(1e-10, 0.5), eps_factor=st.floats(1.0, 100.0), frac=st.floats(0.0, 1.0),
       which=st.sampled_from([0, 1, 2, 3]))
def test_bound_stays_below_eps_within_budget(u0, eps_factor, frac, which):
    mod = [LIN, LOG, LOGLOG, POW][which]
    eps = u0 * eps_factor
    budget = bihari_G(mod, eps) - bihari_G(mod, u0)
    assert bihari_bound(u0, frac * budget, mod, 1.0) <= eps + 1e-8


# delta(eps) ---------------------------------------------------------------------

@pytest.mark.parametrize("lam", [1 / 16, 0.1, 0.5])
@pytest.mark.parametrize("T", [0.5, 1.0])
@pytest.mark.parametrize("eps", [0.1, 1.0, 2.0])
def test_delta_linear_closed_form(lam, T, eps):
    mod = linear_modulus(lam)
    c = 16 * T * lam
    assert kappa3_scale(mod, T) == pytest.approx(c)
    assert delta_for_epsilon(mod, T, eps) == pytest.approx(eps / 2 * math.exp(-c * T), rel=1e-6)


def test_delta_linear_example():
    # kappa_3(q) = q, T = 1, eps = 2 gives delta = 1/e.
    assert delta_for_epsilon(linear_modulus(1 / 16), 1.0, 2.0) == pytest.approx(1 / E, rel=1e-6)


@pytest.mark.parametrize("eps", [0.1, 1.0, 2.0])
def test_delta_log_modulus_requadrature(eps):
    T = 1.0
    mod = log_modulus(1 / 16)
    c = kappa3_scale(mod, T)
    delta = delta_for_epsilon(mod, T, eps)
    assert delta < eps / 2
    # Independent plain-variable quadrature, split at the knee.
    pts = [p for p in (1 / E,) if delta < p < eps / 2]
    val, _ = integrate.quad(lambda q: 1.0 / (c * kappa_log_scalar(q)), delta, eps / 2,
                            points=pts or None, epsabs=1e-13, epsrel=1e-12, limit=400)
    assert T - 1e-10 <= val <= T + 1e-4
    closed = (g_log_closed(eps / 2) - g_log_closed(delta)) / c
    assert T - 1e-10 <= closed <= T + 1e-4


@settings(max_examples=30, deadline=None)
@given(e1=st.floats(1e-3, 10.0), e2=st.floats(1e-3, 10.0), which=st.sampled_from([0, 1]))
def test_delta_nondecreasing_in_eps(e1, e2, which):
    mod = [linear_modulus(0.1), log_modulus(1 / 16)][which]
    lo, hi = sorted((e1, e2))
    assert delta_for_epsilon(mod, 1.0, lo) <= delta_for_epsilon(mod, 1.0, hi) * (1 + 1e-9)


def test_delta_non_osgood_no_certificate():
    with pytest.raises(NoCertificateError):
        delta_for_epsilon(power_modulus(1.0, p=0.75), 1.0, 1e-3)


def test_delta_underflow_no_certificate():
    with pytest.raises(NoCertificateError, match="underflow"):
        delta_for_epsilon(log_modulus(1.0), 1.0, 1.0)


def test_delta_rejects_bad_input():
    with pytest.raises(InputDomainError):
        delta_for_epsilon(LIN, 1.0, 0.0)


# empirical stability -------------------------------------------------------------

def test_stability_identical_initial_values():
    cs = ou_set()
    rep = mean_square_stability_test(cs, [1.0], [1.0], TimeGrid(1.0, 64), 50, eps=0.1)
    assert rep.estimate == 0.0 and rep.se == 0.0 and rep.passed


def test_stability_zero_coefficients():
    cs = build_scenario("zero")
    rep = mean_square_stability_test(cs, [1.0], [1.25], TimeGrid(1.0, 16), 8, eps=1.0)
    assert rep.estimate == 0.0625 and rep.se == 0.0
    assert rep.initial_gap == 0.0625 and rep.initial_gap_x4 == 0.25
    assert rep.delta < 0.5


def test_stability_ou_gap_inside_certificate():
    cs = ou_set()
    grid = TimeGrid(1.0, 256)
    eps = 0.5
    delta = delta_for_epsilon(cs.modulus, 1.0, eps)
    g = math.sqrt(delta / 8)
    rep = mean_square_stability_test(cs, [1.0], [1.0 + g], grid, 200, eps=eps, seed=3)
    assert rep.precondition_held and rep.passed and rep.certificate_applicable
    half = mean_square_stability_test(cs, [1.0], [1.0 + g / 2], grid, 200, eps=eps, seed=3)
    # Linear SDE: the coupled difference scales exactly with the squared gap.
    assert half.estimate == pytest.approx(rep.estimate / 4, rel=1e-6)


def test_stability_bound_dominance():
    cs = ou_set()
    grid = TimeGrid(1.0, 128)
    g = 1e-3
    rep = mean_square_stability_test(cs, [1.0], [1.0 + g], grid, 100, eps=1.0, seed=2)
    k3 = linear_modulus(kappa3_scale(cs.modulus, 1.0))
    assert rep.estimate <= bihari_bound(rep.initial_gap_x4, 1.0, k3, 1.0) + 5 * rep.se


def test_stability_marks_inapplicable_certificate():
    cs = scalar_set(hoelder, lambda t, y: 0.1, None, xi=0.0)
    rep = mean_square_stability_test(cs, [0.0], [1e-4], TimeGrid(1.0, 32), 20, eps=1.0)
    assert not rep.certificate_applicable
    assert any("inapplicable" in n for n in rep.notes)
    assert rep.estimate >= 0 and rep.se >= 0
