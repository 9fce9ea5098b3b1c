import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subgeo import rates as R
from subgeo.quadrature import QuadratureError

from .reference import frozen, phi_big_oracle, psi_big_oracle, rk4


def mod(psi="identity", Gamma=1.0, gamma=10.0, f="identity"):
    return R.ModulusPair.from_names(f, psi, gamma, Gamma)


# -- Phi -------------------------------------------------------------------------

def test_phi_big_sqrt_closed_form():
    assert R.phi_big(R.rate_from_name("power(0.5)"), 4.0) == pytest.approx(2.0, abs=1e-12)


def test_phi_big_identity_is_log():
    assert R.phi_big(R.rate_from_name("identity"), math.e) == pytest.approx(1.0, abs=1e-12)
    assert R.phi_big(R.rate_from_name("identity"), 1.0) == 0.0


def test_phi_big_against_half_step_simpson():
    a = 0.75
    ref = phi_big_oracle(lambda s: s ** a, 10.0)
    assert abs(R.phi_big(R.rate_from_name("power(0.75)"), 10.0) - ref) <= 1e-10


@pytest.mark.parametrize("t, expected", [(t, v) for t, v in frozen()["phi_big_log"]])
def test_phi_big_log_rate_frozen(t, expected):
    assert R.phi_big(R.rate_from_name("log"), t) == pytest.approx(expected, rel=1e-11)


def test_phi_big_rejects_t_below_one():
    with pytest.raises(ValueError):
        R.phi_big(R.rate_from_name("power(0.5)"), 0.5)


def test_phi_big_reports_non_finite_abscissa():
    bad = R.RateFunction(lambda t: np.where(np.asarray(t) > 2.0, np.nan, 1.0), label="bad")
    with pytest.raises(QuadratureError):
        R.phi_big(bad, 5.0)


def test_phi_big_inv_closed_forms():
    r = R.rate_from_name("power(0.5)")
    assert R.phi_big_inv(r, 2.0) == pytest.approx(4.0, rel=1e-12)
    assert R.phi_big_inv(r, 0.0) == 1.0


def test_phi_big_inv_log_rate_residual():
    r = R.rate_from_name("log")
    t = R.phi_big_inv(r, 3.0)
    assert abs(R.phi_big(r, t) - 3.0) <= 1e-10


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_phi_big_inv_range_error_names_largest_value():
    # phi(t) = t^2 is not concave, but the integral is bounded by 1
    r = R.RateFunction(lambda t: np.asarray(t, dtype=float) ** 2, label="square")
    with pytest.raises(R.RateRangeError) as info:
        R.phi_big_inv(r, 2.0)
    assert info.value.largest == pytest.approx(1.0, rel=1e-6)


def test_tv_rate_examples():
    r = R.rate_from_name("power(0.5)")
    assert R.tv_rate_at(r, 2.0) == pytest.approx(2.0, rel=1e-12)
    assert R.tv_rate_at(r, 0.0) == 1.0


@pytest.mark.parametrize("name", ["power(0.25)", "power(0.5)", "power(0.9)", "log", "identity"])
def test_builtin_rates_satisfy_invariants(name):
    assert R.rate_from_name(name).check() == []


def test_rate_check_flags_convex_function():
    r = R.RateFunction(lambda t: np.asarray(t, dtype=float) ** 2)
    assert any("concave" in p for p in r.check())


@given(name=st.sampled_from(["power(0.3)", "power(0.5)", "power(0.8)", "log", "identity"]),
       t=st.floats(1.0, 1e3))
def test_phi_inverse_round_trip(name, t):
    r = R.rate_from_name(name)
    u = R.phi_big(r, t)
    assert R.phi_big_inv(r, u) == pytest.approx(t, rel=1e-8, abs=1e-8)


@given(a=st.floats(1.0, 500.0), b=st.floats(1.0, 500.0))
def test_phi_big_strictly_increasing(a, b):
    r = R.rate_from_name("power(0.5)")
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert R.phi_big(r, lo) < R.phi_big(r, hi)


# -- Psi -------------------------------------------------------------------------

def test_psi_big_closed_forms():
    assert R.psi_big(mod("identity"), 1.0, math.exp(-1)) == pytest.approx(1.0, abs=1e-12)
    assert R.psi_big(mod("power(2)"), 2.0, 1.0) == pytest.approx(0.5, abs=1e-12)
    assert R.psi_big(mod("power(2)"), 2.0, 2.0) == 0.0


def test_psi_big_log_against_half_step_simpson():
    ref = psi_big_oracle(lambda s: s * np.log1p(s), 3.0, 0.5)
    assert abs(R.psi_big(mod("log"), 3.0, 0.5) - ref) <= 1e-10


@pytest.mark.parametrize("kappa, t, expected", [tuple(v) for v in frozen()["psi_big_log"]])
def test_psi_big_log_frozen(kappa, t, expected):
    assert R.psi_big(mod("log"), kappa, t) == pytest.approx(expected, rel=1e-11)


def test_psi_big_infinite_kappa():
    # int_t^inf ds / s^2 = 1/t
    assert R.psi_big(mod("power(2)"), math.inf, 0.5) == pytest.approx(2.0, rel=1e-8)
    with pytest.raises(R.DivergenceError):
        R.psi_big(mod("identity"), math.inf, 0.5)


def test_psi_big_rejects_bad_arguments():
    with pytest.raises(ValueError):
        R.psi_big(mod("power(2)"), 1.0, 2.0)


def test_psi_big_inv_closed_forms():
    m = mod("power(2)", Gamma=1.0)
    for u in (0.0, 0.3, 5.0, 100.0):
        assert R.psi_big_inv(m, 1.0, u) == pytest.approx(1.0 / (1.0 + u), rel=1e-10)
        assert R.psi_big_inv(mod("identity"), 2.0, u) == pytest.approx(2.0 * math.exp(-u), rel=1e-10)


def test_psi_big_inv_infinite_kappa_square():
    # Psi_inf(t) = 1/t, so the inverse is 1/u
    assert R.psi_big_inv(mod("power(2)"), math.inf, 4.0) == pytest.approx(0.25, rel=1e-8)


@pytest.mark.parametrize("kappa", [0.5, 2.0, 100.0])
def test_psi_inverse_square_asymptotics(kappa):
    t = 1e4
    assert abs(t * R.psi_big_inv(mod("power(2)"), kappa, t) - 1.0) <= 1e-3


def test_psi_big_blows_up_near_zero():
    for name in ("identity", "power(2)", "log"):
        assert R.psi_big(mod(name), 1.0, 1e-12) > 20.0


@given(u1=st.floats(0.0, 50.0), u2=st.floats(0.0, 50.0), k=st.floats(0.1, 10.0))
def test_psi_inverse_monotone_in_u(u1, u2, k):
    m = mod("log")
    lo, hi = sorted((u1, u2))
    assert R.psi_big_inv(m, k, hi) <= R.psi_big_inv(m, k, lo) * (1 + 1e-12)


@given(k1=st.floats(0.1, 10.0), k2=st.floats(0.1, 10.0), u=st.floats(0.0, 20.0))
def test_psi_inverse_monotone_in_kappa(k1, k2, u):
    m = mod("power(1.5)")
    lo, hi = sorted((k1, k2))
    assert R.psi_big_inv(m, lo, u) <= R.psi_big_inv(m, hi, u) * (1 + 1e-10)


# -- Gronwall --------------------------------------------------------------------

def test_gronwall_identity_is_exponential():
    c = R.gronwall_bound(mod("identity", Gamma=1.0), 1.0, 5.0, 51)
    assert c.bound_values[0] == 1.0
    assert np.max(np.abs(c.bound_values - np.exp(-c.times))) <= 1e-10
    assert c.bound_values[10] == pytest.approx(math.exp(-1.0), abs=1e-12)


def test_gronwall_square_matches_rk4():
    c = R.gronwall_bound(mod("power(2)", Gamma=2.0), 1.0, 10.0, 101)
    t, y = rk4(lambda s, f: -2.0 * f * f, 1.0, 10.0, 20000)
    ref = np.interp(c.times, t, y)
    assert np.max(np.abs(c.bound_values - ref)) <= 1e-6
    assert np.max(np.abs(c.bound_values - 1.0 / (1.0 + 2.0 * c.times))) <= 1e-6


def test_gronwall_log_psi_frozen_ode():
    g = frozen()["gronwall_log"]
    m = mod("log", Gamma=g["Gamma"])
    inv = [R.psi_big_inv(m, g["f0"], g["Gamma"] * t) for t in g["times"]]
    assert np.allclose(inv, g["values"], rtol=1e-9, atol=0)


@pytest.mark.parametrize("psi", ["identity", "power(1.5)", "power(2)", "power(3)", "log"])
def test_ode_never_exceeds_gronwall_bound(psi):
    m = mod(psi, Gamma=0.8)
    c = R.gronwall_bound(m, 2.0, 8.0, 81)
    t, y = rk4(lambda s, f: -0.8 * float(m.psi(np.array([f]))[0]), 2.0, 8.0, 8000)
    assert np.max(np.interp(c.times, t, y) - c.bound_values) <= 1e-6


def test_gronwall_curve_is_positive_and_non_increasing():
    c = R.gronwall_bound(mod("power(2)"), 3.0, 50.0, 201)
    assert np.all(c.bound_values > 0)
    assert np.all(np.diff(c.bound_values) <= 0)


def test_verify_gronwall_exact_solution_has_no_excess():
    t = np.linspace(0, 10, 201)
    rep = R.verify_gronwall(t, 1.0 / (1.0 + 2.0 * t), mod("power(2)", Gamma=2.0), 1.0)
    assert rep.max_excess <= 1e-8
    assert not rep.violated


def test_verify_gronwall_flags_constant_series():
    t = np.linspace(0, 1, 11)
    rep = R.verify_gronwall(t, np.ones_like(t), mod("power(2)", Gamma=2.0), 1.0)
    assert rep.violated and rep.time_of_max > 0
    assert rep.max_slope_excess > 0


def test_verify_gronwall_rejects_empty_series():
    with pytest.raises(ValueError):
        R.verify_gronwall([], [], mod(), 1.0)


# -- modulus pairs and Wasserstein bounds ------------------------------------------------

def test_modulus_pair_rejects_concave_psi():
    with pytest.raises(ValueError):
        R.ModulusPair(lambda t: np.asarray(t, dtype=float), lambda s: np.sqrt(s), 1.0, 1.0)


def test_modulus_pair_rejects_non_concave_f():
    with pytest.raises(ValueError):
        R.ModulusPair(lambda t: np.asarray(t, dtype=float) ** 2, lambda s: np.asarray(s, dtype=float), 1.0, 1.0)


def test_chaining_delta_for_identity():
    # f(1/t) <= gamma  <=>  t >= 1/gamma
    assert R.chaining_delta(mod(gamma=0.5)) == pytest.approx(2.0, rel=1e-12)


def test_wasserstein_bound_chains_far_pairs():
    m = mod("identity", gamma=0.5, Gamma=1.0)
    mult, k, vals = R.wasserstein_bound(m, [0.0], [3.0], [0.0, 1.0])
    assert mult == 6 and k == 0.5
    assert vals == pytest.approx([3.0, 3.0 * math.exp(-1.0)], rel=1e-10)


def test_wasserstein_bound_same_point_is_zero():
    mult, k, vals = R.wasserstein_bound(mod(), [1.0], [1.0], [0.0, 2.0])
    assert np.all(vals == 0)
