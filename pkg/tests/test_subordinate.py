import math

import numpy as np
import pytest

from subgeo import rates as R
from subgeo.simulate import SubordinatorSpec
from subgeo.subordinate import SubordinatedRate, curve_csv, subordinate_curve, subordinate_rate

GAMMA11 = SubordinatorSpec("gamma", a=1.0, b=1.0)


def expo(lam):
    return lambda s: np.exp(-lam * np.asarray(s, dtype=float))


def poly(q):
    return lambda s: (1.0 + np.asarray(s, dtype=float)) ** (-q)


@pytest.mark.parametrize("lam, a, b", [(1.0, 1.0, 1.0), (0.5, 2.0, 3.0)])
@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_exponential_rate_through_gamma_subordinator(lam, a, b, t):
    sr = SubordinatedRate(expo(lam), SubordinatorSpec("gamma", a=a, b=b), n=100_000, seed=3)
    est = subordinate_rate(sr, t)
    exact = (1 + lam / b) ** (-a * t)
    assert abs(est.value - exact) <= 3 * est.se
    assert not est.heavy_tail


def test_density_quadrature_is_exact_for_exponential_rate():
    sr = SubordinatedRate(expo(1.0), GAMMA11, method="density_quadrature")
    for t in (0.3, 1.0, 4.0):
        assert subordinate_rate(sr, t).value == pytest.approx(2.0 ** -t, rel=1e-9)


def test_drift_only_is_a_deterministic_time_change():
    r = R.rate_from_name("power(0.5)")
    sr = SubordinatedRate(r, SubordinatorSpec("drift_only", b=2.5))
    est = subordinate_rate(sr, 3.0)
    assert est.value == float(r(7.5)) and est.se == 0.0


def test_zero_rate_compound_poisson_reduces_bitwise():
    r = poly(1.5)
    a = subordinate_rate(SubordinatedRate(r, SubordinatorSpec("compound_poisson", b=0.7, lam=0.0)), 2.0)
    b = subordinate_rate(SubordinatedRate(r, SubordinatorSpec("drift_only", b=0.7)), 2.0)
    assert a.value == b.value == float(r(1.4))


@pytest.mark.parametrize("r, spec, p", [
    (poly(1.0), GAMMA11, 2.0),
    (expo(1.0), GAMMA11, 2.0),
    (poly(0.5), SubordinatorSpec("gamma", a=0.5, b=2.0), 1.0),
    (expo(0.3), SubordinatorSpec("gamma", a=3.0, b=1.0), 1.5),
])
def test_monte_carlo_agrees_with_quadrature(r, spec, p):
    mc = subordinate_rate(SubordinatedRate(r, spec, p=p, n=100_000, seed=1), 2.0)
    qd = subordinate_rate(SubordinatedRate(r, spec, p=p, method="density_quadrature"), 2.0)
    assert abs(mc.value - qd.value) <= 3 * mc.se


def test_p_two_dominates_p_one():
    times = np.array([0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
    for r in (expo(1.0), poly(2.0)):
        v1, _, _ = subordinate_curve(SubordinatedRate(r, GAMMA11, p=1.0, seed=4), times)
        v2, _, _ = subordinate_curve(SubordinatedRate(r, GAMMA11, p=2.0, seed=4), times)
        # same samples on both sides, so Jensen holds exactly
        assert np.all(v2 >= v1)


def test_compound_poisson_laplace_identity():
    spec = SubordinatorSpec.exponential_jumps(2.0, 0.5, b=0.1)
    est = subordinate_rate(SubordinatedRate(expo(1.0), spec, n=100_000, seed=6), 1.5)
    assert abs(est.value - math.exp(-1.5 * float(spec.bernstein(1.0)))) <= 3 * est.se


def test_output_non_negative_and_monotone_for_decreasing_rate():
    v, se, _ = subordinate_curve(SubordinatedRate(poly(1.0), GAMMA11, method="density_quadrature"),
                                 np.linspace(0, 10, 21))
    assert np.all(v >= 0) and np.all(np.diff(v) <= 0) and np.all(se == 0)


def test_heavy_tail_flag():
    sr = SubordinatedRate(lambda s: np.exp(3.0 * np.asarray(s)), GAMMA11, n=10_000)
    assert subordinate_rate(sr, 1.0).heavy_tail


def test_argument_validation():
    with pytest.raises(ValueError):
        SubordinatedRate(expo(1.0), GAMMA11, p=0.5)
    with pytest.raises(ValueError):
        SubordinatedRate(expo(1.0), SubordinatorSpec.exponential_jumps(1.0, 1.0), method="density_quadrature")
    with pytest.raises(ValueError):
        subordinate_rate(SubordinatedRate(expo(1.0), GAMMA11), -1.0)


def test_curve_csv():
    text = curve_csv([0.0, 1.0], [1.0, 0.5], [0.0, 0.01])
    assert text.splitlines()[0] == "t,r_phi,se"
    assert text.splitlines()[2] == "1.0,0.5,0.01"
