import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from subgeo import distance as D
from subgeo import models
from subgeo import rates as R
from subgeo import simulate as S

from .reference import brute_force_wasserstein


def clouds(n, dim=1):
    return arrays(np.float64, (n, dim), elements=st.floats(-50, 50, allow_nan=False, width=64))


# -- Wasserstein -----------------------------------------------------------------

def test_identical_samples_have_zero_distance():
    x = np.random.default_rng(0).normal(size=50)
    assert D.wasserstein_1d(x, x, 2) == 0.0
    assert D.wasserstein_assignment(x[:, None], x[:, None], 2) == 0.0


def test_translation_by_one():
    assert D.wasserstein_1d(np.zeros(10), np.ones(10), p=2) == 1.0


def test_single_pair_is_euclidean_distance():
    assert D.wasserstein_assignment([[0.0, 0.0]], [[3.0, 4.0]], p=3) == pytest.approx(5.0, rel=1e-15)


def test_rigid_translation_in_two_dimensions():
    g = np.random.default_rng(1)
    x = g.normal(size=(40, 2)) * 0.1
    shift = np.array([3.0, -4.0])
    # points are well separated relative to the spread, so the identity pairing is optimal
    assert D.wasserstein_assignment(x, x + shift, p=2) == pytest.approx(5.0, abs=1e-12)


def test_one_dimensional_methods_agree_on_random_pairs():
    g = np.random.default_rng(2)
    for _ in range(256):
        x, y = g.normal(size=64), g.normal(1.0, 2.0, size=64)
        p = g.choice([1.0, 2.0, 3.0])
        assert abs(D.wasserstein_1d(x, y, p) - D.wasserstein_assignment(x[:, None], y[:, None], p)) <= 1e-12


@pytest.mark.parametrize("dim, p", [(1, 1.0), (2, 2.0), (3, 1.5)])
def test_assignment_against_permutation_oracle(dim, p):
    g = np.random.default_rng(dim)
    x, y = g.normal(size=(6, dim)), g.normal(size=(6, dim))
    assert D.wasserstein_assignment(x, y, p) == pytest.approx(brute_force_wasserstein(x, y, p), rel=1e-13)


def test_weighted_quantile_coupling():
    # mass 1/2 at 0 and 1/2 at 1 against a point mass at 0.5
    mu = D.EmpiricalMeasure(np.array([0.0, 1.0]))
    nu = D.EmpiricalMeasure(np.array([0.5, 7.0]), np.array([1.0, 0.0]))
    assert D.wasserstein_1d(mu, nu, 1) == pytest.approx(0.5, abs=1e-15)
    assert D.wasserstein_1d(mu, nu, 2) == pytest.approx(0.5, abs=1e-15)


def test_measure_validation():
    with pytest.raises(ValueError):
        D.EmpiricalMeasure(np.array([]))
    with pytest.raises(ValueError):
        D.EmpiricalMeasure(np.array([0.0, np.inf]))
    with pytest.raises(ValueError):
        D.EmpiricalMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.6]))


def test_assignment_refuses_large_clouds():
    x = np.zeros((D.ASSIGNMENT_CAP + 1, 1))
    with pytest.raises(ValueError):
        D.wasserstein_assignment(x, x)


def test_subsampled_estimate_close_for_large_clouds():
    g = np.random.default_rng(3)
    x, y = g.normal(size=3000), g.normal(0.5, 1.0, size=3000)
    est = D.wasserstein_subsampled(x[:, None], y[:, None], p=1, size=512)
    assert est == pytest.approx(D.wasserstein_1d(x, y, 1), abs=0.08)


def test_wasserstein_1d_rejects_higher_dimension():
    with pytest.raises(ValueError):
        D.wasserstein_1d(np.zeros((3, 2)), np.zeros((3, 2)))


@settings(max_examples=40)
@given(a=clouds(8), b=clouds(8), c=clouds(8), p=st.sampled_from([1.0, 2.0]))
def test_triangle_inequality_1d(a, b, c, p):
    ab, bc, ac = D.wasserstein_1d(a, b, p), D.wasserstein_1d(b, c, p), D.wasserstein_1d(a, c, p)
    assert ac <= ab + bc + 1e-10


@settings(max_examples=30)
@given(a=clouds(6, 2), b=clouds(6, 2), c=clouds(6, 2), p=st.sampled_from([1.0, 2.0]))
def test_triangle_inequality_assignment(a, b, c, p):
    ab = D.wasserstein_assignment(a, b, p)
    bc = D.wasserstein_assignment(b, c, p)
    ac = D.wasserstein_assignment(a, c, p)
    assert ac <= ab + bc + 1e-10


@settings(max_examples=40)
@given(a=clouds(10), b=clouds(10), p=st.floats(1.0, 3.0), dq=st.floats(0.0, 3.0))
def test_monotone_in_p(a, b, p, dq):
    assert D.wasserstein_1d(a, b, p) <= D.wasserstein_1d(a, b, p + dq) * (1 + 1e-12) + 1e-12


# -- coupling cost -----------------------------------------------------------------

@pytest.fixture(scope="module")
def pair():
    return S.synchronous_pair(models.power_drift(2.0), [1.0], [-1.0], 2.0, 1e-2, 64, seed=5, record_every=20)


def test_coupling_cost_bounds_assignment(pair):
    for k in range(pair.times.size):
        w = D.wasserstein_assignment(pair.states[:, k], pair.coupled_partner[:, k], 2)
        assert D.coupling_cost(pair, "identity", 2, k) >= w - 1e-12


def test_coupling_cost_curve_matches_pointwise(pair):
    curve = D.coupling_cost(pair, "identity", 1.5, t_index=None)
    assert curve.shape == pair.times.shape
    assert curve[3] == pytest.approx(D.coupling_cost(pair, "identity", 1.5, 3), rel=1e-14)


def test_indicator_cost_is_uncoupled_fraction():
    ens = S.synchronous_pair(models.linear(1.0, sigma=0.0), [1.0], [-1.0], 30.0, 0.1, 4, seed=0, eps_c=1e-6)
    assert D.coupling_cost(ens, "indicator", 1, 0) == 1.0
    assert D.coupling_cost(ens, "indicator", 1, -1) == 0.0
    assert D.coupling_cost(ens, "identity", 2, -1) == 0.0


def test_coupling_cost_linear_drift():
    ens = S.synchronous_pair(models.linear(1.0), [1.0], [-1.0], 2.0, 1e-3, 16, seed=1, record_every=100)
    curve = D.coupling_cost(ens, "identity", 1, None)
    assert np.max(np.abs(curve - 2 * np.exp(-ens.times))) <= 2e-3


def test_coupling_cost_needs_coupled_ensemble():
    ens = S.euler_maruyama(models.ou(), [0.0], 1.0, 0.1, 4, seed=0)
    with pytest.raises(ValueError):
        D.coupling_cost(ens, "identity")


# -- total variation -------------------------------------------------------------

def test_tv_identical_and_disjoint():
    g = np.random.default_rng(4)
    x = g.normal(size=2000)
    assert D.tv_histogram(x, x) == 0.0
    assert D.tv_histogram(x, x + 100.0) == pytest.approx(1.0, abs=1e-12)


def test_tv_two_dimensional():
    g = np.random.default_rng(5)
    x = g.normal(size=(5000, 2))
    assert D.tv_histogram(x, x + np.array([50.0, 0.0])) == pytest.approx(1.0, abs=1e-12)
    # fine two-dimensional bins are noisy, but a shift still registers
    same = D.tv_histogram(x, g.normal(size=(5000, 2)))
    assert same < D.tv_histogram(x, x + np.array([1.0, 0.0]))


def test_tv_rejects_empty_and_three_dimensions():
    with pytest.raises(ValueError):
        D.tv_histogram(np.array([]), np.array([1.0]))
    with pytest.raises(ValueError):
        D.tv_histogram(np.zeros((3, 3)), np.zeros((3, 3)))


@settings(max_examples=40)
@given(a=clouds(20), b=clouds(30))
def test_tv_in_unit_interval(a, b):
    v = D.tv_histogram(a, b)
    assert 0.0 <= v <= 1.0


# -- decay fits --------------------------------------------------------------------

def test_exponential_fit_exact():
    t = np.linspace(0, 5, 30)
    fit = D.decay_fit(t, 3.0 * np.exp(-2.0 * t), "exponential")
    assert fit.params["Gamma"] == pytest.approx(2.0, abs=1e-6)
    assert fit.params["kappa"] == pytest.approx(3.0, rel=1e-9)
    assert fit.residual <= 1e-10


def test_psi_inverse_fit_exact():
    t = np.linspace(0, 20, 30)
    mod = R.ModulusPair.from_names("identity", "power(2)", 10.0, 1.0)
    fit = D.decay_fit(t, 1.0 / (1.0 + t), "psi_inverse", mod=mod, kappa=1.0)
    assert fit.params["Gamma"] == pytest.approx(1.0, abs=1e-6)
    assert fit.predict([3.0], mod)[0] == pytest.approx(0.25, rel=1e-8)


def test_power_fit_for_quadratic_drift_coupling():
    # sigma = 0 isolates the contraction: X = -Z = 1/(1+t), so the distance decays like t^-1
    m = models.power_drift(2.0, sigma=0.0)
    ens = S.synchronous_pair(m, [1.0], [-1.0], 50.0, 1e-3, 1, seed=0, record_every=1000)
    curve = D.coupling_cost(ens, "identity", 2, None)
    sel = ens.times >= 5
    fit = D.decay_fit(ens.times[sel], curve[sel], "power")
    assert abs(fit.params["q"] - 1.0) <= 0.15


def test_decay_fit_needs_five_points():
    with pytest.raises(ValueError):
        D.decay_fit([0, 1, 2, 3], [1, 0.5, 0.25, 0.125])


def test_decay_fit_drops_non_positive_points():
    t = np.arange(8.0)
    d = np.exp(-t)
    d[2] = 0.0
    with pytest.warns(RuntimeWarning, match="dropped 1"):
        fit = D.decay_fit(t, d)
    assert fit.dropped == 1 and fit.params["Gamma"] == pytest.approx(1.0, abs=1e-10)


def test_decay_csv():
    text = D.decay_csv([0.0, 1.0], [1.0, 0.5], [1.0, 0.25])
    rows = [r.split(",") for r in text.strip().splitlines()]
    assert rows[0] == ["t", "empirical", "predicted", "excess"]
    assert float(rows[2][3]) == 0.25
