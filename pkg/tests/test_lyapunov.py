import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from subgeo import geometry as G
from subgeo import lyapunov as Ly
from subgeo import models


def _table(model, rate, r_max, r1=1.5, geometric=False):
    prof = G.radial_profile(model, [0.0], 1.0, r_max=r_max)
    v = G.lambda_constant(prof, rate)
    build = Ly.build_geometric if geometric else Ly.build_subgeometric
    return v, build(prof, v, r1=r1)


@pytest.fixture(scope="module")
def cosine_table():
    return _table(models.cosine_drift(1.0), "power(0.5)", 50.0)


@pytest.fixture(scope="module")
def ou_table():
    return _table(models.ou(), "power(0.5)", 11.0)


def _shell(r1, n=200, span=10.0, dim=1, seed=0):
    g = np.random.default_rng(seed)
    r = np.linspace(r1, span * r1, n)
    if dim == 1:
        return (r * np.where(np.arange(n) % 2, 1.0, -1.0))[:, None]
    u = g.standard_normal((n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True) * r[:, None]


# -- construction ----------------------------------------------------------------

def test_ou_table_signs(ou_table):
    _, t = ou_table
    assert t.vbar[0] == 0.0
    assert np.all(t.vbar_d1 > 0)
    # -iota/r * Vbar' dominates for a confining drift, so Vbar is convex far out
    assert np.all(t.vbar_d2[t.r > 3.0] > 0)


def test_table_starts_at_zero_and_is_non_decreasing(cosine_table):
    _, t = cosine_table
    assert t.vbar[0] == 0.0
    assert np.all(np.diff(t.vbar) >= 0)


def test_first_derivative_continuous_across_cells(cosine_table):
    _, t = cosine_table
    edges = t._log_V.grid[1:-1]
    edges = edges[edges < t.r[-1]]
    left = np.exp(t.log_d1(edges * (1 - 1e-13)))
    right = np.exp(t.log_d1(edges * (1 + 1e-13)))
    assert np.max(np.abs(left - right) / right) <= 1e-8


def test_derivatives_match_finite_differences_second_order(cosine_table):
    _, t = cosine_table
    r = np.linspace(2.0, 8.0, 25)

    def err(h):
        vb = lambda s: np.exp(t.log_vbar(s))
        fd1 = (vb(r + h) - vb(r - h)) / (2 * h)
        fd2 = (vb(r + h) - 2 * vb(r) + vb(r - h)) / (h * h)
        d1 = np.exp(t.log_d1(r))
        d2 = t.d2_scaled(r, 0.0)
        return np.max(np.abs(fd1 - d1) / d1), np.max(np.abs(fd2 - d2) / np.abs(d2).max())

    e1a, e2a = err(2e-2)
    e1b, e2b = err(1e-2)
    # halving the step divides the error by about four
    assert 3.0 < e1a / e1b < 5.0
    assert 3.0 < e2a / e2b < 5.0


def test_energy_inequality_margin(cosine_table):
    # Vbar(r) <= int_{r0}^r e^{-I}
    _, t = cosine_table
    r = np.linspace(t.r0, t.r_max, 4000)[1:]
    assert np.min(t._log_J.left(r) - t.log_vbar(r)) >= 0


def test_table_csv_round_trip(tmp_path, cosine_table):
    _, t = cosine_table
    p = tmp_path / "table.csv"
    t.to_csv(p)
    data = np.genfromtxt(p, delimiter=",", names=True)
    assert np.array_equal(data["vbar_d1"], t.vbar_d1)


def test_refuses_divergent_lambda():
    prof = G.radial_profile(models.brownian(), [0.0], 1.0, r_max=11.0)
    v = G.lambda_constant(prof, "power(0.5)")
    with pytest.raises(Ly.RefusalError):
        Ly.build_subgeometric(prof, v)
    v_lin = G.lambda_constant(prof, "identity")
    with pytest.raises(Ly.RefusalError):
        Ly.build_geometric(prof, v_lin)


def test_geometric_needs_identity_rate(cosine_table):
    v, _ = cosine_table
    with pytest.raises(ValueError):
        Ly.build_geometric(None, v)


# -- drift inequality --------------------------------------------------------------

@pytest.mark.parametrize("which", ["cosine", "ou"])
def test_drift_inequality_holds(which, cosine_table, ou_table):
    model = models.cosine_drift(1.0) if which == "cosine" else models.ou()
    _, t = cosine_table if which == "cosine" else ou_table
    rep = Ly.verify_drift_inequality(t, model, _shell(t.r1), tol=1e-6)
    assert rep.passed and rep.n_points == 200
    assert rep.max_violation <= 1e-6 + rep.tail_budget


def test_drift_inequality_ou_in_two_dimensions():
    m = models.ou(dim=2)
    prof = G.radial_profile(m, [0.0, 0.0], 1.0, r_max=11.0, sphere_samples=64)
    v = G.lambda_constant(prof, "power(0.5)")
    t = Ly.build_subgeometric(prof, v)
    assert Ly.verify_drift_inequality(t, m, _shell(t.r1, dim=2)).passed


def test_corrupted_second_derivative_is_caught(cosine_table):
    _, t = cosine_table
    bad = replace(t, d2_sign=-1.0)
    rep = Ly.verify_drift_inequality(bad, models.cosine_drift(1.0), _shell(t.r1))
    assert not rep.passed and rep.max_violation > 1.0


def test_points_inside_r1_are_rejected(cosine_table):
    _, t = cosine_table
    with pytest.raises(ValueError):
        Ly.verify_drift_inequality(t, models.cosine_drift(1.0), [[1.2]])


@settings(max_examples=25)
@given(seed=st.integers(0, 10_000), k=st.floats(1.0, 10.0))
def test_weaker_decay_term_still_passes(cosine_table, seed, k):
    _, t = cosine_table
    g = np.random.default_rng(seed)
    pts = (g.uniform(t.r1, 10 * t.r1, 50) * g.choice([-1.0, 1.0], 50))[:, None]
    m = models.cosine_drift(1.0)
    base = Ly.verify_drift_inequality(t, m, pts)
    weak = Ly.verify_drift_inequality(t, m, pts, lambda_scale=k)
    assert base.passed and weak.passed
    assert weak.max_violation <= base.max_violation + 1e-12


def test_geometric_table_cubic_drift():
    m = models.power_drift(3.0)
    v, t = _table(m, "identity", 11.0, geometric=True)
    assert t.kind == "geometric"
    assert t.lambda_used == v.value
    rep = Ly.verify_drift_inequality(t, m, _shell(t.r1, span=min(10.0, t.r_max / t.r1)))
    assert rep.passed


def test_jump_term_diagnostic_clip_jump():
    cj = models.clip_jump()
    prof = G.radial_profile(cj, [0.0], 1.0, r_max=30.0)
    v = G.lambda_constant(prof, "power(0.5)")
    t = Ly.build_subgeometric(prof, v)
    rep = Ly.verify_drift_inequality(t, cj, _shell(t.r1))
    assert rep.passed
    assert rep.jump_term_max is not None and math.isfinite(rep.jump_excess_max)


# -- hitting bound ----------------------------------------------------------------

def test_hitting_bound_ou_is_recurrent():
    h = Ly.hitting_bound(models.ou(), [0.0], 1.0, [2.0])
    assert h.bound == 0.0 and h.status == "recurrent"


@pytest.mark.parametrize("x", [1.0, 2.0, 3.5])
def test_hitting_bound_outward_drift_closed_form(x):
    # b = +x gives e^{-I(u)} = e^{-(u^2 - 0.81)} from the base radius 0.9
    h = Ly.hitting_bound(models.linear(-1.0), [0.0], 1.0, [x])
    ref = (erf(x) - erf(0.9)) / (1.0 - erf(0.9))
    assert h.bound == pytest.approx(ref, rel=1e-10)
    assert 0 < h.bound < 1


def test_hitting_bound_rejects_inside_start():
    with pytest.raises(ValueError):
        Ly.hitting_bound(models.ou(), [0.0], 1.0, [0.5])
