import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from subgeo import geometry as G
from subgeo import models
from subgeo.models import CoefficientModel, JumpKernel

from .reference import frozen


@pytest.fixture(scope="module")
def cosine_profile():
    return G.radial_profile(models.cosine_drift(1.0), [0.0], 1.0, r_max=50.0)


@pytest.fixture(scope="module")
def ou_profile():
    return G.radial_profile(models.ou(), [0.0], 1.0, r_max=11.0)


# -- models ----------------------------------------------------------------------

def test_model_regularity_spot_checks():
    m = models.ou()
    assert m.check_local_bound((1.0, 10.0)) == pytest.approx({1.0: 2.0, 10.0: 11.0}, rel=1e-12)
    assert m.check_linear_growth(1.0) <= 0
    assert m.one_sided_lipschitz() == pytest.approx(-1.0, rel=1e-9)


def test_build_model_families_and_jumps():
    m = models.build_model("power_drift", {"p": 3.0})
    assert m.b([2.0])[0, 0] == -8.0
    j = models.build_model("ou", {}, {"law": "uniform", "rate": 2.0, "lo": -1.0, "hi": 1.0})
    assert j.has_jumps and j.jump.total_mass == 2.0
    with pytest.raises(ValueError):
        models.build_model("ou", {}, {"law": "cauchy", "rate": 1.0})


def test_build_model_plugin_reference():
    m = models.build_model("subgeo.models:linear", {"theta": 2.0})
    assert m.b([1.0])[0, 0] == -2.0
    with pytest.raises(ValueError):
        models.build_model("not_a_reference")


def test_jump_kernel_checks():
    assert JumpKernel.uniform(1.0, -1.0, 1.0).check([[2.0], [-3.0]], 1) == []
    with pytest.raises(ValueError):
        JumpKernel.constant(1.0, 0.0)
    # clip-jump kernel points inwards beyond |x| = 1
    cj = models.clip_jump()
    assert cj.jump.check(np.linspace(-5, 5, 41)[:, None], 1) == []


# -- pointwise functionals ---------------------------------------------------------

def test_functionals_linear_d1():
    f = G.pointwise_functionals(models.linear(), [0.0], [2.0])
    assert (f.A[0], f.B[0], f.C[0]) == (0.5, -4.0, 1.0)


def test_functionals_clip_jump_compensated():
    f = G.pointwise_functionals(models.clip_jump(), [0.0], [2.0])
    assert f.B[0] == -1.0


def test_functionals_isotropic_d2():
    m = models.brownian(dim=2)
    x = np.random.default_rng(3).standard_normal((20, 2))
    f = G.pointwise_functionals(m, [0.0, 0.0], x)
    assert np.all(f.A == 1.0) and np.all(f.B == 0.0)
    assert np.allclose(f.C, 1.0, rtol=0, atol=1e-15)


def test_functionals_undefined_at_center():
    with pytest.raises(G.DomainError):
        G.pointwise_functionals(models.ou(), [1.0], [1.0])


def test_null_jump_kernel_leaves_b_bitwise():
    base = models.cosine_drift(1.0)
    with_null = CoefficientModel(**{**base.__dict__, "jump": JumpKernel.null(1)})
    x = np.linspace(1, 30, 300)[:, None]
    a = G.pointwise_functionals(base, [0.0], x)
    b = G.pointwise_functionals(with_null, [0.0], x)
    assert np.array_equal(a.B, b.B) and np.array_equal(a.C, b.C)


# -- radial profile --------------------------------------------------------------

def test_cosine_profile_I_closed_form(cosine_profile):
    r = np.linspace(1.0, 50.0, 2001)
    exact = -2 * np.sin(r) - 2 * r + (2 * np.sin(1.0) + 2.0)
    assert np.max(np.abs(cosine_profile.I(r) - exact)) <= 1e-8


def test_ou_profile_closed_form(ou_profile):
    r = np.linspace(1.0, 11.0, 501)
    assert np.max(np.abs(ou_profile.iota(r) + 2 * r * r)) <= 1e-9 * 242
    assert np.max(np.abs(ou_profile.I(r) + (r * r - 1.0))) <= 1e-9
    assert ou_profile.I_vals[0] == 0.0
    assert ou_profile.I(np.array([1.0]))[0] == 0.0


def test_ou_profile_d2_sphere_sampling():
    prof = G.radial_profile(models.ou(dim=2), [0.0, 0.0], 1.0, r_max=5.0, sphere_samples=64)
    r = np.linspace(1.0, 5.0, 81)
    assert np.max(np.abs(prof.gamma(r) - 1.0)) <= 1e-6
    assert np.max(np.abs(prof.iota(r) - (1 - 2 * r * r))) <= 1e-6


def test_d1_sphere_is_two_points():
    m = models.cosine_drift(1.0)
    prof = G.radial_profile(m, [0.5], 1.0, r_max=6.0, nodes=8)
    xg, _ = np.polynomial.legendre.leggauss(8)
    lo, hi = prof.grid[:-1], prof.grid[1:]
    r = (0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * xg).ravel()
    f_plus = G.pointwise_functionals(m, [0.5], 0.5 + r[:, None])
    f_minus = G.pointwise_functionals(m, [0.5], 0.5 - r[:, None])
    iota = lambda f: (2 * f.A - f.C + 2 * f.B) / f.C
    assert np.array_equal(prof._node_iota.ravel(), np.maximum(iota(f_plus), iota(f_minus)))
    assert np.array_equal(prof._node_gamma.ravel(), np.minimum(f_plus.C, f_minus.C))


def test_I_additive_over_concatenated_grids(cosine_profile):
    # Chasles: I(a -> c) = I(a -> b) + I(b -> c), with I(b -> c) from a profile based at b
    b = 7.25
    second = G.radial_profile(models.cosine_drift(1.0), [0.0], b, r_max=20.0)
    r = np.linspace(b, 20.0, 300)
    lhs = cosine_profile.I(r)
    rhs = cosine_profile.I(np.array([b]))[0] + second.I(r)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_profile_extension_reuses_cells(ou_profile):
    longer = ou_profile.extended(15.0)
    assert longer.r_max == 15.0
    assert np.array_equal(longer.grid[: ou_profile.grid.size], ou_profile.grid)


def test_profile_flags_degenerate_diffusion():
    m = models.linear(1.0, sigma=0.0)
    prof = G.radial_profile(m, [0.0], 1.0, r_max=3.0)
    assert len(prof.nonpositive_gamma) > 0
    with pytest.raises(G.PreconditionError):
        G.lambda_constant(prof, "power(0.5)")


# -- Lambda ----------------------------------------------------------------------

@pytest.mark.parametrize("alpha", ["0.25", "0.5", "0.75"])
def test_lambda_cosine_matches_ode_oracle(cosine_profile, alpha):
    v = G.lambda_constant(cosine_profile, f"power({alpha})")
    assert v.finite and v.status == "finite"
    assert v.value == pytest.approx(frozen()["lambda_cosine"][alpha], rel=1e-10)
    assert v.tail_bound < 1e-8 * v.value


def test_lambda_ou_sqrt_matches_oracle(ou_profile):
    v = G.lambda_constant(ou_profile, "power(0.5)")
    assert v.finite
    assert v.value == pytest.approx(frozen()["lambda_ou_sqrt"], rel=1e-6)


def test_lambda_cubic_identity_tail_corrected():
    prof = G.radial_profile(models.power_drift(3.0), [0.0], 1.0, r_max=11.0)
    v = G.lambda_constant(prof, "identity")
    assert v.finite and v.diagnostics["tail_corrected"]
    assert v.value == pytest.approx(frozen()["lambda_cubic_identity"], rel=1e-4)


def test_lambda_brownian_diverges():
    prof = G.radial_profile(models.brownian(), [0.0], 1.0, r_max=11.0)
    v = G.lambda_constant(prof, "power(0.5)")
    assert not v.finite and v.status == "divergent" and math.isinf(v.value)


def test_lambda_ou_identity_is_borderline():
    # the integrand decays like 1/(2u): the test cannot certify finiteness
    prof = G.radial_profile(models.ou(), [0.0], 1.0, r_max=11.0)
    v = G.lambda_constant(prof, "identity")
    assert not v.finite


def test_lambda_monotone_in_rate(cosine_profile):
    vals = [G.lambda_constant(cosine_profile, f"power({a})").value for a in (0.2, 0.4, 0.6, 0.8)]
    assert np.all(np.diff(vals) > 0)


def test_lambda_e3_closed_form():
    # iota = -r, so J + 1 = e^{u-1} and the integrand is e^{-(u-1)/2}: Lambda = 2
    prof = G.radial_profile(models.clip_jump(), [0.0], 1.0, r_max=30.0)
    v = G.lambda_constant(prof, "power(0.5)")
    assert v.value == pytest.approx(2.0, rel=1e-10)


def test_sweep_lambda_over_centres():
    out = G.sweep_lambda(models.cosine_drift(1.0), "power(0.5)", [[0.0], [0.5]], [1.0, 2.0], r_max=30.0)
    assert len(out) == 4 and all(v.finite for _, v in out)


# -- classical checks -------------------------------------------------------------

def test_classical_infeasible_for_cosine_drift():
    m = models.cosine_drift(1.0)
    odd = (2 * np.arange(20) + 1) * np.pi
    for gamma_exp, Gamma_c in [(1.0, 0.1), (2.0, 0.05), (1.0, 1e-3)]:
        v = G.check_subgeo_classical(m, 0.5, gamma_exp, Gamma_c, 1.0, r_max=50.0)
        assert not v.feasible
        peaks = np.abs(np.asarray(v.violation_peaks, dtype=float))
        assert np.all(np.min(np.abs(peaks[:, None] - odd[None, :]), axis=1) <= 0.1)


def test_classical_feasible_for_ou():
    v = G.check_subgeo_classical(models.ou(), 0.5, 2.0, 0.25, 1.0)
    assert v.feasible and v.worst_margin < 0


def test_classical_infeasible_without_drift():
    assert not G.check_subgeo_classical(models.brownian(), 0.5, 1.0, 0.1, 1.0).feasible


@given(g1=st.floats(1e-3, 2.0), g2=st.floats(1e-3, 2.0))
def test_classical_feasibility_monotone_in_Gamma(g1, g2):
    lo, hi = sorted((g1, g2))
    m = models.ou()
    if G.check_subgeo_classical(m, 0.5, 2.0, hi, 1.0, r_max=10.0, step=0.05).feasible:
        assert G.check_subgeo_classical(m, 0.5, 2.0, lo, 1.0, r_max=10.0, step=0.05).feasible


def test_p1_implication_ou():
    out = G.check_p1_implication(models.ou(), 0.5, 2.0, 0.5, 1.0, 1.0, profile_kw={"r_max": 11.0})
    assert out.classical.feasible and out.integral.finite


def test_p1_implication_generality_gap():
    out = G.check_p1_implication(models.cosine_drift(1.0), 0.5, 1.0, 0.1, 1.0, 1.0,
                                 profile_kw={"r_max": 50.0})
    assert not out.classical.feasible and out.integral.finite


def test_p1_implication_refuses_large_gamma():
    with pytest.raises(G.HypothesisError):
        G.check_p1_implication(models.ou(), 0.5, 4.0, 0.5, 1.0, 1.0)


# -- sufficient condition ------------------------------------------------------------

def test_sub_sufficient_bound_dominates_direct_quadrature():
    rho = lambda t: t
    g = lambda u: np.ones_like(u)
    f = lambda u: np.exp(-u) * (1.0 + u * u)
    radii = np.linspace(1.0, 20.0, 20)
    out = G.sub_sufficient(rho, f, g, c=1.0, beta=1.0, r0=1.0, radii=np.linspace(1.0, 40.0, 2001))
    bound = np.interp(radii, out.radii, out.bound)
    # direct LHS: int_r^inf (u - 1 + 1) f(u) du
    lhs = np.array([integrate.quad(lambda u: u * np.exp(-u) * (1 + u * u), r, np.inf)[0] for r in radii])
    assert out.case == "i" and out.Delta > 0
    assert np.all(bound >= lhs * (1 - 1e-9))


def test_sub_sufficient_zero_tail():
    out = G.sub_sufficient(lambda t: t, lambda u: np.zeros_like(u), lambda u: np.ones_like(u), 1.0, 1.0, 1.0)
    assert out.Delta == 0 and np.all(out.bound == 0)


def test_sub_sufficient_bounded_rho_case_ii():
    f = lambda u: np.exp(-u)
    out = G.sub_sufficient(lambda t: np.ones_like(t), f, lambda u: np.ones_like(u), 0.0, 0.0, 1.0,
                           rho_bounded=True, with_lhs=True)
    assert out.case == "ii"
    assert np.allclose(out.bound, out.Delta)
    assert np.all(out.lhs <= out.Delta * (1 + 1e-9))


def test_sub_sufficient_case_ii_refuses_unbounded():
    with pytest.raises(G.HypothesisError):
        G.sub_sufficient(lambda t: t, lambda u: np.exp(-u), lambda u: np.ones_like(u), 1.0, 0.0, 1.0,
                         rho_bounded=False)


# -- N-matrix profile -------------------------------------------------------------

def test_n_matrix_clip_jump():
    cj = models.clip_jump()
    f = G.pointwise_functionals(cj, [0.0], np.array([[1.5], [3.0], [-2.0]]), use_n=True)
    assert np.allclose(f.N, 4.0 / 3.0, rtol=1e-14)
    prof = G.n_matrix_profile(cj, [0.0], 1.0, r_max=5.0)
    assert np.allclose(prof.gamma_vals, 4.0 / 3.0, rtol=1e-14)


def test_n_matrix_without_jumps_equals_C():
    f = G.pointwise_functionals(models.ou(), [0.0], np.linspace(1, 4, 7)[:, None], use_n=True)
    assert np.array_equal(f.N, f.C)


def test_n_matrix_rescues_degenerate_diffusion():
    cj = models.clip_jump()
    s = np.zeros((1, 1))
    m = CoefficientModel(**{**cj.__dict__, "diffusion": lambda x: np.broadcast_to(s, (x.shape[0], 1, 1)),
                            "sigma_const": s, "kernel": None})
    prof = G.n_matrix_profile(m, [0.0], 1.0, r_max=5.0)
    assert np.allclose(prof.gamma_vals, 1.0 / 3.0, rtol=1e-14)
    assert len(prof.nonpositive_gamma) == 0


def test_n_matrix_refuses_outward_drift():
    m = models.build_model("linear", {"theta": -1.0}, {"law": "uniform", "rate": 1.0, "lo": -0.5, "hi": 0.5})
    with pytest.raises(G.HypothesisError):
        G.n_matrix_profile(m, [0.0], 1.0, r_max=3.0)


# -- flatness and moment growth ----------------------------------------------------

def test_flatness_certificate_quadratic_drift():
    from subgeo.rates import ModulusPair
    mod = ModulusPair.from_names("identity", "power(2)", 10.0, 1.0)
    cert = G.certify_flatness(models.power_drift(2.0), mod, radius=5.0, n=201)
    assert cert.holds
    assert cert.Gamma == pytest.approx(0.5, rel=1e-12)


def test_flatness_certificate_linear_drift():
    from subgeo.rates import ModulusPair
    mod = ModulusPair.from_names("identity", "identity", 100.0, 1.0)
    cert = G.certify_flatness(models.linear(2.0), mod, radius=5.0, n=101)
    assert cert.Gamma == pytest.approx(2.0, rel=1e-12)


def test_moment_growth_constant_clip_drift():
    # sup_x (2 x clip'(x) + 1 + 1/3) / (x^2 + 1) attains 4/3 at x = 0
    m = models.build_model("clip_jump", {}, None)
    nu = JumpKernel.uniform(1.0, -1.0, 1.0)
    delta, arg = G.moment_growth_constant(m, 2.0, nu=nu)
    assert delta == pytest.approx(4.0 / 3.0, rel=1e-12)
    assert arg == [0.0]
