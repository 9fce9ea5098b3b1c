"""Explicit Lyapunov functions built from the radial profile.

With ``J(r) = int_{r0}^r e^{-I}``, ``phi_L = phi / Lambda`` and

    T(u) = int_u^inf phi_L(J(v) + 1) e^{I(v)} / gamma(v) dv,

the radial function ``Vbar(r) = int_{r0}^r e^{-I(u)} T(u) du`` satisfies

    Vbar'  = e^{-I} T,
    Vbar'' = -(iota/r) Vbar' - phi_L(J + 1)/gamma,

and ``V(x) = Vbar(|x - x0|) + 1`` obeys ``LV <= -phi_L(V)/2`` outside ``r1``.
With ``phi(t) = t`` the same construction gives ``LV <= -V/(2 Lambda)``.

All quantities are handled in log space; ``Vbar'`` easily exceeds ``e^{100}``.
Drift-inequality violations are therefore reported relative to the decay
term ``phi_L(V)/2`` as well as in absolute terms.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DomainError,
    LambdaVerdict,
    RadialProfile,
    _adaptive_edges,
    doubling_log_integral,
    pointwise_functionals,
    radial_profile,
)
from .models import CoefficientModel, _as_batch
from .quadrature import LogCumulative
from .rates import RateFunction, rate_from_name

__all__ = [
    "LyapunovTable",
    "DriftReport",
    "HittingBound",
    "RefusalError",
    "build_subgeometric",
    "build_geometric",
    "verify_drift_inequality",
    "hitting_bound",
]


class RefusalError(ValueError):
    """The construction's precondition (a finite Lambda) is not met."""


@dataclass(frozen=True)
class LyapunovTable:
    """``Vbar`` and its first two radial derivatives on a grid.

    ``r``, ``vbar``, ``vbar_d1`` and ``vbar_d2`` tabulate the function; the
    ``log_*`` methods evaluate anywhere in ``[r0, r_max]``.  ``d2_sign`` is
    only there for negative controls (a corrupted second derivative).
    """

    profile: RadialProfile
    r1: float
    r: np.ndarray
    vbar: np.ndarray
    vbar_d1: np.ndarray
    vbar_d2: np.ndarray
    lambda_used: float
    kind: str
    rate: RateFunction
    tail_relative: float
    log_lambda: float
    d2_sign: float = 1.0
    _log_T_cum: LogCumulative | None = field(default=None, repr=False)
    _log_tail: float = -math.inf
    _log_J: LogCumulative | None = field(default=None, repr=False)
    _log_V: LogCumulative | None = field(default=None, repr=False)

    @property
    def r0(self):
        return self.profile.base_radius

    @property
    def r_max(self):
        return float(self._log_V.grid[-1])

    def log_T(self, r):
        """log of ``T(r) = int_r^inf phi_L(J+1) e^I / gamma``."""
        return np.logaddexp(self._log_T_cum.right(r), self._log_tail) - self.log_lambda

    def log_d1(self, r):
        return -self.profile.I(r) + self.log_T(r)

    def log_vbar(self, r):
        return self._log_V.left(r)

    def log_phi_L_J1(self, r):
        """log ``phi_L(J(r) + 1)``."""
        return self.rate.log_of(np.logaddexp(self._log_J.left(r), 0.0)) - self.log_lambda

    def d2_scaled(self, r, log_scale):
        """``Vbar''(r) * exp(-log_scale)`` without overflow."""
        r = np.asarray(r, dtype=float)
        a = -(self.profile.iota(r) / r) * np.exp(self.log_d1(r) - log_scale)
        b = -np.exp(self.log_phi_L_J1(r) - log_scale) / self.profile.gamma(r)
        return self.d2_sign * (a + b)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "vbar", "vbar_d1", "vbar_d2"])
            for row in zip(self.r, self.vbar, self.vbar_d1, self.vbar_d2):
                w.writerow([repr(float(v)) for v in row])


def _build(verdict: LambdaVerdict, rate: RateFunction, r1, kind, n_grid):
    if not verdict.finite:
        raise RefusalError(f"Lambda is not finite (status {verdict.status}); no Lyapunov function")
    prof = verdict.profile
    r0 = prof.base_radius
    r1 = 1.5 * r0 if r1 is None else float(r1)
    if not r1 > r0:
        raise ValueError("r1 must exceed r0")
    log_lam = verdict.log_value
    lg = verdict.log_g
    log_tail = math.log(verdict.tail_bound) if verdict.tail_bound > 0 else -math.inf
    R = float(lg.grid[-1])

    def log_d1(u):
        return -prof.I(u) + np.logaddexp(lg.right(u), log_tail) - log_lam

    edges = _adaptive_edges(lg.grid, log_d1)
    lV = LogCumulative(edges, log_d1)
    table = LyapunovTable(
        profile=prof, r1=r1, r=np.empty(0), vbar=np.empty(0), vbar_d1=np.empty(0),
        vbar_d2=np.empty(0), lambda_used=verdict.value, kind=kind, rate=rate,
        tail_relative=verdict.tail_bound / verdict.value if verdict.value > 0 else math.inf,
        log_lambda=log_lam, _log_T_cum=lg, _log_tail=log_tail, _log_J=verdict.log_J, _log_V=lV,
    )
    # tabulate only where the values are representable in double precision
    probe = np.linspace(r0, R, 4 * n_grid)
    big = np.maximum(table.log_d1(probe), table.log_phi_L_J1(probe) - np.log(table.profile.gamma(probe)))
    over = np.nonzero(~(big < 700.0))[0]
    r_top = R if over.size == 0 else probe[max(over[0] - 1, 1)]
    r = np.linspace(r0, r_top, n_grid)
    with np.errstate(over="ignore"):
        d1 = np.exp(table.log_d1(r))
        vb = np.exp(table.log_vbar(r))
        d2 = table.d2_scaled(r, 0.0)
    return LyapunovTable(**{**table.__dict__, "r": r, "vbar": vb, "vbar_d1": d1, "vbar_d2": d2})


def build_subgeometric(profile: RadialProfile | None, verdict: LambdaVerdict, rate: RateFunction | str | None = None,
                       r1=None, n_grid=2001) -> LyapunovTable:
    """Lyapunov table for the sub-geometric drift inequality ``LV <= -phi_L(V)/2``.

    ``profile`` may be ``None``; the (possibly extended) profile stored in
    ``verdict`` is used either way.
    """
    rate = verdict.rate if rate is None else (rate_from_name(rate) if isinstance(rate, str) else rate)
    if verdict.rate is not None and rate.label != verdict.rate.label:
        raise ValueError("the rate differs from the one Lambda was computed with")
    return _build(verdict, rate, r1, "subgeometric", n_grid)


def build_geometric(profile: RadialProfile | None, verdict_linear_phi: LambdaVerdict, r1=None,
                    n_grid=2001) -> LyapunovTable:
    """Table for ``LV <= -V/(2 Lambda)`` using ``phi(t) = t``."""
    v = verdict_linear_phi
    if v.rate is not None and v.rate.label != "identity":
        raise ValueError("the geometric construction needs Lambda computed with phi(t) = t")
    return _build(v, rate_from_name("identity"), r1, "geometric", n_grid)


@dataclass(frozen=True)
class DriftReport:
    """Outcome of the drift-inequality check at sample points.

    ``max_violation`` is ``max (LV + phi_L(V)/2) / (phi_L(V)/2)``, the
    violation relative to the decay term; ``max_abs_violation`` is the same
    without the normalisation (possibly ``inf`` when ``V`` is astronomically
    large).  ``tail_budget`` is the relative effect of the truncated tail of
    ``T`` on the check.
    """

    max_violation: float
    max_abs_violation: float
    worst_point: list
    tail_budget: float
    tolerance: float
    passed: bool
    n_points: int
    jump_term_max: float | None = None
    jump_excess_max: float | None = None


def verify_drift_inequality(table: LyapunovTable, model: CoefficientModel, sample_points,
                            tol=1e-6, lambda_scale=1.0) -> DriftReport:
    """Check ``LV(x) <= -phi_L(V(x))/2`` (or ``-V/(2 Lambda)``) at the points.

    ``lambda_scale = k`` asserts the weaker ``LV <= -phi(V)/(2 k Lambda)`` for
    the same ``V`` (``k >= 1``).

    ``LV = C Vbar''/2 + Vbar'/(2r) (2A - C + 2B)`` with ``B`` compensated for
    jumps.  For jump models the integral term of the generator is evaluated
    as a signed diagnostic (``jump_term_max``) together with the amount by
    which it exceeds the compensation (``jump_excess_max``).
    """
    x = _as_batch(sample_points, model.dim)
    x0 = table.profile.center
    z = x - x0[None, :]
    r = np.linalg.norm(z, axis=1)
    if np.any(r < table.r1 * (1 - 1e-12)):
        raise ValueError(f"sample points must satisfy |x - x0| >= r1 = {table.r1}")
    if np.any(r > table.r_max):
        raise ValueError(f"sample points beyond the tabulated radius {table.r_max:.6g}")
    f = pointwise_functionals(model, x0, x)
    log_vbar = table.log_vbar(r)
    log_V = np.logaddexp(log_vbar, 0.0)
    # decay term phi_L(V)/2 (identity rate for the geometric kind)
    if not lambda_scale > 0:
        raise ValueError("lambda_scale must be positive")
    log_s = table.rate.log_of(log_V) - table.log_lambda - math.log(2.0 * lambda_scale)
    d1s = np.exp(table.log_d1(r) - log_s)
    d2s = table.d2_scaled(r, log_s)
    term2 = 0.5 * f.C * d2s
    term1 = d1s / (2 * r) * (2 * f.A - f.C + 2 * f.B)
    rel = term2 + term1 + 1.0
    k = int(np.argmax(rel))
    with np.errstate(over="ignore"):
        abs_v = rel * np.exp(log_s)
    # sensitivity of the check to the truncated tail of T
    log_T = table.log_T(r)
    tail_part = np.exp(table._log_tail - table.log_lambda - log_T) if math.isfinite(table._log_tail) else np.zeros_like(r)
    # T enters LV only through Vbar' (2A - C + 2B - C iota) / (2r)
    coupled_part = d1s / (2 * r) * (2 * f.A - f.C + 2 * f.B - f.C * table.profile.iota(r))
    budget = float(np.max(tail_part * np.abs(coupled_part)))
    jt = je = None
    if model.has_jumps and model.jump.quadrature is not None:
        nodes, w = model.jump.quadrature(x)
        r0 = table.r0
        after = np.linalg.norm(z[:, None, :] + nodes, axis=-1)
        after_c = np.clip(after, r0, table.r_max)
        lv_after = table.log_vbar(after_c.ravel()).reshape(after.shape)
        dv = np.exp(lv_after - log_s[:, None]) - np.exp(log_vbar - log_s)[:, None]
        grad = d1s[:, None] * np.sum(nodes * z[:, None, :], axis=-1) / r[:, None]
        small = np.linalg.norm(nodes, axis=-1) < 1.0
        integrand = dv - grad * small
        jump_term = np.sum(w * integrand, axis=1)
        comp = np.asarray(model.jump.compensator(x), dtype=float)
        excess = jump_term + d1s * np.sum(z * comp, axis=1) / r
        jt, je = float(np.max(jump_term)), float(np.max(excess))
    passed = bool(rel[k] <= tol + budget)
    return DriftReport(float(rel[k]), float(abs_v[k]), x[k].tolist(), budget, tol, passed, int(x.shape[0]), jt, je)


@dataclass(frozen=True)
class HittingBound:
    """``P^x(never hitting B_{r0}(x0)) <= Vbar(|x - x0|) / Vbar(inf)``."""

    bound: float
    log_vbar_x: float
    log_vbar_inf: float
    status: str
    eps: float


def hitting_bound(model: CoefficientModel, x0, r0_ball, x, eps=None, profile=None,
                  span=20.0, **profile_kw) -> HittingBound:
    """Upper bound on the probability of never entering ``B_{r0}(x0)`` from ``x``.

    Uses ``Vbar(r) = int_{r0-eps}^r e^{-I}``; an infinite ``Vbar(inf)`` (the
    recurrent case) gives the bound 0.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    r0 = float(r0_ball)
    eps = r0 / 10.0 if eps is None else float(eps)
    if not 0 < eps < r0:
        raise ValueError("need 0 < eps < r0")
    rx = float(np.linalg.norm(x - x0))
    if rx < r0 * (1 - 1e-12):
        raise ValueError("the starting point must lie outside the ball")
    base = r0 - eps
    if profile is None:
        profile = radial_profile(model, x0, base, r_max=max(base + span, rx + 1.0), **profile_kw)
    elif abs(profile.base_radius - base) > 1e-12:
        raise ValueError("profile must start at r0 - eps")

    def build(prof, R):
        grid = prof.grid[prof.grid <= R + 1e-12]
        if grid[-1] < R:
            grid = np.append(grid, R)
        logf = lambda u: -prof.I(u)
        return LogCumulative(_adaptive_edges(grid, logf), logf), logf, None

    res = doubling_log_integral(profile, build, span=max(span, rx - base + 1.0), rel_tol=1e-10,
                                need_gamma=False)
    lc = res.cumulative
    log_vx = float(lc.left(np.array([rx]))[0])
    if res.status == "divergent":
        return HittingBound(0.0, log_vx, math.inf, "recurrent", eps)
    log_inf = float(np.logaddexp(lc.log_total, res.log_tail))
    if log_inf == -math.inf:
        raise DomainError("Vbar(inf) vanishes")
    status = "transient-like" if res.status in ("finite", "finite_tail") else "undetermined"
    return HittingBound(float(math.exp(log_vx - log_inf)), log_vx, log_inf, status, eps)
