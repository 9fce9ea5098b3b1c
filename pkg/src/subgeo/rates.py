"""Rate-generating integrals and their inverses.

Two families of monotone integrals drive every convergence rate in the
toolkit:

* ``Phi(t) = int_1^t ds / phi(s)`` turns a concave rate function ``phi`` into
  the total-variation rate ``phi(Phi^{-1}(t))``;
* ``Psi_kappa(t) = int_t^kappa ds / psi(s)`` turns a convex modulus ``psi`` into
  the Wasserstein bound ``Psi_kappa^{-1}(Gamma t)`` that dominates every
  solution of ``f' <= -Gamma psi(f)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .quadrature import QuadratureError, gauss_kronrod, integrate_to_infinity

__all__ = [
    "RateFunction",
    "ModulusPair",
    "GronwallCurve",
    "GronwallReport",
    "RateRangeError",
    "DivergenceError",
    "rate_from_name",
    "f_from_name",
    "psi_from_name",
    "phi_big",
    "phi_big_inv",
    "tv_rate_at",
    "psi_big",
    "psi_big_inv",
    "gronwall_bound",
    "verify_gronwall",
    "chaining_delta",
    "wasserstein_bound",
]

ABSTOL = 1e-10
RELTOL = 1e-8


class RateRangeError(ValueError):
    """A requested value lies beyond the numerically reachable range."""

    def __init__(self, message, largest=None):
        super().__init__(message)
        self.largest = largest


class DivergenceError(ArithmeticError):
    """An improper integral that was required to be finite diverges."""


def _vectorize(fn):
    def wrapped(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(fn(x), dtype=float) * np.ones_like(x)
    return wrapped


@dataclass(frozen=True)
class RateFunction:
    """Concave non-decreasing rate ``phi: [1, inf) -> (0, inf)``.

    ``log_eval`` optionally maps ``log t`` to ``log phi(t)``; it lets the
    drift-integral code evaluate ``phi`` at arguments like ``e^{900}``.
    """

    eval: Callable
    deriv: Callable | None = None
    label: str = "custom"
    log_eval: Callable | None = None

    def __call__(self, t):
        return self.eval(t)

    def derivative(self, t, h=1e-6):
        if self.deriv is not None:
            return self.deriv(t)
        t = np.asarray(t, dtype=float)
        return (self.eval(t + h) - self.eval(t)) / h

    def log_of(self, log_t):
        """``log phi(exp(log_t))`` without overflow when ``log_eval`` is given."""
        log_t = np.asarray(log_t, dtype=float)
        if self.log_eval is not None:
            return self.log_eval(log_t)
        with np.errstate(over="ignore", divide="ignore"):
            return np.log(self.eval(np.exp(log_t)))

    def check(self, grid=None, tol=1e-10):
        """Positivity, monotonicity and concavity on a sampled grid.

        Returns a list of human-readable violations (empty when all hold).
        """
        if grid is None:
            grid = np.geomspace(1.0, 1e6, 400)
        grid = np.asarray(grid, dtype=float)
        v = np.asarray(self.eval(grid), dtype=float)
        problems = []
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            problems.append("rate is not strictly positive and finite on the grid")
        d1 = np.diff(v)
        if np.any(d1 < -tol * np.maximum(1.0, np.abs(v[:-1]))):
            problems.append("rate decreases on the grid")
        # concavity through slopes, valid on a non-uniform grid
        slopes = d1 / np.diff(grid)
        if np.any(np.diff(slopes) > tol * np.maximum(1.0, np.abs(slopes[:-1]))):
            problems.append("rate is not concave on the grid")
        return problems


@dataclass(frozen=True)
class ModulusPair:
    """Concave metric modulus ``f`` and convex contraction modulus ``psi``.

    ``gamma_threshold`` bounds the region ``f(|x - y|) <= gamma`` in which the
    drift contracts at rate ``contraction_const * psi``.
    """

    f: Callable
    psi: Callable
    gamma_threshold: float
    contraction_const: float
    f_deriv: Callable | None = None
    f_label: str = "custom"
    psi_label: str = "custom"
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        if not (self.gamma_threshold > 0 and self.contraction_const > 0):
            raise ValueError("gamma_threshold and contraction_const must be positive")
        if self.validate:
            problems = self.check()
            if problems:
                raise ValueError("invalid modulus pair: " + "; ".join(problems))

    @classmethod
    def from_names(cls, f="identity", psi="identity", gamma=1.0, Gamma=1.0):
        fv, fd = f_from_name(f)
        return cls(fv, psi_from_name(psi), float(gamma), float(Gamma), f_deriv=fd,
                   f_label=f, psi_label=psi)

    def fprime(self, t, h=1e-7):
        """Right-hand derivative of ``f`` (a.e. derivative at kinks)."""
        if self.f_deriv is not None:
            return self.f_deriv(t)
        t = np.asarray(t, dtype=float)
        return (self.f(t + h) - self.f(t)) / h

    def check(self, grid=None, tol=1e-9):
        if grid is None:
            grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e3, 300)])
        grid = np.asarray(grid, dtype=float)
        problems = []
        fv = np.asarray(self.f(grid), dtype=float)
        pv = np.asarray(self.psi(grid), dtype=float)
        if fv[0] != 0 or np.any(fv[1:] <= 0):
            problems.append("f must vanish exactly at 0 and only there")
        if pv[0] != 0 or np.any(pv[1:] <= 0):
            problems.append("psi must vanish exactly at 0 and only there")
        if np.any(np.diff(fv) < -tol * np.maximum(1.0, np.abs(fv[:-1]))):
            problems.append("f is not non-decreasing")
        h = np.diff(grid)
        fs = np.diff(fv) / h
        ps = np.diff(pv) / h
        if np.any(np.diff(fs) > tol * np.maximum(1.0, np.abs(fs[:-1]))):
            problems.append("f is not concave")
        if np.any(np.diff(ps) < -tol * np.maximum(1.0, np.abs(ps[:-1]))):
            problems.append("psi is not convex (only convex psi is supported)")
        return problems


@dataclass(frozen=True)
class GronwallCurve:
    times: np.ndarray
    bound_values: np.ndarray
    kappa: float


@dataclass(frozen=True)
class GronwallReport:
    """Comparison of a sampled series with ``Psi_{f0}^{-1}(Gamma t)``."""

    max_excess: float
    time_of_max: float
    violated: bool
    tolerance: float
    # right-hand difference quotient check of f' <= -Gamma psi(f)
    max_slope_excess: float


# -- named families ---------------------------------------------------------

_NAME = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*$")


def _parse(name):
    m = _NAME.match(name)
    if not m:
        raise ValueError(f"cannot parse family name {name!r}")
    return m.group(1), (None if m.group(2) is None else float(m.group(2)))


def rate_from_name(name):
    """``power(alpha)``, ``log`` (``1 + ln t``) or ``identity``."""
    kind, arg = _parse(name)
    if kind == "power":
        if arg is None or not 0 < arg <= 1:
            raise ValueError("power(alpha) needs 0 < alpha <= 1")
        a = arg
        return RateFunction(lambda t: np.power(t, a), lambda t: a * np.power(t, a - 1.0),
                            f"power({a:g})", lambda lt: a * lt)
    if kind == "log" and arg is None:
        return RateFunction(lambda t: 1.0 + np.log(t), lambda t: 1.0 / np.asarray(t, dtype=float),
                            "log", lambda lt: np.log1p(lt))
    if kind == "identity" and arg is None:
        return RateFunction(lambda t: np.asarray(t, dtype=float), _vectorize(lambda t: 1.0),
                            "identity", lambda lt: np.asarray(lt, dtype=float))
    raise ValueError(f"unknown rate family {name!r}")


def f_from_name(name):
    """Metric modulus: ``identity``, ``indicator``, ``power(a)`` or ``log``.

    Returns ``(f, f')``.
    """
    kind, arg = _parse(name)
    if kind == "identity" and arg is None:
        return (lambda t: np.asarray(t, dtype=float) * 1.0, _vectorize(lambda t: 1.0))
    if kind == "indicator" and arg is None:
        return (lambda t: (np.asarray(t) > 0).astype(float), _vectorize(lambda t: 0.0))
    if kind == "power":
        if arg is None or not 0 < arg <= 1:
            raise ValueError("f = power(a) needs 0 < a <= 1")
        a = arg
        return (lambda t: np.power(t, a),
                lambda t: a * np.power(np.maximum(t, 1e-300), a - 1.0))
    if kind == "log" and arg is None:
        return (lambda t: np.log1p(t), lambda t: 1.0 / (1.0 + np.asarray(t, dtype=float)))
    raise ValueError(f"unknown f family {name!r}")


def psi_from_name(name):
    """Convex modulus: ``identity``, ``power(p)`` (p >= 1) or ``log`` (``s ln(1+s)``)."""
    kind, arg = _parse(name)
    if kind == "identity" and arg is None:
        return lambda s: np.asarray(s, dtype=float) * 1.0
    if kind == "power":
        if arg is None or arg < 1:
            raise ValueError("psi = power(p) needs p >= 1")
        p = arg
        return lambda s: np.power(s, p)
    if kind == "log" and arg is None:
        return lambda s: np.asarray(s, dtype=float) * np.log1p(s)
    raise ValueError(f"unknown psi family {name!r}")


# -- Phi ---------------------------------------------------------------------

def _inv_rate(rate):
    return lambda s: 1.0 / np.asarray(rate(s), dtype=float)


def phi_big(rate: RateFunction, t: float) -> float:
    """``Phi(t) = int_1^t ds / phi(s)`` for ``t >= 1``."""
    t = float(t)
    if not t >= 1.0:
        raise ValueError(f"Phi is defined on [1, inf); got t={t}")
    val, _ = gauss_kronrod(_inv_rate(rate), 1.0, t, ABSTOL, RELTOL)
    return val


def _bisect_newton(F, dF, lo, hi, F_lo, F_hi, increment, width_scale=1e-12, newton_steps=2):
    """Root of an increasing function ``F`` bracketed by ``[lo, hi]``.

    ``increment(a, b)`` returns ``F(b) - F(a)`` for ``a < b``; values are kept
    incrementally so that no evaluation restarts from the base point.
    """
    while hi - lo > width_scale * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        F_mid = F_lo + increment(lo, mid)
        if F_mid > 0:
            hi, F_hi = mid, F_mid
        else:
            lo, F_lo = mid, F_mid
    # pick the better end and polish
    t, Ft = (lo, F_lo) if abs(F_lo) <= abs(F_hi) else (hi, F_hi)
    for _ in range(newton_steps):
        d = dF(t)
        if not (d > 0 and math.isfinite(d)):
            break
        nt = t - Ft / d
        if not (lo <= nt <= hi):
            break
        Ft = Ft + (increment(t, nt) if nt > t else -increment(nt, t))
        t = nt
    return t, Ft


def phi_big_inv(rate: RateFunction, u: float, tol: float = 1e-10) -> float:
    """``Phi^{-1}(u)``: bracketed bisection polished by Newton steps."""
    u = float(u)
    if not u >= 0:
        raise ValueError(f"Phi^{{-1}} needs u >= 0; got {u}")
    if u == 0:
        return 1.0
    inv = _inv_rate(rate)

    def increment(a, b):
        return gauss_kronrod(inv, a, b, ABSTOL * 1e-2, RELTOL * 1e-4)[0]

    lo, F_lo = 1.0, -u
    hi = 2.0
    F_hi = F_lo + increment(lo, hi)
    while F_hi < 0:
        nxt = 2.0 * hi
        if nxt > 1e300:
            raise RateRangeError(
                f"u={u} exceeds the reachable range of Phi; largest value reached is "
                f"Phi({hi:.3g}) = {F_hi + u!r}",
                largest=F_hi + u,
            )
        lo, F_lo = hi, F_hi
        F_hi = F_hi + increment(hi, nxt)
        hi = nxt
    t, Ft = _bisect_newton(None, lambda s: float(inv(np.array([s]))[0]), lo, hi, F_lo, F_hi,
                           increment)
    if abs(Ft) > tol * max(1.0, u):
        # the bracket was fine, the integral was not: tighten locally
        t, Ft = _bisect_newton(None, lambda s: float(inv(np.array([s]))[0]), lo, hi, F_lo, F_hi,
                               increment, width_scale=1e-15, newton_steps=4)
    return t


def tv_rate_at(rate: RateFunction, t: float) -> float:
    """Total-variation rate ``phi(Phi^{-1}(t))``."""
    t = float(t)
    if not t >= 0:
        raise ValueError("time must be non-negative")
    return float(rate(np.array([phi_big_inv(rate, t)]))[0])


# -- Psi ---------------------------------------------------------------------

def _inv_psi(mod):
    return lambda s: 1.0 / np.asarray(mod.psi(s), dtype=float)


def _psi_tail(mod, t):
    res = integrate_to_infinity(_inv_psi(mod), t, abstol=ABSTOL, reltol=RELTOL)
    if not res.finite:
        raise DivergenceError(
            f"int_t^inf ds/psi(s) diverges (decay exponent estimate {res.decay_exponent:.3g} "
            f"at s={res.upper:.3g})"
        )
    return res.value


def psi_big(mod: ModulusPair, kappa: float, t: float) -> float:
    """``Psi_kappa(t) = int_t^kappa ds / psi(s)``; ``kappa`` may be ``inf``."""
    kappa = float(kappa)
    t = float(t)
    if not (kappa > 0 and 0 < t <= kappa):
        raise ValueError(f"Psi_kappa(t) needs 0 < t <= kappa; got t={t}, kappa={kappa}")
    if math.isinf(kappa):
        return _psi_tail(mod, t)
    return gauss_kronrod(_inv_psi(mod), t, kappa, ABSTOL, RELTOL)[0]


class _PsiInverter:
    """Inverts ``Psi_kappa`` while caching the last solved point.

    Sequences of increasing ``u`` (as in a Gronwall curve) then cost only the
    integral between consecutive solutions.
    """

    def __init__(self, mod, kappa):
        self.mod = mod
        self.kappa = float(kappa)
        self.inv = _inv_psi(mod)
        if math.isinf(self.kappa):
            # anchor at s=1 with the full tail value
            self.anchor = (1.0, _psi_tail(mod, 1.0))
        else:
            self.anchor = (self.kappa, 0.0)

    def integral(self, a, b):
        return gauss_kronrod(self.inv, a, b, ABSTOL * 1e-2, RELTOL * 1e-4)[0]

    def __call__(self, u):
        u = float(u)
        if not u >= 0:
            raise ValueError("Psi^{-1} needs u >= 0")
        if u == 0:
            return self.kappa
        t0, P0 = self.anchor
        # G(s) = u - Psi(s) is increasing in s; G(lo) <= 0 <= G(hi)
        if P0 >= u:
            lo, G_lo = t0, u - P0
            hi = min(2.0 * t0, self.kappa)
            G_hi = G_lo + self.integral(lo, hi)
            while G_hi < 0:
                if math.isinf(self.kappa) and 2.0 * hi > 1e300:
                    return math.inf
                lo, G_lo = hi, G_hi
                nxt = min(2.0 * hi, self.kappa)
                G_hi = G_hi + self.integral(hi, nxt)
                hi = nxt
        else:
            hi, G_hi = t0, u - P0
            lo = 0.5 * t0
            G_lo = G_hi - self.integral(lo, hi)
            while G_lo > 0:
                nxt = 0.5 * lo
                if nxt < 1e-300:
                    raise RateRangeError(
                        f"Psi stays below u={u} down to t={lo:.3g}; psi is not singular "
                        f"enough at zero (largest value {u - G_lo!r})",
                        largest=u - G_lo,
                    )
                hi, G_hi = lo, G_lo
                G_lo = G_lo - self.integral(nxt, lo)
                lo = nxt
        t, Gt = _bisect_newton(None, lambda s: float(self.inv(np.array([s]))[0]), lo, hi,
                               G_lo, G_hi, self.integral)
        self.anchor = (t, u - Gt)
        return t


def psi_big_inv(mod: ModulusPair, kappa: float, u: float) -> float:
    """``Psi_kappa^{-1}(u)``, a value in ``(0, kappa]``; ``kappa = inf`` allowed."""
    return _PsiInverter(mod, kappa)(u)


def gronwall_bound(mod: ModulusPair, f0: float, horizon: float, grid_n: int = 201) -> GronwallCurve:
    """Tabulate ``Psi_{f0}^{-1}(Gamma t)`` on ``linspace(0, horizon, grid_n)``."""
    if not f0 > 0:
        raise ValueError("f0 must be positive")
    times = np.linspace(0.0, float(horizon), int(grid_n))
    inv = _PsiInverter(mod, f0)
    vals = np.array([inv(mod.contraction_const * t) for t in times])
    return GronwallCurve(times, vals, float(f0))


def verify_gronwall(times, samples, mod: ModulusPair, f0: float, tol: float = 1e-8) -> GronwallReport:
    """Check a sampled series against the comparison bound of the Gronwall lemma.

    Differentiability is only assumed almost everywhere, so the slope check
    uses right-hand difference quotients.
    """
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples, dtype=float)
    if times.size == 0 or samples.size == 0:
        raise ValueError("empty series")
    if times.shape != samples.shape:
        raise ValueError("times and samples must have the same shape")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    order_u = mod.contraction_const * (times - times[0])
    inv = _PsiInverter(mod, f0)
    bound = np.array([inv(u) for u in order_u])
    excess = samples - bound
    k = int(np.argmax(excess))
    if samples.size > 1:
        slope = np.diff(samples) / np.diff(times)
        slope_excess = float(np.max(slope + mod.contraction_const * mod.psi(np.maximum(samples[:-1], 0.0))))
    else:
        slope_excess = -math.inf
    return GronwallReport(float(excess[k]), float(times[k]), bool(excess[k] > tol), tol, slope_excess)


# -- Wasserstein bounds ---------------------------------------------------------

def chaining_delta(mod: ModulusPair) -> float:
    """``delta = inf{t > 0 : f(1/t) <= gamma}`` used by the chaining bound."""
    g = mod.gamma_threshold
    f = mod.f
    if float(f(np.array([1e300]))[0]) <= g:
        return 0.0

    def ok(t):
        return float(f(np.array([1.0 / t]))[0]) <= g

    hi = 1.0
    while not ok(hi):
        hi *= 2.0
        if hi > 1e300:
            raise RateRangeError("f stays above gamma on every scale")
    lo = hi / 2.0
    while ok(lo) and lo > 1e-300:
        hi, lo = lo, lo / 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def wasserstein_bound(mod: ModulusPair, x, y, times, kappa: float | None = None):
    """Predicted bound on ``W_{f,p}(delta_x P_t, delta_y P_t)`` at ``times``.

    Uses ``Psi_{f(|x-y|)}^{-1}`` when ``f(|x-y|) <= gamma`` (or ``Psi_kappa^{-1}``
    for a supplied ``kappa >= gamma``); otherwise chains ``ceil(delta |x-y|)``
    short segments, each bounded through ``Psi_gamma^{-1}``.

    Returns ``(multiplier, kappa_used, values)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    times = np.asarray(times, dtype=float)
    dist = float(np.linalg.norm(x - y))
    if dist == 0:
        return 1, 0.0, np.zeros_like(times)
    fd = float(mod.f(np.array([dist]))[0])
    g = mod.gamma_threshold
    if fd <= g:
        mult = 1
        k = fd if kappa is None else float(kappa)
        if kappa is not None and k < g:
            raise ValueError("kappa must be at least gamma")
    else:
        mult = int(math.ceil(chaining_delta(mod) * dist))
        k = g if kappa is None else float(kappa)
        if k < g:
            raise ValueError("kappa must be at least gamma")
    inv = _PsiInverter(mod, k)
    order = np.argsort(times)
    vals = np.empty_like(times)
    for i in order:
        vals[i] = inv(mod.contraction_const * times[i])
    return mult, k, mult * vals


