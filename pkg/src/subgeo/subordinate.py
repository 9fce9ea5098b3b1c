"""Rate transforms under Bochner subordination.

For a subordinator ``S`` and a rate curve ``r`` the subordinated rate is
``r_phi(t) = (E[r(S_t)^p])^{1/p}`` (``p = 1`` for total variation).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, stats

from .simulate import SubordinatorSpec, subordinator_sample

__all__ = ["SubordinatedRate", "RateEstimate", "subordinate_rate", "subordinate_curve", "curve_csv"]


@dataclass(frozen=True)
class SubordinatedRate:
    """Base rate ``r`` composed with a subordinator.

    ``method`` is ``"monte_carlo"`` (``n`` samples split into ``batches``
    batches with their own substreams) or ``"density_quadrature"`` (gamma
    family only).
    """

    base_rate: Callable
    spec: SubordinatorSpec
    p: float = 1.0
    method: str = "monte_carlo"
    n: int = 100_000
    seed: int = 0
    batches: int = 20
    label: str = "custom"

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError("p must be at least 1")
        if self.method not in ("monte_carlo", "density_quadrature"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "density_quadrature" and self.spec.family not in ("gamma", "drift_only"):
            raise ValueError("density quadrature is available for the gamma family only")
        if self.method == "monte_carlo" and (self.n < 2 * self.batches or self.batches < 2):
            raise ValueError("need at least two batches of two samples")


@dataclass(frozen=True)
class RateEstimate:
    value: float
    se: float
    heavy_tail: bool = False


def _deterministic(spec):
    return spec.family == "drift_only" or (spec.family == "compound_poisson" and spec.lam == 0)


def subordinate_rate(sr: SubordinatedRate, t: float) -> RateEstimate:
    """``r_phi(t)`` with a batch standard error.

    The Monte Carlo error of the mean of ``r^p`` is carried through the
    ``p``-th root by the delta method.  ``heavy_tail`` is set when the top
    decile of samples carries more than 90% of the total of ``r^p``.
    """
    t = float(t)
    if t < 0:
        raise ValueError("t must be non-negative")
    r, p, spec = sr.base_rate, float(sr.p), sr.spec
    if _deterministic(spec) or t == 0:
        return RateEstimate(float(r(spec.b * t)), 0.0)
    if sr.method == "density_quadrature":
        law = stats.gamma(spec.a * t, scale=1.0 / spec.b)
        g = lambda s: float(r(s)) ** p * law.pdf(s)
        lo, hi = law.ppf(1e-300) if spec.a * t >= 1 else 0.0, law.isf(1e-17)
        # split at the mode so that quad sees the peak
        mode = max((spec.a * t - 1.0) / spec.b, 0.0)
        pts = [lo] + ([mode] if lo < mode < hi else []) + [hi]
        m = sum(integrate.quad(g, a, b, limit=500, epsabs=1e-15, epsrel=1e-12)[0]
                for a, b in zip(pts[:-1], pts[1:]))
        return RateEstimate(float(m ** (1.0 / p)), 0.0)
    nb = sr.batches
    sizes = np.full(nb, sr.n // nb)
    sizes[: sr.n % nb] += 1
    means, allv = [], []
    for b in range(nb):
        s = subordinator_sample(spec, t, int(sizes[b]), sr.seed, batch=b)
        v = np.asarray(r(s), dtype=float) ** p
        means.append(v.mean())
        allv.append(v)
    v = np.concatenate(allv)
    means = np.asarray(means)
    m = float(np.sum(means * sizes) / sizes.sum())
    se_m = float(np.std(means, ddof=1) / math.sqrt(nb))
    tot = v.sum()
    heavy = False
    if tot > 0:
        top = np.sort(v)[-max(1, v.size // 10):]
        heavy = bool(top.sum() > 0.9 * tot)
    val = m ** (1.0 / p)
    se = se_m * (val / (p * m)) if m > 0 else se_m
    return RateEstimate(float(val), float(se), heavy)


def subordinate_curve(sr: SubordinatedRate, times):
    """Arrays ``(values, se, heavy_flags)`` over ``times``."""
    est = [subordinate_rate(sr, t) for t in times]
    return (np.array([e.value for e in est]), np.array([e.se for e in est]),
            np.array([e.heavy_tail for e in est]))


def curve_csv(times, values, se) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["t", "r_phi", "se"])
    for t, v, s in zip(times, values, se):
        w.writerow([repr(float(t)), repr(float(v)), repr(float(s))])
    return buf.getvalue()
