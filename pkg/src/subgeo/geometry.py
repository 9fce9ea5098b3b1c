"""Radial drift functionals and the integral test for sub-geometric ergodicity.

For a centre ``x0`` and ``x != x0`` put ``A = Tr c / 2``, ``B = <x-x0, b>`` and
``C = <x-x0, c (x-x0)> / |x-x0|^2``.  Sphere-wise extrema give

    gamma(r) = inf_{|x-x0|=r} C,    iota(r) = sup_{|x-x0|=r} (2A - C + 2B) / C,

and ``I(r) = int_{r0}^r iota(s)/s ds``.  The process is sub-geometrically
ergodic with rate ``phi`` when

    Lambda = int_{r0}^inf phi(int_{r0}^u e^{-I} + 1) e^{I(u)} / gamma(u) du < inf.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from numpy.polynomial import legendre as L

from .models import CoefficientModel, _as_batch
from .quadrature import LogCumulative, gauss_kronrod, gauss_legendre, integrate_to_infinity
from .rates import RateFunction, rate_from_name

__all__ = [
    "Functionals",
    "RadialProfile",
    "LambdaVerdict",
    "SubgeoVerdict",
    "P1Verdict",
    "SubBound",
    "PreconditionError",
    "HypothesisError",
    "DomainError",
    "pointwise_functionals",
    "sphere_directions",
    "radial_profile",
    "n_matrix_profile",
    "lambda_constant",
    "sweep_lambda",
    "check_subgeo_classical",
    "check_p1_implication",
    "sub_sufficient",
    "doubling_log_integral",
    "FlatnessCertificate",
    "certify_flatness",
    "moment_growth_constant",
]


class PreconditionError(ValueError):
    """A hypothesis of the integral test fails at a specific radius."""

    def __init__(self, message, radius=None):
        super().__init__(message)
        self.radius = radius


class HypothesisError(ValueError):
    """The hypotheses of a sufficient condition are not met."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


class DomainError(ValueError):
    pass


class Functionals(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    N: np.ndarray | None = None


def pointwise_functionals(model: CoefficientModel, x0, x, use_n=False) -> Functionals:
    """``A``, ``B`` and ``C`` at the points ``x`` (batch), relative to ``x0``.

    With jumps ``B`` uses the compensated drift ``b - int_{B_1} y nu(x, dy)``;
    ``use_n`` adds ``N = <z, (c + n) z> / |z|^2`` with ``n_ij = int_{B_1} y_i y_j nu``.
    """
    x = _as_batch(x, model.dim)
    z = x - np.asarray(x0, dtype=float).reshape(1, -1)
    r2 = np.sum(z * z, axis=1)
    if np.any(r2 == 0):
        raise DomainError("the functionals are undefined at x = x0")
    c = model.c(x)
    A = 0.5 * np.trace(c, axis1=1, axis2=2)
    B = np.sum(z * model.compensated_drift(x), axis=1)
    C = np.einsum("ni,nij,nj->n", z, c, z) / r2
    N = None
    if use_n:
        n = np.zeros_like(c) if not model.has_jumps else np.asarray(model.jump.second_moment(x), dtype=float)
        N = np.einsum("ni,nij,nj->n", z, c + n, z) / r2
    return Functionals(A, B, C, N)


def sphere_directions(dim, n=512, seed=0):
    """Unit vectors covering the sphere: exact in d=1, equispaced in d=2,
    Fibonacci lattice in d=3 and scrambled Sobol points above."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        a = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(a), np.sin(a)])
    if dim == 3:
        k = np.arange(n) + 0.5
        zc = 1 - 2 * k / n
        ph = np.pi * (1 + 5 ** 0.5) * k
        s = np.sqrt(1 - zc * zc)
        return np.column_stack([s * np.cos(ph), s * np.sin(ph), zc])
    from scipy.stats import norm, qmc

    u = qmc.Sobol(dim, scramble=True, seed=seed).random(n)
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


class _CellLegendre:
    """Piecewise polynomial given by Legendre coefficients on each cell."""

    def __init__(self, edges, coef, offsets=None):
        self.edges = np.asarray(edges, dtype=float)
        self.coef = np.asarray(coef, dtype=float)
        self.offsets = offsets

    @classmethod
    def from_nodes(cls, edges, values):
        """Interpolate values at the Gauss-Legendre nodes of every cell."""
        m = values.shape[1]
        x, w = gauss_legendre(m)
        P = L.legvander(x, m - 1)  # (m, m)
        M = (P * w[:, None]).T * ((2 * np.arange(m) + 1) / 2.0)[:, None]
        return cls(edges, values @ M.T)

    def antiderivative(self):
        """Cumulative integral from ``edges[0]``; continuous across cells."""
        h = np.diff(self.edges)
        ic = L.legint(self.coef, lbnd=-1, axis=1) * (h / 2.0)[:, None]
        cell_tot = h * self.coef[:, 0]
        offsets = np.concatenate([[0.0], np.cumsum(cell_tot)])
        return _CellLegendre(self.edges, ic, offsets)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        shape = r.shape
        r = r.ravel()
        k = np.clip(np.searchsorted(self.edges, r, side="right") - 1, 0, self.edges.size - 2)
        lo = self.edges[k]
        hi = self.edges[k + 1]
        u = 2.0 * (r - lo) / (hi - lo) - 1.0
        deg = self.coef.shape[1]
        # Legendre three-term recurrence, one row per point
        p0 = np.ones_like(u)
        out = self.coef[k, 0] * p0
        if deg > 1:
            p1 = u.copy()
            out = out + self.coef[k, 1] * p1
            for j in range(1, deg - 1):
                p2 = ((2 * j + 1) * u * p1 - j * p0) / (j + 1)
                out = out + self.coef[k, j + 1] * p2
                p0, p1 = p1, p2
        if self.offsets is not None:
            # the antiderivative vanishes at each left edge; drop recurrence round-off there
            out = np.where(u == -1.0, 0.0, out) + self.offsets[k]
        return out.reshape(shape)


@dataclass(frozen=True)
class RadialProfile:
    """Tabulated ``gamma``, ``iota`` and ``I`` on ``[r0, grid[-1]]``.

    ``grid`` holds the cell edges; ``gamma_vals``, ``iota_vals`` and ``I_vals``
    are the interpolated values there.  Between edges the profile is
    evaluated through per-cell polynomials fitted at Gauss-Legendre nodes, and
    ``I`` is their exact antiderivative, so ``I(r0) = 0`` exactly.
    """

    center: np.ndarray
    base_radius: float
    grid: np.ndarray
    gamma_vals: np.ndarray
    iota_vals: np.ndarray
    I_vals: np.ndarray
    sphere_samples: int
    nonpositive_gamma: tuple = ()
    settings: dict = field(default_factory=dict)
    model: CoefficientModel | None = field(default=None, repr=False)
    _gamma: _CellLegendre | None = field(default=None, repr=False)
    _iota_over_r: _CellLegendre | None = field(default=None, repr=False)
    _I: _CellLegendre | None = field(default=None, repr=False)
    _node_gamma: np.ndarray | None = field(default=None, repr=False)
    _node_iota: np.ndarray | None = field(default=None, repr=False)
    _hyp_worst: tuple | None = field(default=None, repr=False)

    @property
    def r_max(self):
        return float(self.grid[-1])

    def _check_range(self, r):
        r = np.asarray(r, dtype=float)
        tol = 1e-12 * max(1.0, self.r_max)
        if np.any(r < self.base_radius - tol) or np.any(r > self.r_max + tol):
            raise ValueError(f"radius outside the profile range [{self.base_radius}, {self.r_max}]")
        return r

    def gamma(self, r):
        return self._gamma(self._check_range(r))

    def iota(self, r):
        r = self._check_range(r)
        return self._iota_over_r(r) * r

    def I(self, r):
        return self._I(self._check_range(r))

    def extended(self, r_max):
        """Profile on a longer range, reusing every computed cell."""
        if r_max <= self.r_max:
            return self
        s = self.settings
        h = s["cell"]
        n_new = int(math.ceil((r_max - self.r_max) / h - 1e-9))
        new_edges = self.r_max + h * np.arange(1, n_new + 1)
        edges = np.concatenate([self.grid, new_edges])
        g_new, i_new, worst = _profile_nodes(self.model, self.center, edges[self.grid.size - 1:], s,
                                             start_index=self.grid.size - 1)
        node_g = np.vstack([self._node_gamma, g_new])
        node_i = np.vstack([self._node_iota, i_new])
        prev_worst = self._hyp_worst
        if worst is not None and (prev_worst is None or worst[0] > prev_worst[0]):
            prev_worst = worst
        return _assemble(self.model, self.center, self.base_radius, edges, node_g, node_i, s, prev_worst)


def _sphere_extrema(model, x0, radii, dirs, use_n, refine, rng):
    """gamma and iota at each radius (vector), by sampling plus local refinement."""
    d = model.dim
    nr, k = radii.size, dirs.shape[0]

    def evaluate(u):
        # u: (nr, q, d) unit directions
        q = u.shape[1]
        pts = x0[None, None, :] + radii[:, None, None] * u
        f = pointwise_functionals(model, x0, pts.reshape(-1, d), use_n=use_n)
        C = f.C.reshape(nr, q)
        den = (f.N if use_n else f.C).reshape(nr, q)
        num = (2 * f.A - f.C + 2 * f.B).reshape(nr, q)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(den > 0, num / den, np.inf)
        return den, ratio, num

    u0 = np.broadcast_to(dirs, (nr, k, d))
    den, ratio, num = evaluate(u0)
    gi = np.argmin(den, axis=1)
    ii = np.argmax(ratio, axis=1)
    gam = den[np.arange(nr), gi]
    iot = ratio[np.arange(nr), ii]
    worst_num = (float(np.max(num)), radii[np.argmax(np.max(num, axis=1))])
    if refine and d >= 2:
        ug = dirs[gi]
        ui = dirs[ii]
        for eps in (0.1, 0.03, 0.01):
            for target in ("g", "i"):
                base = ug if target == "g" else ui
                cand = base[:, None, :] + eps * rng.standard_normal((nr, 16, d))
                cand /= np.linalg.norm(cand, axis=2, keepdims=True)
                cden, cratio, cnum = evaluate(cand)
                worst_num = max(worst_num, (float(np.max(cnum)), radii[np.argmax(np.max(cnum, axis=1))]))
                if target == "g":
                    j = np.argmin(cden, axis=1)
                    v = cden[np.arange(nr), j]
                    better = v < gam
                    gam = np.where(better, v, gam)
                    ug = np.where(better[:, None], cand[np.arange(nr), j], ug)
                else:
                    j = np.argmax(cratio, axis=1)
                    v = cratio[np.arange(nr), j]
                    better = v > iot
                    iot = np.where(better, v, iot)
                    ui = np.where(better[:, None], cand[np.arange(nr), j], ui)
    return gam, iot, worst_num


def _profile_nodes(model, x0, edges, s, start_index=0):
    """Sphere extrema at the Gauss-Legendre nodes of each cell in ``edges``."""
    m = s["nodes"]
    xg, _ = gauss_legendre(m)
    lo, hi = edges[:-1], edges[1:]
    nodes = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * xg[None, :]
    dirs = sphere_directions(model.dim, s["sphere_samples"], s["seed"])
    ncell = nodes.shape[0]
    chunk = max(1, int(s.get("chunk", 64)))

    def work(i0):
        i1 = min(ncell, i0 + chunk)
        rng = np.random.default_rng([s["seed"], start_index + i0])
        r = nodes[i0:i1].ravel()
        g, io, w = _sphere_extrema(model, x0, r, dirs, s["use_n"], s["refine"], rng)
        return g.reshape(i1 - i0, m), io.reshape(i1 - i0, m), w

    starts = list(range(0, ncell, chunk))
    if s.get("workers", 1) > 1:
        with ThreadPoolExecutor(s["workers"]) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(i) for i in starts]
    g = np.vstack([p[0] for p in parts])
    io = np.vstack([p[1] for p in parts])
    worst = max((p[2] for p in parts), key=lambda t: t[0])
    mg = s["margin"]
    if mg:
        g = g * (1 - mg)
        io = io + mg * np.abs(io)
    return g, io, worst


def _assemble(model, x0, r0, edges, node_g, node_i, s, worst):
    m = s["nodes"]
    xg, _ = gauss_legendre(m)
    lo, hi = edges[:-1], edges[1:]
    nodes = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * xg[None, :]
    bad = np.unique(nodes[node_g <= 0])
    with np.errstate(invalid="ignore"):
        io_over_r = np.where(node_g > 0, node_i / nodes, np.nan)
    gp = _CellLegendre.from_nodes(edges, node_g)
    ip = _CellLegendre.from_nodes(edges, io_over_r)
    Ip = ip.antiderivative()
    return RadialProfile(
        center=x0,
        base_radius=float(r0),
        grid=edges,
        gamma_vals=gp(edges),
        iota_vals=ip(edges) * edges,
        I_vals=Ip(edges),
        sphere_samples=int(s["sphere_samples"]) if model.dim > 1 else 2,
        nonpositive_gamma=tuple(float(b) for b in bad[:20]),
        settings=s,
        model=model,
        _gamma=gp,
        _iota_over_r=ip,
        _I=Ip,
        _node_gamma=node_g,
        _node_iota=node_i,
        _hyp_worst=worst,
    )


def radial_profile(model: CoefficientModel, x0, r0, grid=None, sphere_samples=512, r_max=None,
                   cell=0.25, nodes=8, use_n=False, margin=0.0, refine=True, workers=1,
                   seed=0) -> RadialProfile:
    """Tabulate ``gamma``, ``iota`` and ``I`` from ``r0`` outwards.

    Parameters
    ----------
    grid : array, optional
        Cell edges starting at ``r0``.  Defaults to equal cells of width
        ``cell`` up to ``r_max`` (``r0 + 10`` when not given).
    sphere_samples : int
        Directions used for the sphere extrema when ``d >= 2``; the sampled
        infimum over-estimates ``gamma`` and the sampled supremum
        under-estimates ``iota``.  ``margin`` inflates both conservatively
        (relative amount).
    use_n : bool
        Use ``N = C + n`` (second jump moments) in place of ``C`` in the
        denominators.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != model.dim:
        raise ValueError("x0 must have d coordinates")
    r0 = float(r0)
    if grid is None:
        if r0 <= 0:
            raise ValueError("the profile needs r0 > 0 (iota/s is singular at 0)")
        r_max = r0 + 10.0 if r_max is None else float(r_max)
        n = max(1, int(math.ceil((r_max - r0) / cell - 1e-9)))
        grid = r0 + cell * np.arange(n + 1)
    else:
        grid = np.asarray(grid, dtype=float)
        if abs(grid[0] - r0) > 1e-14 * max(1.0, r0) or np.any(np.diff(grid) <= 0) or grid[0] <= 0:
            raise ValueError("grid must be increasing, positive and start at r0")
        cell = float(np.max(np.diff(grid)))
    s = dict(sphere_samples=int(sphere_samples), nodes=int(nodes), use_n=bool(use_n),
             margin=float(margin), refine=bool(refine), workers=int(workers), seed=int(seed),
             cell=float(cell))
    node_g, node_i, worst = _profile_nodes(model, x0, grid, s)
    return _assemble(model, x0, r0, grid, node_g, node_i, s, worst)


def n_matrix_profile(model: CoefficientModel, x0, r0, grid=None, **kw) -> RadialProfile:
    """Profile with ``N = <z, (c + n) z>/|z|^2`` replacing ``C`` in gamma and iota.

    Requires ``2A - C + 2B <= 0`` on the sampled region ``|x - x0| >= r0``.
    """
    prof = radial_profile(model, x0, r0, grid=grid, use_n=True, **kw)
    worst = prof._hyp_worst
    if worst is not None and worst[0] > 1e-12:
        raise HypothesisError(
            f"2A - C + 2B = {worst[0]:.6g} > 0 at radius {worst[1]:.6g}; the N-matrix "
            "replacement needs it non-positive", worst=worst)
    return prof


# -- Lambda ------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaVerdict:
    """Numerical verdict on ``Lambda < inf``.

    ``status`` is ``"finite"``, ``"divergent"`` (the log-integrand does not
    decay faster than ``1/r``) or ``"undetermined"`` (it decays, but the
    tail test did not settle within the radius budget).
    """

    value: float
    finite: bool
    tail_bound: float
    diagnostics: dict
    status: str = "finite"
    log_value: float = math.nan
    r_max: float = math.nan
    profile: RadialProfile | None = field(default=None, repr=False)
    rate: RateFunction | None = field(default=None, repr=False)
    log_J: LogCumulative | None = field(default=None, repr=False)
    log_g: LogCumulative | None = field(default=None, repr=False)


class CellBudgetError(RuntimeError):
    pass


def _adaptive_edges(edges, logf, max_jump=2.0, rounds=3, max_cells=400_000):
    """Subdivide cells so that ``log f`` changes by at most ``max_jump`` per cell."""
    for _ in range(rounds):
        v = logf(edges)
        mid = logf(0.5 * (edges[:-1] + edges[1:]))
        jump = np.maximum(np.abs(np.diff(v)), 2 * np.maximum(np.abs(mid - v[:-1]), np.abs(v[1:] - mid)))
        jump = np.where(np.isfinite(jump), jump, 0.0)
        parts = np.maximum(1, np.ceil(jump / max_jump)).astype(int)
        if np.all(parts == 1):
            break
        if parts.sum() > max_cells:
            raise CellBudgetError(f"more than {max_cells} cells needed to resolve the integrand")
        pieces = [edges[:1]]
        for a, b, p in zip(edges[:-1], edges[1:], parts):
            pieces.append(a + (b - a) * np.arange(1, p + 1) / p)
        edges = np.concatenate(pieces)
    return edges


def _log_integrands(profile, rate, log_J_cum):
    def log_J(u):
        return log_J_cum.left(u)

    def log_g(u):
        u = np.asarray(u, dtype=float)
        lj1 = np.logaddexp(log_J(u), 0.0)
        gam = profile.gamma(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            return rate.log_of(lj1) + profile.I(u) - np.log(gam)
    return log_g


class _Doubling(NamedTuple):
    status: str
    log_values: list
    slopes: list
    radii: list
    profile: RadialProfile
    cumulative: LogCumulative
    logf: Callable
    extra: object
    log_tail: float


def doubling_log_integral(profile: RadialProfile, build, span=None, rel_tol=1e-8, slope_limit=-1.1,
                          max_stages=12, radius_cap=2e4, need_gamma=True, tail_tol=1e-2) -> _Doubling:
    """Improper integral ``int_{r0}^inf f`` with ``f`` given in log form.

    ``build(prof, R)`` returns ``(LogCumulative on [r0, R], logf, extra)``.  The
    upper limit ``R`` doubles (measured from ``r0``) until the fitted slope of
    ``log f`` against ``log r`` over the last decade is at most
    ``slope_limit`` and three successive doublings change the value by less
    than ``rel_tol``; three consecutive stages with slope above ``-1`` mark
    the integral divergent.  If the cell budget stops the doubling first, a
    power tail with the last two slopes below ``slope_limit`` is accepted when
    its analytic remainder is at most ``tail_tol`` of the value.
    """
    r0 = profile.base_radius
    if span is None:
        span = profile.r_max - r0
    R = r0 + span
    values, slopes, radii = [], [], []
    status = "undetermined"
    flat = 0
    budget_hit = False
    prof = profile
    lc = logf = extra = None
    for stage in range(max_stages):
        if R > radius_cap and stage > 0:
            break
        prof = prof.extended(R)
        bad = [v for v in prof.nonpositive_gamma if v <= R]
        if need_gamma and bad:
            raise PreconditionError(
                f"gamma <= 0 at radius {bad[0]:.6g}; the integral test needs a positive definite "
                "diffusion there", radius=bad[0])
        try:
            lc_new = build(prof, R)
        except CellBudgetError:
            if lc is None:
                raise
            budget_hit = True
            break
        lc, logf, extra = lc_new
        values.append(lc.log_total)
        radii.append(R)
        lo = R / 10.0 if R / 10.0 > r0 else r0 + 0.5 * (R - r0)
        rr = np.geomspace(lo, R, 24)
        lv = logf(rr)
        ok = np.isfinite(lv)
        slope = float(np.polyfit(np.log(rr[ok]), lv[ok], 1)[0]) if ok.sum() > 2 else -math.inf
        slopes.append(slope)
        if len(values) >= 4:
            with np.errstate(over="ignore"):
                ch = np.abs(np.expm1(np.diff(values[-4:])))
            if slope <= slope_limit and np.all(ch < rel_tol):
                status = "finite"
                break
        if slope > slope_limit:
            flat += 1
            if flat >= 3 and stage >= 3:
                # decays no faster than the criterion allows; slower than 1/r diverges
                status = "divergent" if slope > -1.0 else "undetermined"
                break
        else:
            flat = 0
        R = r0 + 2.0 * (R - r0)
    lf_end = float(logf(np.array([radii[-1]]))[0])
    q = slopes[-1]
    if q < -1 and math.isfinite(lf_end):
        log_tail = lf_end + math.log(radii[-1]) - math.log(-q - 1.0)
    elif lf_end == -math.inf:
        log_tail = -math.inf
    else:
        log_tail = math.inf
    if (budget_hit and status == "undetermined" and len(slopes) >= 2
            and max(slopes[-2:]) <= slope_limit and log_tail <= math.log(tail_tol) + values[-1]):
        status = "finite_tail"
    elif status == "finite" and not log_tail <= math.log(rel_tol) + values[-1]:
        # exponential tails pass easily; a heavy power tail is not certified
        status = "undetermined"
    return _Doubling(status, values, slopes, radii, prof, lc, logf, extra, log_tail)


def _lambda_build(rate):
    def build(prof, R):
        base = prof.grid[prof.grid <= R + 1e-12]
        if base[-1] < R:
            base = np.append(base, R)
        minus_I = lambda u: -prof.I(u)
        edges = _adaptive_edges(base, minus_I)
        lJ = LogCumulative(edges, minus_I)
        log_g = _log_integrands(prof, rate, lJ)
        lg = LogCumulative(_adaptive_edges(edges, log_g), log_g)
        return lg, log_g, lJ
    return build


def lambda_constant(profile: RadialProfile, rate: RateFunction | str, r_max=None, span=None,
                    rel_tol=1e-8, slope_limit=-1.1, max_stages=12, radius_cap=2e4) -> LambdaVerdict:
    """Decide ``Lambda < inf`` and estimate its value.

    The upper limit is doubled stage by stage, starting from ``r_max`` (or
    the profile's range).  The verdict is ``finite`` once the fitted slope of
    ``log g`` against ``log r`` over the last decade is at most ``slope_limit``
    and three successive doublings change the value by less than ``rel_tol``
    (relative).  Everything is computed in log space.
    """
    if isinstance(rate, str):
        rate = rate_from_name(rate)
    r0 = profile.base_radius
    if span is None:
        span = (profile.r_max if r_max is None else float(r_max)) - r0
    res = doubling_log_integral(profile, _lambda_build(rate), span, rel_tol, slope_limit,
                                max_stages, radius_cap)
    status = "finite" if res.status == "finite_tail" else res.status
    log_val = res.log_values[-1]
    finite = status == "finite"
    if finite and math.isfinite(res.log_tail):
        # include the analytic remainder so that Lambda matches T(r0) of the table
        log_val = float(np.logaddexp(log_val, res.log_tail))
    tail = math.exp(res.log_tail) if res.log_tail < 700 else math.inf
    diagnostics = {
        "stage_radii": [float(r) for r in res.radii],
        "stage_log_values": [float(v) for v in res.log_values],
        "stage_slopes": [float(s) for s in res.slopes],
        # contribution of each doubling stage to the value
        "segment_contributions": np.diff(np.exp(np.minimum(res.log_values, 700.0)), prepend=0.0).tolist(),
        "rate": rate.label,
        "x0": profile.center.tolist(),
        "r0": r0,
        "tail_corrected": res.status == "finite_tail",
    }
    if status == "divergent":
        value = math.inf
    else:
        value = math.exp(log_val) if log_val < 700 else math.inf
    return LambdaVerdict(
        value=value, finite=finite, tail_bound=tail, diagnostics=diagnostics, status=status,
        log_value=float(log_val), r_max=float(res.radii[-1]), profile=res.profile, rate=rate,
        log_J=res.extra, log_g=res.cumulative,
    )


def sweep_lambda(model, rate, centers, base_radii, **profile_kw):
    """Lambda verdicts over user-supplied ``(x0, r0)`` pairs (no optimisation)."""
    out = []
    for x0 in centers:
        for r0 in base_radii:
            prof = radial_profile(model, x0, r0, **profile_kw)
            out.append(((np.atleast_1d(x0).tolist(), float(r0)), lambda_constant(prof, rate)))
    return out


# -- classical comparison checks ------------------------------------------------------

@dataclass(frozen=True)
class SubgeoVerdict:
    feasible: bool
    worst_margin: float
    worst_point: list
    violation_peaks: list
    n_points: int
    params: dict


def _sample_region(model, x0, r0, r_max, step, sphere_samples, seed=0):
    radii = np.arange(r0, r_max + 0.5 * step, step)
    dirs = sphere_directions(model.dim, sphere_samples, seed)
    pts = x0[None, None, :] + radii[None, :, None] * dirs[:, None, :]
    return radii, dirs, pts


def check_subgeo_classical(model: CoefficientModel, alpha, gamma_exp, Gamma_c, r0, x0=None,
                           r_max=None, step=0.005, sphere_samples=128) -> SubgeoVerdict:
    """Sampled test of ``A - (1 - gamma/2) C + B <= -Gamma |x|^{gamma alpha - gamma + 2}``.

    Returns the worst margin (left minus right side) and, for every sampled
    ray, the radii of local maxima of the margin where it is positive.
    """
    if not (0 < alpha < 1 and gamma_exp > 0 and Gamma_c > 0):
        raise ValueError("need 0 < alpha < 1, gamma > 0 and Gamma > 0")
    x0 = np.zeros(model.dim) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    r0 = float(r0)
    r_max = max(50.0, 10.0 * r0) if r_max is None else float(r_max)
    lo = max(r0, 1e-9)
    radii, dirs, pts = _sample_region(model, x0, lo, r_max, step, sphere_samples)
    k, n = pts.shape[:2]
    f = pointwise_functionals(model, x0, pts.reshape(-1, model.dim))
    expo = gamma_exp * alpha - gamma_exp + 2.0
    xnorm = np.linalg.norm(pts.reshape(-1, model.dim), axis=1)
    margin = (f.A - (1 - gamma_exp / 2.0) * f.C + f.B + Gamma_c * xnorm ** expo).reshape(k, n)
    j = np.unravel_index(np.argmax(margin), margin.shape)
    peaks = []
    for i in range(k):
        m = margin[i]
        interior = np.where((m[1:-1] >= m[:-2]) & (m[1:-1] > m[2:]) & (m[1:-1] > 0))[0] + 1
        ends = [e for e in (0, n - 1) if m[e] > 0 and (n == 1 or m[e] >= m[1 if e == 0 else n - 2])]
        for e in sorted(set(interior.tolist() + ends)):
            peaks.append((pts[i, e] - x0).tolist() if model.dim > 1 else float(pts[i, e, 0] - x0[0]))
    worst = float(margin[j])
    return SubgeoVerdict(
        feasible=bool(worst <= 0), worst_margin=worst, worst_point=pts[j].tolist(),
        violation_peaks=peaks, n_points=int(k * n),
        params=dict(alpha=alpha, gamma=gamma_exp, Gamma=Gamma_c, r0=r0, r_max=r_max, step=step),
    )


@dataclass(frozen=True)
class P1Verdict:
    classical: SubgeoVerdict
    integral: LambdaVerdict
    c0_range: tuple
    c0_bounds_ok: bool


def check_p1_implication(model: CoefficientModel, alpha, gamma_exp, Gamma_c, r0, Delta_bound,
                         r_max=None, profile_kw=None) -> P1Verdict:
    """Classical condition and the integral test side by side.

    Refuses when ``gamma >= 2/(1-alpha)`` or the sampled ``C_0`` leaves
    ``[1/Delta, Delta]``, the hypotheses under which the classical condition
    implies ``Lambda < inf``.
    """
    if gamma_exp >= 2.0 / (1.0 - alpha):
        raise HypothesisError(f"gamma = {gamma_exp} must be below 2/(1-alpha) = {2 / (1 - alpha):g}")
    if Delta_bound < 1:
        raise HypothesisError("Delta must be at least 1")
    x0 = np.zeros(model.dim)
    classical = check_subgeo_classical(model, alpha, gamma_exp, Gamma_c, r0, r_max=r_max)
    rr = max(r0, 1e-9)
    _, _, pts = _sample_region(model, x0, rr, classical.params["r_max"], 0.05, 64)
    C = pointwise_functionals(model, x0, pts.reshape(-1, model.dim)).C
    c0 = (float(np.min(C)), float(np.max(C)))
    ok = c0[0] >= 1.0 / Delta_bound - 1e-12 and c0[1] <= Delta_bound + 1e-12
    if not ok:
        raise HypothesisError(f"C_0 ranges over [{c0[0]:.6g}, {c0[1]:.6g}], outside [1/Delta, Delta]")
    prof = radial_profile(model, x0, max(r0, 1.0) if r0 <= 0 else r0, **(profile_kw or {}))
    verdict = lambda_constant(prof, rate_from_name(f"power({alpha})"))
    return P1Verdict(classical, verdict, c0, ok)


# -- sufficient condition for the integral test ------------------------------------------

@dataclass(frozen=True)
class SubBound:
    Delta: float
    radii: np.ndarray
    bound: np.ndarray
    case: str
    lhs: np.ndarray | None = None


def sub_sufficient(rho: Callable, f_tail: Callable, g: Callable, c: float, beta: float, r0: float,
                   radii=None, r_max=None, rho_bounded: bool | None = None, with_lhs=False) -> SubBound:
    """``Delta = sup_r rho(int_{r0}^r g + c)^{1+beta} int_r^inf f`` and the bound on
    ``int_r^inf rho(int_{r0}^u g + c) f(u) du``.

    ``beta > 0``: ``Delta (1+beta)/beta rho(G(r) + c)^{-beta}``.
    ``beta = 0``: ``Delta + Delta ln(rho(G(inf) + c) / rho(G(r) + c))``, which
    needs ``int g < inf`` or a bounded ``rho``.
    """
    if c < 0 or beta < 0:
        raise ValueError("need c >= 0 and beta >= 0")
    r0 = float(r0)
    if radii is None:
        r_max = r0 + 50.0 if r_max is None else float(r_max)
        radii = np.linspace(r0, r_max, 501)
    radii = np.asarray(radii, dtype=float)

    def vec(fn):
        return lambda x: np.asarray(fn(np.asarray(x, dtype=float)), dtype=float) * np.ones(np.shape(x))

    fv, gv, rv = vec(f_tail), vec(g), vec(rho)
    # cumulative G along the radii, tails F from the right end plus the improper remainder
    G = np.concatenate([[0.0], np.cumsum([gauss_kronrod(gv, a, b)[0] for a, b in zip(radii[:-1], radii[1:])])])
    tail_end = integrate_to_infinity(fv, radii[-1])
    pieces = [gauss_kronrod(fv, a, b)[0] for a, b in zip(radii[:-1], radii[1:])]
    F = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]]) + (tail_end.value if tail_end.finite else math.inf)
    rhoG = rv(G + c)
    with np.errstate(invalid="ignore"):
        prod = np.where(F == 0, 0.0, rhoG ** (1.0 + beta) * F)
    Delta = float(np.max(prod))
    if beta > 0:
        with np.errstate(divide="ignore"):
            bound = Delta * (1 + beta) / beta * np.where(rhoG > 0, rhoG ** (-beta), np.inf)
        case = "i"
        if Delta == 0:
            bound = np.zeros_like(radii)
    else:
        g_tail = integrate_to_infinity(gv, radii[-1])
        if g_tail.finite:
            G_inf = G[-1] + g_tail.value
            rho_inf = float(rv(np.array([G_inf + c]))[0])
        else:
            if rho_bounded is None:
                probes = rv(np.array([1e6, 1e9, 1e12, 1e15]))
                rho_bounded = bool(np.all(np.isfinite(probes)) and abs(probes[-1] - probes[-2]) <= 1e-6 * max(1.0, abs(probes[-1])))
            if not rho_bounded:
                raise HypothesisError("beta = 0 needs int g < inf or a bounded rho")
            rho_inf = float(rv(np.array([1e15]))[0])
        case = "ii"
        if Delta == 0:
            bound = np.zeros_like(radii)
        else:
            bound = Delta + Delta * np.log(rho_inf / rhoG)
    lhs = None
    if with_lhs:
        lhs = np.array([_lhs_at(r, r0, rv, gv, fv, c) for r in radii])
    return SubBound(Delta, radii, bound, case, lhs)


def _lhs_at(r, r0, rho, g, f, c):
    """Direct quadrature of ``int_r^inf rho(int_{r0}^u g + c) f(u) du``."""
    G_r = gauss_kronrod(g, r0, r)[0] if r > r0 else 0.0

    def integrand(u):
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        for i, ui in enumerate(u):
            out[i] = float(rho(np.array([G_r + gauss_kronrod(g, r, ui)[0] + c]))[0]) * float(f(np.array([ui]))[0])
        return out

    res = integrate_to_infinity(integrand, r, abstol=1e-12, reltol=1e-9)
    return res.value


# -- Wasserstein flatness and jump moment growth -----------------------------------

@dataclass(frozen=True)
class FlatnessCertificate:
    """Grid scan of ``f'(|x-y|)<x-y, b(x)-b(y)> <= -Gamma |x-y| psi(f(|x-y|))``.

    ``Gamma`` is the largest constant the sampled pairs allow on the region
    ``f(|x - y|) <= gamma``; ``worst_zero_branch`` is the largest left side on
    the complementary region, which must not be positive.
    """

    Gamma: float
    worst_pair: list
    worst_zero_branch: float
    n_pairs: int
    holds: bool
    global_Gamma: float


def certify_flatness(model: CoefficientModel, mod, radius=10.0, n=401, n_pairs=200_000, seed=0,
                     tol=1e-12) -> FlatnessCertificate:
    """Certify the contraction constant of the flatness condition on a grid.

    In one dimension all pairs of ``linspace(-radius, radius, n)`` are used;
    otherwise ``n_pairs`` random pairs in the ball.  ``global_Gamma`` is the
    constant of the unrestricted condition ``<x-y, b(x)-b(y)> <= -Gamma |x-y|
    psi(|x-y|)`` (meaningful for ``f = identity``).
    """
    if model.dim == 1:
        g = np.linspace(-radius, radius, int(n))
        i, j = np.triu_indices(g.size, 1)
        x, y = g[i, None], g[j, None]
    else:
        rng = np.random.default_rng(seed)
        x = model._ball_points(radius, n_pairs // 2, seed)[: n_pairs]
        y = x[rng.permutation(x.shape[0])]
    diff = x - y
    dist = np.linalg.norm(diff, axis=1)
    ok = dist > 0
    x, y, diff, dist = x[ok], y[ok], diff[ok], dist[ok]
    inner = np.sum(diff * (model.b(x) - model.b(y)), axis=1)
    fd = np.asarray(mod.f(dist), dtype=float)
    lhs = np.asarray(mod.fprime(dist), dtype=float) * inner
    near = fd <= mod.gamma_threshold
    ratio = -lhs[near] / (dist[near] * np.asarray(mod.psi(fd[near]), dtype=float))
    if ratio.size:
        k = int(np.argmin(ratio))
        Gamma = float(ratio[k])
        worst = [x[near][k].tolist(), y[near][k].tolist()]
    else:
        Gamma, worst = math.inf, []
    zero = float(np.max(lhs[~near])) if np.any(~near) else -math.inf
    glob = float(np.min(-inner / (dist * np.asarray(mod.psi(dist), dtype=float))))
    return FlatnessCertificate(Gamma, worst, zero, int(dist.size), bool(Gamma > 0 and zero <= tol), glob)


def moment_growth_constant(model: CoefficientModel, p=2.0, nu=None, beta=None, radius=20.0, n=4001):
    """``sup_x L|x|^p / (|x|^p + 1)`` on a sampled ball, for ``p >= 2``.

    ``L`` is the generator of ``dX = (b + beta) dt + sigma dB + dJ`` with
    ``J`` compound Poisson with finite Levy measure ``nu`` (no compensation).
    The supremum is the Gronwall constant that gives
    ``E|X_t|^p <= (|x|^p + 1) e^{Delta t}``.  Returns ``(Delta, argmax)``.
    """
    if p < 2:
        raise ValueError("the closed generator formula needs p >= 2")
    if model.dim == 1:
        x = np.linspace(-radius, radius, int(n))[:, None]
    else:
        x = model._ball_points(radius, int(n))
    r = np.linalg.norm(x, axis=1)
    safe = np.where(r > 0, r, 1.0)
    rp2 = np.where(r > 0, safe ** (p - 2.0), 1.0 if p == 2 else 0.0)
    b = model.b(x)
    if beta is not None:
        b = b + np.asarray(beta, dtype=float)
    grad_dot = p * rp2 * np.sum(x * b, axis=1)
    c = model.c(x)
    tr = np.einsum("nii->n", c)
    xcx = np.einsum("ni,nij,nj->n", x, c, x)
    hess = 0.5 * p * (rp2 * tr + (p - 2.0) * np.where(r > 0, safe ** (p - 4.0), 0.0) * xcx)
    jump = np.zeros_like(r)
    if nu is not None and nu.kind != "none":
        nodes, w = nu.quadrature(x)
        after = np.linalg.norm(x[:, None, :] + nodes, axis=2) ** p
        jump = np.sum(w * (after - (r ** p)[:, None]), axis=1)
    L = grad_dot + hess + jump
    ratio = L / (r ** p + 1.0)
    k = int(np.argmax(ratio))
    return float(ratio[k]), x[k].tolist()
