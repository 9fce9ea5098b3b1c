"""Empirical transport and total-variation distances, coupling costs and decay fits."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize_scalar

from .rates import ModulusPair, _PsiInverter

__all__ = [
    "EmpiricalMeasure",
    "DecayFit",
    "wasserstein_1d",
    "wasserstein_assignment",
    "wasserstein_subsampled",
    "coupling_cost",
    "tv_histogram",
    "decay_fit",
    "decay_csv",
    "ASSIGNMENT_CAP",
]

ASSIGNMENT_CAP = 1024


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud; weights default to uniform."""

    samples: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("an empirical measure needs at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", s)
        if self.weights is None:
            w = np.full(s.shape[0], 1.0 / s.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (s.shape[0],) or np.any(w < 0):
                raise ValueError("weights must be non-negative, one per sample")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must sum to 1")
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def uniform(self):
        return np.all(self.weights == self.weights[0])


def _as_measure(m):
    return m if isinstance(m, EmpiricalMeasure) else EmpiricalMeasure(np.asarray(m, dtype=float))


def wasserstein_1d(mu, nu, p: float = 1.0) -> float:
    """Exact ``W_p`` on the line through the quantile coupling.

    Equal-size uniform clouds are paired in sorted order; general weights are
    handled by integrating ``|F^{-1} - G^{-1}|^p`` over the merged breakpoints
    of the two cumulative weight sequences.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("wasserstein_1d needs one-dimensional samples; use wasserstein_assignment")
    if p < 1:
        raise ValueError("p must be at least 1")
    x, y = mu.samples[:, 0], nu.samples[:, 0]
    if mu.n == nu.n and mu.uniform and nu.uniform:
        cost = np.mean(np.abs(np.sort(x) - np.sort(y)) ** p)
        return float(cost ** (1.0 / p))
    ix, iy = np.argsort(x), np.argsort(y)
    xs, ys = x[ix], y[iy]
    cx, cy = np.cumsum(mu.weights[ix]), np.cumsum(nu.weights[iy])
    cx[-1] = cy[-1] = 1.0
    u = np.union1d(cx, cy)
    lo = np.concatenate([[0.0], u[:-1]])
    mass = u - lo
    mid = 0.5 * (lo + u)
    qx = xs[np.minimum(np.searchsorted(cx, mid), xs.size - 1)]
    qy = ys[np.minimum(np.searchsorted(cy, mid), ys.size - 1)]
    cost = np.sum(mass * np.abs(qx - qy) ** p)
    return float(cost ** (1.0 / p))


def wasserstein_assignment(mu, nu, p: float = 1.0) -> float:
    """Exact ``W_p`` between equal-size uniform clouds in any dimension.

    Solves the assignment problem on ``|x_i - y_j|^p``; refuses more than
    ``ASSIGNMENT_CAP`` points.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.n != nu.n or not (mu.uniform and nu.uniform):
        raise ValueError("assignment solver needs equal-size uniform clouds")
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    if mu.n > ASSIGNMENT_CAP:
        raise ValueError(f"assignment solver is capped at {ASSIGNMENT_CAP} points; use wasserstein_subsampled")
    if p < 1:
        raise ValueError("p must be at least 1")
    diff = mu.samples[:, None, :] - nu.samples[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2)) ** p
    r, c = linear_sum_assignment(cost)
    return float(np.mean(cost[r, c]) ** (1.0 / p))


def wasserstein_subsampled(mu, nu, p=1.0, size=ASSIGNMENT_CAP, repeats=8, seed=0) -> float:
    """Median of exact assignment costs over ``repeats`` random subsamples."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.n <= size and nu.n == mu.n:
        return wasserstein_assignment(mu, nu, p)
    g = np.random.default_rng(seed)
    k = min(size, mu.n, nu.n)
    vals = []
    for _ in range(repeats):
        a = mu.samples[g.choice(mu.n, k, replace=False, p=None if mu.uniform else mu.weights)]
        b = nu.samples[g.choice(nu.n, k, replace=False, p=None if nu.uniform else nu.weights)]
        vals.append(wasserstein_assignment(a, b, p))
    return float(np.median(vals))


def coupling_cost(ensemble, mod: ModulusPair | str, p: float = 1.0, t_index=-1):
    """``(mean f(|X_t - Z_t|)^p)^{1/p}`` over the non-flagged coupled paths.

    By construction this bounds ``W_{f,p}`` of the two marginals from above.
    ``mod`` may also be the name ``"identity"`` or ``"indicator"``.  With
    ``t_index=None`` the whole curve over recorded times is returned.
    """
    if not getattr(ensemble, "is_coupled", False):
        raise ValueError("coupling_cost needs a coupled ensemble")
    if isinstance(mod, str):
        from .rates import f_from_name
        f = f_from_name(mod)[0]
    else:
        f = mod.f
    d = ensemble.distances()[ensemble.valid]
    if t_index is not None:
        d = d[:, t_index]
    vals = np.asarray(f(d), dtype=float)
    out = np.mean(vals ** p, axis=0) ** (1.0 / p)
    return float(out) if t_index is not None else out


def _fd_edges(z):
    """Freedman-Diaconis edges, falling back to Sturges when the IQR is
    degenerate or the rule would ask for more bins than samples."""
    lo, hi = float(np.min(z)), float(np.max(z))
    q75, q25 = np.percentile(z, [75, 25])
    h = 2.0 * (q75 - q25) * z.size ** (-1.0 / 3.0)
    if hi > lo and h > 0 and (hi - lo) / h <= z.size:
        return np.histogram_bin_edges(z, bins="fd")
    return np.histogram_bin_edges(z, bins="sturges")


def tv_histogram(mu, nu, bins="fd") -> float:
    """Half the L1 distance between binned densities on common bins.

    Bins follow the Freedman-Diaconis rule on the pooled sample (per axis in
    two dimensions).  Coarse bins bias the estimate down and fine bins make
    it noisy.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    if mu.dim > 2:
        raise ValueError("tv_histogram supports d <= 2")
    pooled = np.vstack([mu.samples, nu.samples])
    if mu.dim == 1:
        edges = _fd_edges(pooled[:, 0]) if isinstance(bins, str) else np.asarray(bins, dtype=float)
        h1, _ = np.histogram(mu.samples[:, 0], bins=edges, weights=mu.weights)
        h2, _ = np.histogram(nu.samples[:, 0], bins=edges, weights=nu.weights)
    else:
        ex = _fd_edges(pooled[:, 0])
        ey = _fd_edges(pooled[:, 1])
        h1, _, _ = np.histogram2d(mu.samples[:, 0], mu.samples[:, 1], bins=[ex, ey], weights=mu.weights)
        h2, _, _ = np.histogram2d(nu.samples[:, 0], nu.samples[:, 1], bins=[ex, ey], weights=nu.weights)
    return float(min(1.0, 0.5 * np.sum(np.abs(h1 - h2))))


# -- decay fits ----------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of a decay model; ``residual`` is an RMS on log scale."""

    times: np.ndarray
    distances: np.ndarray
    model: str
    params: dict
    residual: float
    dropped: int = 0

    def predict(self, t, mod=None):
        t = np.asarray(t, dtype=float)
        if self.model == "exponential":
            return self.params["kappa"] * np.exp(-self.params["Gamma"] * t)
        if self.model == "power":
            return self.params["c"] * t ** (-self.params["q"])
        if mod is None:
            raise ValueError("psi_inverse predictions need the modulus pair")
        inv = _PsiInverter(mod, self.params["kappa"])
        return np.array([inv(self.params["Gamma"] * s) for s in np.atleast_1d(t)])


def decay_fit(times, distances, model="exponential", mod: ModulusPair | None = None,
              kappa: float | None = None) -> DecayFit:
    """Fit ``kappa e^{-Gamma t}``, ``c t^{-q}`` or ``Psi_kappa^{-1}(Gamma t)``.

    Fits are least squares of ``log d``.  Non-positive distances (and, for the
    power model, non-positive times) are dropped with a warning.  The
    ``psi_inverse`` model fits ``Gamma`` only, with ``kappa`` fixed (default:
    the first distance).
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(distances, dtype=float)
    if t.shape != d.shape:
        raise ValueError("times and distances must match")
    keep = np.isfinite(d) & (d > 0)
    if model == "power":
        keep &= t > 0
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        warnings.warn(f"dropped {dropped} point(s) unusable on the log scale", RuntimeWarning, stacklevel=2)
    t, d = t[keep], d[keep]
    if t.size < 5:
        raise ValueError("decay_fit needs at least 5 usable points")
    ld = np.log(d)
    if model == "exponential":
        A = np.column_stack([np.ones_like(t), -t])
        coef, *_ = np.linalg.lstsq(A, ld, rcond=None)
        params = {"kappa": float(np.exp(coef[0])), "Gamma": float(coef[1])}
        res = ld - A @ coef
    elif model == "power":
        A = np.column_stack([np.ones_like(t), -np.log(t)])
        coef, *_ = np.linalg.lstsq(A, ld, rcond=None)
        params = {"c": float(np.exp(coef[0])), "q": float(coef[1])}
        res = ld - A @ coef
    elif model == "psi_inverse":
        if mod is None:
            raise ValueError("psi_inverse fits need a ModulusPair")
        k = float(d[0] if kappa is None else kappa)
        inv = _PsiInverter(mod, k)

        def loss(log_g):
            g = math.exp(log_g)
            pred = np.array([inv(g * s) for s in t])
            return float(np.sum((ld - np.log(pred)) ** 2))

        # coarse scan for a bracket, then a bounded refinement in log Gamma
        grid = np.linspace(math.log(1e-6), math.log(1e6), 49)
        vals = [loss(v) for v in grid]
        j = int(np.argmin(vals))
        lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
        opt = minimize_scalar(loss, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 500})
        g = math.exp(opt.x)
        params = {"Gamma": g, "kappa": k}
        res = ld - np.log([inv(g * s) for s in t])
    else:
        raise ValueError(f"unknown decay model {model!r}")
    return DecayFit(t, d, model, params, float(np.sqrt(np.mean(res ** 2))), dropped)


def decay_csv(times, empirical, predicted) -> str:
    """CSV text with columns ``t, empirical, predicted, excess``."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["t", "empirical", "predicted", "excess"])
    for t, e, p in zip(times, empirical, predicted):
        w.writerow([repr(float(t)), repr(float(e)), repr(float(p)), repr(float(e - p))])
    return buf.getvalue()
