"""Adaptive Gauss-Kronrod quadrature and log-space cumulative integrals.

All integrands are called with a 1-D float array of abscissae and must return
an array of the same shape.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

__all__ = [
    "QuadratureError",
    "gauss_kronrod",
    "integrate_to_infinity",
    "TailResult",
    "LogCumulative",
    "gauss_legendre",
]

# 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15 values).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])          # ascending, 15 nodes
_WK = np.concatenate([_WGK[:-1], _WGK[::-1]])
_WG15 = np.zeros(15)
_WG15[[1, 3, 5]] = _WG[:3]
_WG15[[13, 11, 9]] = _WG[:3]
_WG15[7] = _WG[3]

_EPS = np.finfo(float).eps


class QuadratureError(ArithmeticError):
    """Raised when an integrand returns non-finite values or refinement stalls."""

    def __init__(self, message, abscissa=None):
        super().__init__(message)
        self.abscissa = abscissa


def _kronrod_batch(f, a, b):
    """Apply the G7-K15 pair to intervals ``[a_i, b_i]`` in one integrand call."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    x = mid[:, None] + half[:, None] * _NODES[None, :]
    fx = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    bad = ~np.isfinite(fx)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise QuadratureError(
            f"integrand is not finite at x={x[i, j]!r} (value {fx[i, j]!r})",
            abscissa=float(x[i, j]),
        )
    resk = fx @ _WK * half
    resg = fx @ _WG15 * half
    mean = resk / (2.0 * np.where(half == 0, 1.0, half))
    resasc = np.abs(half) * (np.abs(fx - mean[:, None]) @ _WK)
    resabs = np.abs(half) * (np.abs(fx) @ _WK)
    err = np.abs(resk - resg)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = resasc * np.minimum(1.0, (200.0 * err / resasc) ** 1.5)
    err = np.where(resasc > 0, scaled, err)
    floor = 50.0 * _EPS * resabs
    err = np.maximum(err, floor)
    return resk, err


def gauss_kronrod(f, a, b, abstol=1e-10, reltol=1e-8, limit=5000):
    """Globally adaptive G7-K15 quadrature of ``f`` over ``[a, b]``.

    Returns ``(value, error_estimate)``. Intervals with the largest error
    estimate are bisected until the total estimate is below
    ``max(abstol, reltol * |value|)``.
    """
    a = float(a)
    b = float(b)
    if a == b:
        return 0.0, 0.0
    if b < a:
        val, err = gauss_kronrod(f, b, a, abstol, reltol, limit)
        return -val, err
    if not (math.isfinite(a) and math.isfinite(b)):
        raise QuadratureError("use integrate_to_infinity for unbounded intervals")

    # start from a few panels; helps integrands with structure at one end
    edges = np.linspace(a, b, 5)
    vals, errs = _kronrod_batch(f, edges[:-1], edges[1:])
    heap = [(-e, lo, hi, v) for lo, hi, v, e in zip(edges[:-1], edges[1:], vals, errs)]
    heapq.heapify(heap)
    total = float(vals.sum())
    toterr = float(errs.sum())
    n = len(heap)
    while toterr > max(abstol, reltol * abs(total)):
        if n >= limit:
            raise QuadratureError(
                f"subdivision limit {limit} reached on [{a}, {b}]; "
                f"estimate {total!r} with error {toterr!r}"
            )
        # bisect the worst few intervals in one vectorized call
        k = min(len(heap), 8)
        worst = [heapq.heappop(heap) for _ in range(k)]
        lo = np.array([w[1] for w in worst])
        hi = np.array([w[2] for w in worst])
        mid = 0.5 * (lo + hi)
        if np.any((mid <= lo) | (mid >= hi)):
            raise QuadratureError(
                f"interval collapsed near x={float(lo[0])!r}; integrand may be singular",
                abscissa=float(lo[0]),
            )
        v, e = _kronrod_batch(f, np.concatenate([lo, mid]), np.concatenate([mid, hi]))
        for w in worst:
            total -= w[3]
            toterr -= -w[0]
        for i in range(k):
            heapq.heappush(heap, (-e[i], lo[i], mid[i], v[i]))
            heapq.heappush(heap, (-e[k + i], mid[i], hi[i], v[k + i]))
        total += float(v.sum())
        toterr += float(e.sum())
        n += k
        if toterr < 0:
            toterr = float(sum(-h[0] for h in heap))
    # re-sum to shed accumulated cancellation from the running update
    total = float(math.fsum(h[3] for h in heap))
    toterr = float(math.fsum(-h[0] for h in heap))
    return total, toterr


class TailResult:
    """Outcome of an improper integral ``int_a^inf f``.

    Attributes
    ----------
    value : float
        Integral up to ``upper`` plus the extrapolated remainder.
    remainder : float
        Power-law extrapolation of the tail past ``upper`` (``inf`` if divergent).
    finite : bool
        Whether the tail test accepted the integral as convergent.
    decay_exponent : float
        Local estimate of ``d log|f| / d log x`` at ``upper``.
    upper : float
        Last upper limit reached.
    """

    __slots__ = ("value", "remainder", "finite", "decay_exponent", "upper")

    def __init__(self, value, remainder, finite, decay_exponent, upper):
        self.value = value
        self.remainder = remainder
        self.finite = finite
        self.decay_exponent = decay_exponent
        self.upper = upper

    def __repr__(self):
        return (f"TailResult(value={self.value!r}, remainder={self.remainder!r}, "
                f"finite={self.finite}, decay_exponent={self.decay_exponent!r}, "
                f"upper={self.upper!r})")


def _decay_exponent(f, u0, u1):
    f0 = abs(float(np.asarray(f(np.array([u0])))[0]))
    f1 = abs(float(np.asarray(f(np.array([u1])))[0]))
    if f1 == 0.0:
        return -math.inf, f1
    if f0 == 0.0:
        return math.inf, f1
    return math.log(f1 / f0) / math.log(u1 / u0), f1


def integrate_to_infinity(f, a, abstol=1e-10, reltol=1e-8, n_stable=3, max_doublings=1100):
    """Integrate ``f`` over ``[a, inf)`` by successive doublings of the upper limit.

    The tail is accepted as finite once ``n_stable`` successive doublings each
    change the value by less than ``abstol * max(1, |value|)`` and the local
    decay exponent of ``|f|`` is below ``-1``. The power-law remainder past the
    last limit is added to the returned value.
    """
    a = float(a)
    upper = max(2.0 * abs(a), a + 1.0, 1.0)
    total, _ = gauss_kronrod(f, a, upper, abstol, reltol)
    stable = 0
    q = math.nan
    for _ in range(max_doublings):
        nxt = 2.0 * upper
        if not math.isfinite(nxt) or nxt > 1e300:
            break
        piece, _ = gauss_kronrod(f, upper, nxt, abstol, reltol)
        total += piece
        q, fend = _decay_exponent(f, upper, nxt)
        upper = nxt
        if abs(piece) < abstol * max(1.0, abs(total)) and q < -1.0:
            stable += 1
            if stable >= n_stable:
                rem = 0.0 if fend == 0.0 or q == -math.inf else fend * upper / (-q - 1.0)
                return TailResult(total + rem, rem, True, q, upper)
        else:
            stable = 0
    return TailResult(total, math.inf, False, q, upper)


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(m):
    """Cached Gauss-Legendre nodes and weights on ``[-1, 1]``."""
    if m not in _GL_CACHE:
        _GL_CACHE[m] = np.polynomial.legendre.leggauss(m)
    return _GL_CACHE[m]


def _logsumexp_rows(v):
    m = np.max(v, axis=-1, keepdims=True)
    finite = np.isfinite(m)
    safe = np.where(finite, m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - safe), axis=-1)) + safe[..., 0]
    return np.where(finite[..., 0], out, m[..., 0])


class LogCumulative:
    """Cumulative integrals of a positive integrand given through its logarithm.

    ``logf`` maps radii to ``log f``; ``-inf`` marks zeros. Each cell is
    integrated with an ``order``-point Gauss-Legendre rule; partial cells use
    the Legendre interpolant through the same nodes (scaled by the cell
    maximum), so queries never re-evaluate ``logf``. Cells should be fine
    enough that ``log f`` varies by a few units at most across each of them.
    Everything is kept in log space, so integrands of size ``e^{1000}`` are fine.
    """

    def __init__(self, grid, logf, order=20):
        self.grid = np.asarray(grid, dtype=float)
        if self.grid.ndim != 1 or self.grid.size < 2 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be a strictly increasing 1-D array")
        self.logf = logf
        self.order = order
        x, w = gauss_legendre(order)
        lo = self.grid[:-1]
        hi = self.grid[1:]
        half = 0.5 * (hi - lo)
        pts = 0.5 * (hi + lo)[:, None] + half[:, None] * x
        vals = np.asarray(logf(pts.ravel()), dtype=float).reshape(pts.shape)
        if np.any(np.isnan(vals)):
            bad = pts[np.isnan(vals)][0]
            raise QuadratureError(f"log-integrand is NaN at {bad!r}", abscissa=float(bad))
        top = np.max(vals, axis=1)
        self._top = np.where(np.isfinite(top), top, 0.0)
        scaled = np.where(np.isfinite(top)[:, None], np.exp(vals - self._top[:, None]), 0.0)
        P = np.polynomial.legendre.legvander(x, order - 1)
        M = (P * w[:, None]).T * ((2 * np.arange(order) + 1) / 2.0)[:, None]
        coef = scaled @ M.T
        self._half = half
        self._lint = np.polynomial.legendre.legint(coef, lbnd=-1, axis=1)
        self._rint = -np.polynomial.legendre.legint(coef, lbnd=1, axis=1)
        with np.errstate(divide="ignore"):
            self.cell_log = np.where(np.isfinite(top), np.log(np.maximum(2 * coef[:, 0], 0.0) * half) + self._top, -np.inf)
        ninf = np.array([-np.inf])
        self.left_nodes = np.concatenate([ninf, np.logaddexp.accumulate(self.cell_log)])
        rev = np.logaddexp.accumulate(self.cell_log[::-1])[::-1]
        self.right_nodes = np.concatenate([rev, ninf])

    @property
    def log_total(self):
        return float(self.left_nodes[-1])

    def _locate(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < self.grid[0] - 1e-12 * max(1.0, abs(self.grid[0]))) or np.any(
            r > self.grid[-1] * (1 + 1e-12) + 1e-12
        ):
            raise ValueError("query radius outside the tabulated grid")
        r = np.clip(r, self.grid[0], self.grid[-1])
        k = np.clip(np.searchsorted(self.grid, r, side="right") - 1, 0, self.grid.size - 2)
        u = (r - self.grid[k]) / self._half[k] - 1.0
        return np.clip(u, -1.0, 1.0), k

    def _partial(self, coef_rows, u, k):
        shape = u.shape
        u = u.ravel()
        k = k.ravel()
        V = np.polynomial.legendre.legvander(u, coef_rows.shape[1] - 1)
        val = np.sum(V * coef_rows[k], axis=1) * self._half[k]
        with np.errstate(divide="ignore"):
            out = np.log(np.maximum(val, 0.0)) + self._top[k]
        return out.reshape(shape)

    def left(self, r):
        """log int_{grid[0]}^r f."""
        u, k = self._locate(r)
        part = np.where(u == -1.0, -np.inf, self._partial(self._lint, u, k))
        return np.logaddexp(self.left_nodes[k], part)

    def right(self, r):
        """log int_r^{grid[-1]} f."""
        u, k = self._locate(r)
        part = np.where(u == 1.0, -np.inf, self._partial(self._rint, u, k))
        return np.logaddexp(self.right_nodes[k + 1], part)
