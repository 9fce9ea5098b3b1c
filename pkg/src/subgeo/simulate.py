"""Path simulation: Euler-Maruyama ensembles, synchronous couplings, jump SDEs
with finite Levy measure, and subordinator marginals.

Built-in drifts with constant diffusion run in the compiled kernel when it is
available; everything else uses the numpy fallback.  Both draw path ``i``'s
Gaussian increments from the Philox substream ``(seed, i, 0)``, so an ensemble
is a pure function of its inputs regardless of backend block size or thread
count.
"""
from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _fallback
from . import rng as _rng
from .models import CoefficientModel, JumpKernel

try:
    if os.environ.get("SUBGEO_PURE_PYTHON"):
        raise ImportError("pure Python requested")
    from . import _kernels
except ImportError:
    _kernels = None

BACKEND = "compiled" if _kernels is not None else "python"

__all__ = [
    "BACKEND",
    "PathEnsemble",
    "JumpSdeSpec",
    "SubordinatorSpec",
    "euler_maruyama",
    "synchronous_pair",
    "jump_sde",
    "subordinator_sample",
    "regenerate_increments",
]


@dataclass(frozen=True)
class PathEnsemble:
    """Recorded states of ``n_paths`` paths on ``times``.

    ``states`` has shape ``(n_paths, n_times, d)``.  Coupled ensembles carry
    the partner states and the first gluing time of each path (``nan`` when
    the pair never met).  ``flagged`` marks paths that left ``|x| <= 1e12``;
    their states are ``nan`` from that point on.
    """

    times: np.ndarray
    states: np.ndarray
    dt: float
    seed: int
    scheme: str = "euler_maruyama"
    coupled_partner: np.ndarray | None = None
    coupling_times: np.ndarray | None = None
    flagged: np.ndarray | None = None
    backend: str = BACKEND
    record_every: int = 1
    eps_c: np.ndarray | None = None
    jump_times: list | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def n_flagged(self):
        return 0 if self.flagged is None else int(np.count_nonzero(self.flagged))

    @property
    def valid(self):
        """Mask of paths that stayed finite."""
        if self.flagged is None:
            return np.ones(self.n_paths, dtype=bool)
        return ~self.flagged.astype(bool)

    @property
    def is_coupled(self):
        return self.coupled_partner is not None

    def distances(self):
        """``|X_t - Z_t|`` per path and recorded time."""
        if not self.is_coupled:
            raise ValueError("ensemble is not coupled")
        return np.linalg.norm(self.states - self.coupled_partner, axis=2)

    def marginal(self, t_index, valid_only=True):
        x = self.states[:, t_index, :]
        return x[self.valid] if valid_only else x

    def save_npz(self, path):
        """Columnar binary dump (one array per field)."""
        arrays = {"times": self.times, "states": self.states, "dt": np.array(self.dt),
                  "seed": np.array(self.seed), "record_every": np.array(self.record_every)}
        for name in ("coupled_partner", "coupling_times", "flagged", "eps_c"):
            val = getattr(self, name)
            if val is not None:
                arrays[name] = val
        np.savez_compressed(path, **arrays)

    @classmethod
    def load_npz(cls, path):
        with np.load(path) as z:
            get = lambda k: z[k] if k in z.files else None
            return cls(times=z["times"], states=z["states"], dt=float(z["dt"]), seed=int(z["seed"]),
                       record_every=int(z["record_every"]), coupled_partner=get("coupled_partner"),
                       coupling_times=get("coupling_times"), flagged=get("flagged"), eps_c=get("eps_c"))

    def summary_csv(self, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95), bins=20):
        """CSV text: per-time quantiles of ``|X_t|`` (and of the pair distance),
        followed by a coupling-time histogram for coupled ensembles."""
        buf = io.StringIO()
        w = csv.writer(buf)
        ok = self.valid
        norms = np.linalg.norm(self.states[ok], axis=2)
        head = ["t"] + [f"abs_q{q:g}" for q in quantiles]
        dist = None
        if self.is_coupled:
            dist = self.distances()[ok]
            head += [f"dist_q{q:g}" for q in quantiles]
        w.writerow(head)
        qn = np.quantile(norms, quantiles, axis=0) if norms.size else np.full((len(quantiles), self.times.size), np.nan)
        qd = np.quantile(dist, quantiles, axis=0) if dist is not None and dist.size else None
        for k, t in enumerate(self.times):
            row = [repr(float(t))] + [repr(float(v)) for v in qn[:, k]]
            if qd is not None:
                row += [repr(float(v)) for v in qd[:, k]]
            w.writerow(row)
        if self.is_coupled:
            ct = self.coupling_times[ok]
            hit = ct[np.isfinite(ct)]
            w.writerow([])
            w.writerow(["coupling_time_lo", "coupling_time_hi", "count"])
            if hit.size:
                counts, edges = np.histogram(hit, bins=bins)
                for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                    w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
            w.writerow(["never", "", int(np.count_nonzero(~np.isfinite(ct)))])
        return buf.getvalue()


# -- plumbing ------------------------------------------------------------------------

def _grid(T, dt, record_every):
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = T / dt
    n_steps = int(round(n))
    if n_steps < 1 or abs(n - n_steps) > 1e-9 * max(1.0, n):
        raise ValueError(f"T/dt = {n!r} is not an integer")
    record_every = int(record_every)
    if record_every < 1 or n_steps % record_every:
        raise ValueError("record_every must divide the number of steps")
    times = np.arange(n_steps // record_every + 1) * (record_every * dt)
    return n_steps, record_every, times


def _starts(starts, n_paths, dim):
    s = np.asarray(starts, dtype=float)
    if s.ndim == 0:
        s = s.reshape(1, 1)
    if s.ndim == 1:
        s = s.reshape(1, dim) if s.size == dim else s.reshape(-1, 1)
    if s.shape[-1] != dim:
        raise ValueError(f"start points must have {dim} coordinates")
    if s.shape[0] == 1:
        s = np.repeat(s, n_paths, axis=0)
    if s.shape[0] != n_paths:
        raise ValueError("need one start point or one per path")
    return np.ascontiguousarray(s)


def _use_compiled(model, backend):
    if backend == "python":
        return False
    ok = (_kernels is not None and model.kernel is not None and model.sigma_const is not None
          and model.dim <= 16)
    if backend == "compiled" and not ok:
        raise RuntimeError("compiled backend unavailable for this model")
    return ok


def _blocks(n, workers, block=None):
    if block is None:
        block = max(1, min(1024, math.ceil(n / max(1, workers))))
    return [(i, min(n, i + block)) for i in range(0, n, block)]


def _run(model, x0, y0, eps, seed, dt, n_steps, rec, workers, backend, block=None):
    """Simulate all paths; returns ``(out, flags, out2, ctime, backend_used)``."""
    n, d = x0.shape
    n_rec = n_steps // rec + 1
    compiled = _use_compiled(model, backend)
    out = np.empty((n, n_rec, d))
    flags = np.zeros(n, dtype=np.uint8)
    coupled = y0 is not None
    out2 = np.empty_like(out) if coupled else None
    ctime = np.full(n, -1, dtype=np.int64) if coupled else None
    if compiled:
        code, prm = model.kernel
        prm = np.ascontiguousarray(np.append(np.asarray(prm, dtype=float), 0.0))
        sig = np.ascontiguousarray(model.sigma_const, dtype=float)

    def work(lo, hi):
        if compiled:
            gens = [_rng.bit_generator(seed, i) for i in range(lo, hi)]
            o = np.empty((hi - lo, n_rec, d))
            f = np.zeros(hi - lo, dtype=np.uint8)
            if coupled:
                o2 = np.empty_like(o)
                c = np.empty(hi - lo, dtype=np.int64)
                _kernels.euler_block(code, prm, sig, x0[lo:hi], gens, dt, n_steps, rec, o, f,
                                     y0[lo:hi], o2, np.ascontiguousarray(eps[lo:hi]), c)
            else:
                o2 = c = None
                _kernels.euler_block(code, prm, sig, x0[lo:hi], gens, dt, n_steps, rec, o, f)
        else:
            gens = _rng.block_generators(seed, lo, hi)
            o, f, o2, c = _fallback.euler_block(model, x0[lo:hi], gens, dt, n_steps, rec,
                                                None if y0 is None else y0[lo:hi],
                                                None if eps is None else eps[lo:hi])
        out[lo:hi] = o
        flags[lo:hi] = f
        if coupled:
            out2[lo:hi] = o2
            ctime[lo:hi] = c

    blocks = _blocks(n, workers, block)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(work, lo, hi) for lo, hi in blocks]:
                fut.result()
    else:
        for lo, hi in blocks:
            work(lo, hi)
    return out, flags, out2, ctime, ("compiled" if compiled else "python")


def _warn_flagged(flags):
    k = int(np.count_nonzero(flags))
    if k:
        warnings.warn(f"{k} path(s) exceeded |x| > 1e12 and were flagged", RuntimeWarning, stacklevel=3)


# -- public operations ----------------------------------------------------------------

def euler_maruyama(model: CoefficientModel, starts, T, dt, n_paths, seed, record_every=1,
                   workers=1, backend=None, block=None) -> PathEnsemble:
    """Euler-Maruyama ensemble ``X_{k+1} = X_k + b(X_k) dt + sigma(X_k) sqrt(dt) xi_k``.

    Parameters
    ----------
    starts : array_like
        One start point (shared) or one per path.
    record_every : int
        Keep every ``record_every``-th state; must divide ``T/dt``.
    workers : int
        Threads over path blocks.  Results do not depend on it.
    backend : {None, "compiled", "python"}
        ``None`` picks the compiled kernel when the model supports it.
    """
    if model.has_jumps:
        raise ValueError("model has a jump part; use jump_sde")
    n_steps, rec, times = _grid(T, dt, record_every)
    x0 = _starts(starts, int(n_paths), model.dim)
    out, flags, _, _, used = _run(model, x0, None, None, seed, float(dt), n_steps, rec, workers, backend, block)
    _warn_flagged(flags)
    return PathEnsemble(times, out, float(dt), int(seed), flagged=flags.astype(bool), backend=used,
                        record_every=rec, meta={"model": model.name})


def synchronous_pair(model: CoefficientModel, x, y, T, dt, n_paths, seed, eps_c=None, record_every=1,
                     workers=1, backend=None, block=None) -> PathEnsemble:
    """Synchronously coupled pair started at ``x`` and ``y``.

    Both components use the same Gaussian increments; once
    ``|X - Z| <= eps_c`` (default ``1e-9 |x - y|``) the partner is glued to
    ``X``.  Requires a constant diffusion matrix.
    """
    if model.sigma_const is None:
        raise ValueError("synchronous coupling needs a constant diffusion matrix")
    if model.has_jumps:
        raise ValueError("synchronous_pair handles diffusions only")
    n_steps, rec, times = _grid(T, dt, record_every)
    n_paths = int(n_paths)
    x0 = _starts(x, n_paths, model.dim)
    y0 = _starts(y, n_paths, model.dim)
    d0 = np.linalg.norm(x0 - y0, axis=1)
    eps = np.ascontiguousarray(1e-9 * d0 if eps_c is None else np.broadcast_to(float(eps_c), d0.shape).copy())
    out, flags, out2, ctime, used = _run(model, x0, y0, eps, seed, float(dt), n_steps, rec, workers, backend, block)
    _warn_flagged(flags)
    ct = np.where(ctime >= 0, ctime * float(dt), np.nan)
    return PathEnsemble(times, out, float(dt), int(seed), coupled_partner=out2, coupling_times=ct,
                        flagged=flags.astype(bool), backend=used, record_every=rec, eps_c=eps,
                        meta={"model": model.name})


def regenerate_increments(ensemble: PathEnsemble, model: CoefficientModel, partner=False):
    """Recover ``xi_k = sigma^{-1}(X_{k+1} - X_k - b(X_k) dt) / sqrt(dt)``.

    Needs ``record_every == 1`` and a constant invertible square diffusion.
    """
    if ensemble.record_every != 1:
        raise ValueError("increments need every step recorded")
    s = model.sigma_const
    if s is None or s.shape[0] != s.shape[1]:
        raise ValueError("needs a constant square diffusion matrix")
    X = ensemble.coupled_partner if partner else ensemble.states
    n, m, d = X.shape
    prev = X[:, :-1].reshape(-1, d)
    drift = model.b(prev).reshape(n, m - 1, d)
    resid = (X[:, 1:] - X[:, :-1] - drift * ensemble.dt) / math.sqrt(ensemble.dt)
    return np.linalg.solve(s, resid.reshape(-1, d).T).T.reshape(n, m - 1, d)


# -- jump SDE -----------------------------------------------------------------------

@dataclass(frozen=True)
class JumpSdeSpec:
    """``dX = b(X) dt + dY`` with ``Y`` Levy with triplet ``(beta, gamma, nu)``.

    ``base`` supplies ``b`` and the constant Gaussian factor ``gamma^{1/2}``
    (as ``sigma_const``); ``nu`` must be translation invariant with finite
    mass and a sampler.  With finite ``nu`` the process ``Y`` is
    ``beta t + gamma^{1/2} B_t`` plus a compound Poisson sum, i.e. ``beta`` is
    the drift of that representation.
    """

    base: CoefficientModel
    nu: JumpKernel
    beta: np.ndarray | None = None

    def __post_init__(self):
        mass = self.nu.total_mass
        if mass is None or not math.isfinite(mass) or mass < 0:
            raise ValueError("jump_sde needs a Levy measure of finite total mass")
        if self.nu.kind == "state_dependent":
            raise ValueError("state-dependent kernels are analysis-only")
        if mass > 0 and self.nu.sample is None:
            raise ValueError("nu must provide a sampler")
        if self.base.sigma_const is None:
            raise ValueError("the Gaussian part must be constant")

    @property
    def dim(self):
        return self.base.dim

    @classmethod
    def from_model(cls, model: CoefficientModel, beta=None):
        """Split a model with an attached compound Poisson kernel."""
        nu = model.jump if model.jump is not None else JumpKernel.null(model.dim)
        base = CoefficientModel(**{**model.__dict__, "jump": None})
        return cls(base, nu, None if beta is None else np.atleast_1d(np.asarray(beta, dtype=float)))


def jump_sde(spec: JumpSdeSpec, starts, T, dt, n_paths, seed, record_every=1) -> PathEnsemble:
    """Euler scheme between exactly simulated jump times.

    Jump clocks are exponential with rate ``nu(R^d)`` and jump sizes come from
    the normalised ``nu``; both use the substream ``(seed, i, 1)``.  A step
    containing jumps is split at the jump times; the Gaussian increment of
    the whole step is the same draw as in :func:`euler_maruyama` and is
    distributed over the pieces with a Brownian bridge fed by the jump
    substream.  With ``nu = 0`` the result coincides bitwise with the numpy
    Euler-Maruyama backend.
    """
    base = spec.base
    d = base.dim
    n_steps, rec, times = _grid(T, dt, record_every)
    n = int(n_paths)
    dt = float(dt)
    x = _starts(starts, n, d).copy()
    sig = base.sigma_const
    m = sig.shape[1]
    sqdt = math.sqrt(dt)
    mass = float(spec.nu.total_mass)
    beta = None if spec.beta is None else np.broadcast_to(spec.beta, (d,)).astype(float)
    gens = _rng.block_generators(seed, 0, n)
    jgens = _rng.block_generators(seed, 0, n, _rng.JUMPS) if mass > 0 else None
    next_jump = np.array([g.exponential(1.0 / mass) for g in jgens]) if mass > 0 else np.full(n, np.inf)
    jump_log = [[] for _ in range(n)]
    out = np.empty((n, n_steps // rec + 1, d))
    out[:, 0] = x
    dead = np.zeros(n, dtype=bool)
    chunk = 512
    k = 0

    def drift_of(y):
        b = base.drift(y)
        return b if beta is None else b + beta

    while k < n_steps:
        m_k = min(chunk, n_steps - k)
        noise = np.stack([g.standard_normal((m_k, m)) for g in gens])
        for s in range(m_k):
            step = k + s
            t0 = step * dt
            t1 = t0 + dt
            xi = noise[:, s, :]
            jumping = next_jump < t1
            if not np.any(jumping):
                x = x + drift_of(x) * dt + _fallback._sigma_times(sig, xi) * sqdt
            else:
                calm = ~jumping
                inc = _fallback._sigma_times(sig, xi)
                if np.any(calm):
                    x[calm] = x[calm] + drift_of(x[calm]) * dt + inc[calm] * sqdt
                for i in np.flatnonzero(jumping):
                    x[i] = _jump_step(x[i], t0, t1, xi[i], next_jump, i, jgens[i], spec, sig,
                                      drift_of, mass, jump_log[i])
            bad = _fallback._exploded(x) & ~dead
            if np.any(bad):
                dead |= bad
            x[dead] = np.nan
            if (step + 1) % rec == 0:
                out[:, (step + 1) // rec] = x
        k += m_k
    flags = dead
    _warn_flagged(flags)
    return PathEnsemble(times, out, dt, int(seed), scheme="euler_maruyama+compound_poisson",
                        flagged=flags, backend="python", record_every=rec, jump_times=jump_log,
                        meta={"model": base.name, "nu": spec.nu.label})


def _jump_step(xi_state, t0, t1, xi, next_jump, i, g, spec, sig, drift_of, mass, log):
    """One Euler step of path ``i`` over ``[t0, t1]`` with jumps inside."""
    x = xi_state.reshape(1, -1)
    w_total = xi * math.sqrt(t1 - t0)  # Brownian increment of the full step, per noise component
    t = t0
    while next_jump[i] < t1:
        tau = next_jump[i]
        h, rest = tau - t, t1 - t
        # Brownian bridge: W(tau) - W(t) given the increment over [t, t1]
        eta = g.standard_normal(w_total.shape)
        frac = h / rest
        w_part = frac * w_total + math.sqrt(max(h * (rest - h) / rest, 0.0)) * eta
        x = x + drift_of(x) * h + _fallback._sigma_times(sig, w_part[None, :])
        x = x + spec.nu.sample(g, 1).reshape(1, -1)
        log.append(float(tau))
        w_total = w_total - w_part
        t = tau
        next_jump[i] = tau + g.exponential(1.0 / mass)
    x = x + drift_of(x) * (t1 - t) + _fallback._sigma_times(sig, w_total[None, :])
    return x[0]


# -- subordinators --------------------------------------------------------------------

@dataclass(frozen=True)
class SubordinatorSpec:
    """Subordinator families with exactly sampleable marginals.

    ``gamma``: ``S_t ~ Gamma(shape a t, rate b)``, ``phi(u) = a ln(1 + u/b)``.
    ``drift_only``: ``S_t = b t``, ``phi(u) = b u``.
    ``compound_poisson``: drift ``b`` plus jumps at rate ``lam`` with sizes
    from ``jump_sampler(rng, k)`` (non-negative); ``jump_laplace(u)`` gives
    ``E e^{-u J}`` so that ``phi(u) = b u + lam (1 - E e^{-u J})``.
    """

    family: str
    a: float = 1.0
    b: float = 1.0
    lam: float = 0.0
    jump_sampler: Callable | None = None
    jump_laplace: Callable | None = None

    def __post_init__(self):
        if self.family == "gamma":
            if not (self.a > 0 and self.b > 0):
                raise ValueError("gamma subordinator needs a > 0 and b > 0")
        elif self.family == "drift_only":
            if not self.b >= 0:
                raise ValueError("drift must be non-negative")
        elif self.family == "compound_poisson":
            if not (self.lam >= 0 and self.b >= 0):
                raise ValueError("compound Poisson subordinator needs lam >= 0 and b >= 0")
            if self.lam > 0 and self.jump_sampler is None:
                raise ValueError("compound Poisson subordinator needs a jump sampler")
        else:
            raise ValueError(f"unsupported subordinator family {self.family!r}")

    def bernstein(self, u):
        u = np.asarray(u, dtype=float)
        if self.family == "gamma":
            return self.a * np.log1p(u / self.b)
        if self.family == "drift_only":
            return self.b * u
        if self.lam == 0:
            return self.b * u
        if self.jump_laplace is None:
            raise ValueError("jump_laplace is needed to evaluate the exponent")
        return self.b * u + self.lam * (1.0 - np.asarray(self.jump_laplace(u)))

    @classmethod
    def exponential_jumps(cls, lam, mean, b=0.0):
        """Compound Poisson with exponential jump sizes of the given mean."""
        mean = float(mean)
        return cls("compound_poisson", b=b, lam=lam,
                   jump_sampler=lambda g, k: g.exponential(mean, size=k),
                   jump_laplace=lambda u: 1.0 / (1.0 + mean * np.asarray(u)))


def subordinator_sample(spec: SubordinatorSpec, t, n, seed, batch=0) -> np.ndarray:
    """``n`` i.i.d. samples of ``S_t`` from the substream ``(seed, batch, 2)``."""
    t = float(t)
    n = int(n)
    if t < 0 or n < 0:
        raise ValueError("need t >= 0 and n >= 0")
    g = _rng.generator(seed, batch, _rng.SUBORDINATOR)
    if spec.family == "drift_only" or t == 0:
        return np.full(n, spec.b * t)
    if spec.family == "gamma":
        return g.gamma(spec.a * t, 1.0 / spec.b, size=n)
    out = np.full(n, spec.b * t)
    if spec.lam > 0:
        counts = g.poisson(spec.lam * t, size=n)
        total = int(counts.sum())
        if total:
            sizes = np.asarray(spec.jump_sampler(g, total), dtype=float).reshape(-1)
            if np.any(sizes < 0):
                raise ValueError("subordinator jumps must be non-negative")
            owner = np.repeat(np.arange(n), counts)
            out = out + np.bincount(owner, weights=sizes, minlength=n)
    return out
