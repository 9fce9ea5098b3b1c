"""Numpy Euler-Maruyama kernels, vectorised across a block of paths.

The Gaussian increments of path ``i`` are drawn from its own generator in
chunks of whole time steps, which reproduces the draw order of the compiled
kernel step for step.
"""
from __future__ import annotations

import numpy as np

EXPLODE = 1e12


def _exploded(x):
    return ~np.all(np.isfinite(x) & (np.abs(x) <= EXPLODE), axis=1)


def _sigma_times(sig, xi):
    # sum over noise components in a fixed left-to-right order
    inc = np.zeros((xi.shape[0], sig.shape[0]))
    for a in range(sig.shape[0]):
        acc = 0.0
        for j in range(sig.shape[1]):
            acc = acc + sig[a, j] * xi[:, j]
        inc[:, a] = acc
    return inc


def _sigma_batch(s, xi):
    # state-dependent sigma of shape (n, d, m)
    inc = np.zeros(s.shape[:2])
    for a in range(s.shape[1]):
        acc = 0.0
        for j in range(s.shape[2]):
            acc = acc + s[:, a, j] * xi[:, j]
        inc[:, a] = acc
    return inc


def euler_block(model, x0, gens, dt, n_steps, rec, y0=None, eps=None, chunk=512):
    """Numpy twin of the compiled ``euler_block``.

    Returns ``(out, flags, out2, ctime)``; the last two are ``None`` without a
    partner.  ``model.sigma_const`` is used when present, otherwise the
    diffusion is evaluated at every step.
    """
    x = np.array(x0, dtype=float)
    n, d = x.shape
    sig = model.sigma_const
    m = sig.shape[1] if sig is not None else np.asarray(model.sigma(x[:1])).shape[2]
    n_rec = n_steps // rec + 1
    out = np.empty((n, n_rec, d))
    out[:, 0] = x
    flags = np.zeros(n, dtype=np.uint8)
    sqdt = np.sqrt(dt)
    coupled = y0 is not None
    out2 = ctime = None
    glued = np.zeros(n, dtype=bool)
    if coupled:
        z = np.array(y0, dtype=float)
        ctime = np.full(n, -1, dtype=np.int64)
        glued = np.sqrt(np.sum((x - z) * (x - z), axis=1)) <= eps
        ctime[glued] = 0
        z[glued] = x[glued]
        out2 = np.empty_like(out)
        out2[:, 0] = z
    dead = np.zeros(n, dtype=bool)
    k = 0
    while k < n_steps:
        m_k = min(chunk, n_steps - k)
        noise = np.stack([g.standard_normal((m_k, m)) for g in gens])
        for s in range(m_k):
            xi = noise[:, s, :]
            bx = model.drift(x)
            if sig is not None:
                inc = _sigma_times(sig, xi)
            else:
                inc = _sigma_batch(np.asarray(model.diffusion(x), dtype=float), xi)
            if coupled:
                live = ~glued
                bz = model.drift(z[live]) if np.any(live) else None
            x = x + bx * dt + inc * sqdt
            if coupled and np.any(live):
                z[live] = z[live] + bz * dt + inc[live] * sqdt
            boom = _exploded(x)
            if coupled:
                boom |= live & _exploded(z)
            new = boom & ~dead
            if np.any(new):
                flags[new] = 1
                dead |= new
            x[dead] = np.nan
            if coupled:
                z[dead] = np.nan
                z[glued] = x[glued]
                live = ~glued & ~dead
                if np.any(live):
                    diff = x[live] - z[live]
                    hit = np.sqrt(np.sum(diff * diff, axis=1)) <= eps[live]
                    if np.any(hit):
                        idx = np.flatnonzero(live)[hit]
                        glued[idx] = True
                        ctime[idx] = k + s + 1
                        z[idx] = x[idx]
            if (k + s + 1) % rec == 0:
                q = (k + s + 1) // rec
                out[:, q] = x
                if coupled:
                    out2[:, q] = z
        k += m_k
    return out, flags, out2, ctime
