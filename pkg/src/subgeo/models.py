"""Coefficient models ``dX = b(X) dt + sigma(X) dB (+ jumps)``.

Fields act on batches: ``drift(x)`` maps an ``(n, d)`` array to ``(n, d)`` and
``diffusion(x)`` maps it to ``(n, d, m)``.  Built-in families also carry a
small integer code understood by the compiled simulation kernels.
"""
from __future__ import annotations

import importlib
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .quadrature import gauss_legendre

__all__ = [
    "CoefficientModel",
    "JumpKernel",
    "DRIFT_CODES",
    "ou",
    "linear",
    "brownian",
    "power_drift",
    "cosine_drift",
    "clip_jump",
    "build_model",
    "load_symbol",
]

# drift codes shared with the compiled kernels
DRIFT_CODES = {"zero": 0, "linear": 1, "power": 2, "cosine": 3, "clip": 4}


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, dim) if dim > 1 else x.reshape(-1, 1)
    if x.shape[-1] != dim:
        raise ValueError(f"points must have {dim} coordinates, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class JumpKernel:
    """Levy kernel ``nu(x, dy)`` described through the integrals the analysis needs.

    ``quadrature(x)`` returns ``(nodes, weights)`` of shapes ``(n, q, d)`` and
    ``(n, q)`` integrating against ``nu(x, .)``; ``compensator(x)`` returns
    ``int_{B_1} y nu(x, dy)`` and ``second_moment(x)`` the matrix
    ``n_ij(x) = int_{B_1} y_i y_j nu(x, dy)``.  Translation-invariant kernels
    additionally provide ``total_mass`` and ``sample(rng, k)`` so that they
    can be simulated.
    """

    kind: str
    compensator: Callable
    second_moment: Callable
    quadrature: Callable | None = None
    bounded_jump_radius: float | None = None
    total_mass: float | None = None
    sample: Callable | None = None
    label: str = "custom"

    def __post_init__(self):
        if self.kind not in ("none", "levy_translation_invariant", "state_dependent"):
            raise ValueError(f"unknown jump kernel kind {self.kind!r}")

    @classmethod
    def null(cls, dim=1):
        zero = lambda x: np.zeros_like(_as_batch(x, dim))
        zm = lambda x: np.zeros(_as_batch(x, dim).shape + (dim,))
        return cls("none", zero, zm, total_mass=0.0, label="none",
                   sample=lambda rng, k: np.zeros((k, dim)))

    @classmethod
    def uniform(cls, rate, lo, hi):
        """One-dimensional compound Poisson jumps ``rate * Uniform(lo, hi)``."""
        rate, lo, hi = float(rate), float(lo), float(hi)
        if not (rate >= 0 and hi > lo):
            raise ValueError("uniform jumps need rate >= 0 and hi > lo")
        a, b = max(lo, -1.0), min(hi, 1.0)
        dens = rate / (hi - lo)
        m1 = dens * (b * b - a * a) / 2.0 if b > a else 0.0
        m2 = dens * (b ** 3 - a ** 3) / 3.0 if b > a else 0.0
        xg, wg = gauss_legendre(16)
        nodes = lo + (hi - lo) * (xg + 1.0) / 2.0
        weights = rate * wg / 2.0

        def quad(x):
            n = _as_batch(x, 1).shape[0]
            return np.broadcast_to(nodes[None, :, None], (n, nodes.size, 1)), np.broadcast_to(weights, (n, nodes.size))

        return cls(
            "levy_translation_invariant",
            lambda x: np.full(_as_batch(x, 1).shape, m1),
            lambda x: np.full(_as_batch(x, 1).shape + (1,), m2),
            quadrature=quad,
            total_mass=rate,
            sample=lambda rng, k: rng.uniform(lo, hi, size=(k, 1)),
            label=f"uniform({lo:g},{hi:g})@{rate:g}",
        )

    @classmethod
    def constant(cls, rate, size):
        """One-dimensional Poisson jumps of fixed ``size`` at ``rate``."""
        rate, size = float(rate), float(size)
        if size == 0:
            raise ValueError("nu({0}) must vanish: jump size 0 is not allowed")
        inside = abs(size) < 1.0
        m1 = rate * size if inside else 0.0
        m2 = rate * size * size if inside else 0.0

        def quad(x):
            n = _as_batch(x, 1).shape[0]
            return np.full((n, 1, 1), size), np.full((n, 1), rate)

        return cls(
            "levy_translation_invariant",
            lambda x: np.full(_as_batch(x, 1).shape, m1),
            lambda x: np.full(_as_batch(x, 1).shape + (1,), m2),
            quadrature=quad,
            total_mass=rate,
            sample=lambda rng, k: np.full((k, 1), size),
            label=f"constant({size:g})@{rate:g}",
        )

    def check(self, probes, dim):
        """Finiteness of ``int (1 ^ |y|^2) nu`` and the bounded-jump condition.

        Returns a list of violations found at the probe points.
        """
        problems = []
        if self.quadrature is None or self.kind == "none":
            return problems
        x = _as_batch(probes, dim)
        nodes, w = self.quadrature(x)
        y2 = np.sum(nodes ** 2, axis=-1)
        if np.any(np.linalg.norm(nodes, axis=-1)[w > 0] == 0):
            problems.append("nu charges the origin")
        mass = np.sum(w * np.minimum(1.0, y2), axis=1)
        if not np.all(np.isfinite(mass)):
            problems.append("int (1 ^ |y|^2) nu(x, dy) is not finite")
        if self.bounded_jump_radius is not None:
            far = np.linalg.norm(x, axis=1) >= self.bounded_jump_radius
            if np.any(far):
                xf = x[far][:, None, :]
                after = np.linalg.norm(xf + nodes[far], axis=-1)
                bad = (after > np.linalg.norm(xf, axis=-1) * (1 + 1e-12)) & (w[far] > 0)
                if np.any(bad):
                    problems.append("jumps leave the ball B_|x|(-x) outside the bounded-jump radius")
        return problems


@dataclass(frozen=True)
class CoefficientModel:
    """Drift, diffusion and optional jump kernel of a Markov model in ``R^d``."""

    dim: int
    drift: Callable
    diffusion: Callable
    jump: JumpKernel | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    # constant diffusion matrix (d, m) when sigma does not depend on x
    sigma_const: np.ndarray | None = None
    # (code, parameters) for the compiled kernels
    kernel: tuple | None = None
    regularity_hints: dict = field(default_factory=dict)

    def b(self, x):
        return np.asarray(self.drift(_as_batch(x, self.dim)), dtype=float)

    def sigma(self, x):
        x = _as_batch(x, self.dim)
        return np.asarray(self.diffusion(x), dtype=float)

    def c(self, x):
        s = self.sigma(x)
        return np.einsum("nij,nkj->nik", s, s)

    @property
    def has_jumps(self):
        return self.jump is not None and self.jump.kind != "none"

    def compensated_drift(self, x):
        """``b(x) - int_{B_1} y nu(x, dy)``; exactly ``b`` without jumps."""
        x = _as_batch(x, self.dim)
        b = self.b(x)
        if not self.has_jumps:
            return b
        return b - np.asarray(self.jump.compensator(x), dtype=float)

    # -- regularity spot checks -------------------------------------------------

    def _ball_points(self, r, n, seed=0):
        rng = np.random.default_rng(seed)
        u = rng.standard_normal((n, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = r * rng.uniform(0, 1, n) ** (1.0 / self.dim)
        pts = u * rad[:, None]
        return np.vstack([pts, r * u])

    def check_local_bound(self, radii=(1.0, 10.0, 100.0), n=2000):
        """Sampled ``sup_{B_r} |b| + ||sigma||_HS`` per probe radius."""
        out = {}
        for r in radii:
            x = self._ball_points(r, n)
            val = np.linalg.norm(self.b(x), axis=1) + np.sqrt(np.sum(self.sigma(x) ** 2, axis=(1, 2)))
            out[float(r)] = float(np.max(val))
        return out

    def check_linear_growth(self, Gamma, radius=100.0, n=4000):
        """Worst ``2<x, b> + ||sigma||^2_HS - Gamma (1 + |x|^2)`` on a sampled ball."""
        x = self._ball_points(radius, n)
        lhs = 2 * np.sum(x * self.b(x), axis=1) + np.sum(self.sigma(x) ** 2, axis=(1, 2))
        margin = lhs - Gamma * (1 + np.sum(x * x, axis=1))
        return float(np.max(margin))

    def one_sided_lipschitz(self, radius=10.0, n=4000, seed=1):
        """Spot estimate of ``sup <x-y, b(x)-b(y)> / |x-y|^2`` over sampled pairs."""
        x = self._ball_points(radius, n, seed)
        y = self._ball_points(radius, n, seed + 1)
        d = x - y
        nd = np.sum(d * d, axis=1)
        ok = nd > 1e-20
        return float(np.max(np.sum(d * (self.b(x) - self.b(y)), axis=1)[ok] / nd[ok]))


def _const_sigma(sigma, dim):
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:
        s = s * np.eye(dim)
    elif s.ndim == 1:
        s = np.diag(s)
    if s.shape[0] != dim:
        raise ValueError("sigma must have d rows")
    s = np.ascontiguousarray(s)
    return s, (lambda x: np.broadcast_to(s, (np.shape(x)[0],) + s.shape))


def linear(theta=1.0, sigma=1.0, dim=1):
    """``b(x) = -theta x``; negative ``theta`` gives an outward drift."""
    theta = float(theta)
    s, diff = _const_sigma(sigma, dim)
    return CoefficientModel(dim, lambda x: -theta * x, diff, name="linear",
                            params={"theta": theta, "sigma": s.tolist(), "dim": dim},
                            sigma_const=s, kernel=(DRIFT_CODES["linear"], (theta,)))


def ou(theta=1.0, sigma=1.0, dim=1):
    """Ornstein-Uhlenbeck model ``dX = -theta X dt + sigma dB``."""
    m = linear(theta, sigma, dim)
    return CoefficientModel(**{**m.__dict__, "name": "ou"})


def brownian(sigma=1.0, dim=1):
    s, diff = _const_sigma(sigma, dim)
    return CoefficientModel(dim, lambda x: np.zeros_like(x), diff, name="brownian",
                            params={"sigma": s.tolist(), "dim": dim}, sigma_const=s,
                            kernel=(DRIFT_CODES["zero"], ()))


def power_drift(p=2.0, sigma=1.0, dim=1):
    """``b(x) = -x |x|^{p-1}``, i.e. ``-sgn(x)|x|^p`` on the line."""
    p = float(p)
    if p < 1:
        raise ValueError("power_drift needs p >= 1")
    s, diff = _const_sigma(sigma, dim)

    def drift(x):
        r = np.abs(x) if dim == 1 else np.linalg.norm(x, axis=1, keepdims=True)
        if p == 2.0:
            return -x * r
        return -x * r ** (p - 1.0)

    return CoefficientModel(dim, drift, diff, name="power_drift",
                            params={"p": p, "sigma": s.tolist(), "dim": dim}, sigma_const=s,
                            kernel=(DRIFT_CODES["power"], (p,)))


def cosine_drift(rho=1.0, sigma=1.0):
    """``b(x) = -sgn(x)(cos x + rho)`` for ``|x| >= 1``, one-dimensional.

    Inside ``[-1, 1]`` the sign is replaced by ``x`` so that ``b`` is Lipschitz;
    the radial analysis only uses ``|x| >= r0 >= 1``.
    """
    rho = float(rho)
    s, diff = _const_sigma(sigma, 1)

    def drift(x):
        return -np.clip(x, -1.0, 1.0) * (np.cos(x) + rho)

    return CoefficientModel(1, drift, diff, name="cosine_drift",
                            params={"rho": rho, "sigma": s.tolist()}, sigma_const=s,
                            kernel=(DRIFT_CODES["cosine"], (rho,)))


def clip_jump(drift="clip"):
    """Levy-driven model ``dX = Phi1 dt + dB + Phi3 dZ`` with ``Z`` uniform jumps.

    ``Phi3`` is the clip function (``-1`` beyond 1, ``-x`` inside, ``+1`` below
    -1) and ``Z`` jumps at rate one with ``Uniform[0, 1]`` sizes, so the kernel
    is ``nu(x, .) = law of Phi3(x) U``.  ``drift="cosine"`` swaps ``Phi1`` for
    ``-sgn(x)(cos x + 3/2)``.
    """
    s, diff = _const_sigma(1.0, 1)

    def phi3(x):
        return -np.clip(x, -1.0, 1.0)

    if drift == "clip":
        b = phi3
        kernel = (DRIFT_CODES["clip"], ())
    elif drift == "cosine":
        b = lambda x: -np.clip(x, -1.0, 1.0) * (np.cos(x) + 1.5)
        kernel = (DRIFT_CODES["cosine"], (1.5,))
    else:
        raise ValueError("clip_jump drift must be 'clip' or 'cosine'")

    zg, wg = gauss_legendre(16)
    z = (zg + 1.0) / 2.0
    w = wg / 2.0

    def quad(x):
        x = _as_batch(x, 1)
        # a zero multiplier means no jump at all, not a jump of size 0
        live = (phi3(x)[:, 0] != 0)[:, None]
        return phi3(x)[:, None, :] * z[None, :, None], np.where(live, w[None, :], 0.0)

    jump = JumpKernel(
        "state_dependent",
        compensator=lambda x: phi3(_as_batch(x, 1)) / 2.0,
        second_moment=lambda x: (phi3(_as_batch(x, 1)) ** 2 / 3.0)[:, :, None],
        quadrature=quad,
        bounded_jump_radius=1.0,
        label="phi3*uniform[0,1]@1",
    )
    return CoefficientModel(1, b, diff, jump=jump, name="clip_jump", params={"drift": drift},
                            sigma_const=s, kernel=kernel)


def load_symbol(ref):
    """Resolve ``"package.module:attr"`` to a Python object."""
    if ":" not in ref:
        raise ValueError(f"plugin reference {ref!r} must look like 'module:symbol'")
    mod, attr = ref.split(":", 1)
    obj = importlib.import_module(mod)
    for part in attr.split("."):
        obj = getattr(obj, part)
    return obj


_FAMILIES = {
    "ou": ou,
    "linear": linear,
    "brownian": brownian,
    "power_drift": power_drift,
    "cosine_drift": cosine_drift,
    "clip_jump": clip_jump,
}


def build_model(family, params=None, jump=None):
    """Construct a model from a family name (or plugin reference) and parameters.

    ``jump`` optionally attaches a translation-invariant compound Poisson kernel,
    given as ``{"law": "uniform", "rate": .., "lo": .., "hi": ..}`` or
    ``{"law": "constant", "rate": .., "size": ..}``.
    """
    params = dict(params or {})
    if family in _FAMILIES:
        model = _FAMILIES[family](**params)
    else:
        factory = load_symbol(family)
        model = factory(**params) if callable(factory) and not isinstance(factory, CoefficientModel) else factory
        if not isinstance(model, CoefficientModel):
            raise TypeError(f"plugin {family!r} did not produce a CoefficientModel")
    if jump:
        jump = dict(jump)
        law = jump.pop("law")
        if law == "uniform":
            kern = JumpKernel.uniform(**jump)
        elif law == "constant":
            kern = JumpKernel.constant(**jump)
        else:
            raise ValueError(f"unknown jump law {law!r}")
        if model.dim != 1:
            raise ValueError("built-in jump laws are one-dimensional")
        model = CoefficientModel(**{**model.__dict__, "jump": kern})
    return model


def is_finite_mass(kernel):
    return kernel is None or (kernel.total_mass is not None and math.isfinite(kernel.total_mass))
