"""Convex generators and the Bregman divergences they induce.

Every function here is vectorised over leading axes: ``p`` may be a single
probability vector ``(k,)`` or a batch ``(n, k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import xlogy

from .errors import DimensionMismatch, GeneratorCheckError
from .simplex import EPS, clamp_log


@dataclass(frozen=True)
class ConvexGenerator:
    """A convex function ``F`` on the simplex together with its gradient.

    ``dim`` is ``None`` for generators defined on any simplex, or a fixed
    dimension (2 for the binary one-vs-rest generators).
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    dim: int | None = None

    def check_dim(self, k: int) -> None:
        if self.dim is not None and k != self.dim:
            raise DimensionMismatch(f"generator {self.name!r} needs dimension {self.dim}, got {k}")


def _sq_value(p):
    return np.sum(p * p, axis=-1)


def _sq_grad(p):
    return 2.0 * p


def _negent_value(p):
    # xlogy gives 0*log(0) = 0 at the vertices
    return np.sum(xlogy(p, p), axis=-1)


def _negent_grad(p):
    return clamp_log(p) + 1.0


def _first_sq_value(p):
    return p[..., 0] ** 2


def _first_sq_grad(p):
    g = np.zeros_like(p)
    g[..., 0] = 2.0 * p[..., 0]
    return g


SQUARED_NORM = ConvexGenerator("squared-norm", _sq_value, _sq_grad)
NEG_ENTROPY = ConvexGenerator("neg-entropy", _negent_value, _negent_grad)
# One-vs-rest generators act on (q, 1 - q).  q^2 + (1-q)^2 is the squared norm
# of that 2-vector and q log q + (1-q) log(1-q) its negative entropy.
BINARY_BRIER = ConvexGenerator("binary-brier", _sq_value, _sq_grad, dim=2)
BINARY_ENTROPY = ConvexGenerator("binary-entropy", _negent_value, _negent_grad, dim=2)
# F(q) = q^2: half the divergence of BINARY_BRIER, i.e. plain (q - r)^2.
BINARY_SQ = ConvexGenerator("binary-sq", _first_sq_value, _first_sq_grad, dim=2)

_REGISTRY: dict[str, ConvexGenerator] = {}
_ALIASES = {"brier": "squared-norm", "kl": "neg-entropy", "l2": "squared-norm"}
# canonical generator -> the one-vs-rest generator used in class-wise mode
BINARY_COUNTERPART = {"squared-norm": "binary-brier", "neg-entropy": "binary-entropy"}


def get_generator(name: str | ConvexGenerator) -> ConvexGenerator:
    if isinstance(name, ConvexGenerator):
        return name
    key = _ALIASES.get(name, name)
    try:
        return _REGISTRY[key]
    except KeyError:
        raise KeyError(f"unknown generator {name!r}; known: {sorted(_REGISTRY) + sorted(_ALIASES)}") from None


def generator_value(F: ConvexGenerator, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    F.check_dim(p.shape[-1])
    return F.value(p)


def generator_gradient(F: ConvexGenerator, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    F.check_dim(p.shape[-1])
    return F.gradient(p)


def bregman_divergence(F: ConvexGenerator, p, q) -> np.ndarray:
    """``D_F(p, q) = F(p) - F(q) - <grad F(q), p - q>`` row-wise."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape[-1] != q.shape[-1]:
        raise DimensionMismatch(f"dimension {p.shape[-1]} vs {q.shape[-1]}")
    F.check_dim(p.shape[-1])
    return F.value(p) - F.value(q) - np.sum(F.gradient(q) * (p - q), axis=-1)


def kl_divergence(p, q) -> np.ndarray:
    """``sum_i p_i log(p_i / q_i)`` restricted to ``p_i > 0``; ``q`` clamped."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return np.sum(xlogy(p, p) - xlogy(p, np.clip(q, EPS, 1.0)), axis=-1)


def _uniform_simplex(rng, n, k):
    e = rng.standard_exponential((n, k))
    return e / e.sum(axis=1, keepdims=True)


def check_generator(F: ConvexGenerator, k: int | None = None, trials: int = 1000,
                    seed: int = 0) -> None:
    """Spot-check convexity and the hand-coded gradient of ``F``.

    Raises :class:`GeneratorCheckError` on the first failure.
    """
    k = F.dim or k or 3
    rng = np.random.default_rng(seed)
    p = _uniform_simplex(rng, trials, k)
    q = _uniform_simplex(rng, trials, k)
    lam = rng.random((trials, 1))
    mix = F.value(lam * p + (1 - lam) * q)
    chord = lam[:, 0] * F.value(p) + (1 - lam[:, 0]) * F.value(q)
    if not np.all(np.isfinite(mix)) or np.any(mix > chord + 1e-9):
        raise GeneratorCheckError(f"{F.name}: convexity check failed")

    # keep finite-difference probes away from the boundary
    x = 0.9 * _uniform_simplex(rng, 50, k) + 0.1 / k
    g = F.gradient(x)
    if g.shape != x.shape or not np.all(np.isfinite(g)):
        raise GeneratorCheckError(f"{F.name}: gradient has the wrong shape or is not finite")
    step = 1e-6
    fd = np.empty_like(x)
    for i in range(k):
        e = np.zeros(k)
        e[i] = step
        fd[:, i] = (F.value(x + e) - F.value(x - e)) / (2 * step)
    err = np.linalg.norm(fd - g, axis=1)
    scale = np.maximum(np.linalg.norm(g, axis=1), 1.0)
    if np.any(err > 1e-5 * scale):
        raise GeneratorCheckError(f"{F.name}: gradient disagrees with finite differences")


def register_generator(F: ConvexGenerator, k: int | None = None) -> ConvexGenerator:
    """Validate and register a generator under ``F.name``."""
    check_generator(F, k=k)
    _REGISTRY[F.name] = F
    return F


for _g in (SQUARED_NORM, NEG_ENTROPY, BINARY_BRIER, BINARY_ENTROPY, BINARY_SQ):
    _REGISTRY[_g.name] = _g
