"""Synthetic miscalibrated classifiers with a known conditional expectation.

Uniform points on the simplex are sharpened with temperature ``t1`` to give
calibrated probabilities ``s``; labels are drawn from ``s``; the prediction
is ``s`` re-tempered with ``t2``.  The second map is injective, so
``E[Y | g(X)] = s`` and the true calibration error is ``E[D_F(s, g)]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bregman import bregman_divergence, get_generator
from .simplex import LabeledPredictions


@dataclass(frozen=True)
class SynthConfig:
    n: int
    k: int
    t1: float = 0.9
    t2: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.k < 2:
            raise ValueError("need n >= 1 and k >= 2")
        if not (self.t1 > 0 and self.t2 > 0):
            raise ValueError("temperatures must be positive")


@dataclass(frozen=True)
class SynthSamples:
    truth: np.ndarray
    predictions: np.ndarray
    labels: np.ndarray

    @property
    def dataset(self) -> LabeledPredictions:
        return LabeledPredictions(self.predictions, self.labels)

    def __len__(self):
        return self.labels.shape[0]


def temp_map(p, t: float) -> np.ndarray:
    """Temperature-scale probabilities: ``p_i^(1/t)`` renormalised.

    Zero entries stay zero and ``t = 1`` is the identity.
    """
    p = np.asarray(p, dtype=float)
    if t == 1.0:
        return p.copy()
    with np.errstate(divide="ignore"):
        z = np.log(p) / t
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _draw(rng: np.random.Generator, n: int, k: int, t1: float, t2: float):
    u = rng.standard_exponential((n, k))
    u /= u.sum(axis=1, keepdims=True)
    s = temp_map(u, t1)
    cdf = np.cumsum(s, axis=1)
    labels = np.minimum((rng.random(n)[:, None] > cdf).sum(axis=1), k - 1)
    return s, temp_map(s, t2), labels.astype(np.int64)


def generate(config: SynthConfig) -> SynthSamples:
    """Draw ``config.n`` samples; identical seeds give identical output."""
    rng = np.random.default_rng(config.seed)
    s, g, y = _draw(rng, config.n, config.k, config.t1, config.t2)
    return SynthSamples(s, g, y)


@dataclass(frozen=True)
class OracleValue:
    value: float
    stderr: float
    draws: int

    def to_dict(self):
        return {"value": self.value, "stderr": self.stderr, "draws": self.draws}


def ground_truth_ce(config: SynthConfig, F="kl", monte_carlo_n: int = 10**6,
                    seed: int | None = None, chunk: int = 200_000) -> OracleValue:
    """Monte-Carlo value of the true calibration error for ``config``.

    Uses its own draws (``seed`` defaults to an offset of ``config.seed``),
    never the evaluation sample.
    """
    F = get_generator(F)
    if config.t2 == 1.0:
        return OracleValue(0.0, 0.0, monte_carlo_n)
    rng = np.random.default_rng(config.seed + 1_000_003 if seed is None else seed)
    total = total_sq = 0.0
    left = monte_carlo_n
    while left > 0:
        m = min(chunk, left)
        s, g, _ = _draw(rng, m, config.k, config.t1, config.t2)
        d = bregman_divergence(F, s, g)
        total += d.sum()
        total_sq += np.sum(d * d)
        left -= m
    mean = total / monte_carlo_n
    var = max(total_sq / monte_carlo_n - mean * mean, 0.0)
    return OracleValue(float(mean), float(np.sqrt(var / monte_carlo_n)), monte_carlo_n)
