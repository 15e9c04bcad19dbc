"""Probability-simplex primitives and the labelled-prediction container.

Probability vectors are plain 1-D numpy arrays; batches are ``(n, k)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import log_softmax

from .errors import (
    DimensionMismatch,
    InputError,
    LabelOutOfRange,
    NegativeEntry,
    NonFinite,
    ZeroSum,
)

#: Floor applied to probabilities before any logarithm.
EPS = 1e-12
#: Largest deviation of a row sum from 1 that is silently re-normalised.
SUM_TOL = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def make_prob_vector(raw) -> np.ndarray:
    """Normalise non-negative weights into a point on the simplex.

    >>> make_prob_vector([1, 3]).tolist()
    [0.25, 0.75]
    """
    x = np.asarray(raw, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {x.shape}")
    if x.size < 2:
        raise DimensionMismatch("a probability vector needs at least 2 entries")
    if not np.all(np.isfinite(x)):
        raise NonFinite("probability vector contains non-finite entries")
    if np.any(x < 0):
        raise NegativeEntry("probability vector contains negative entries")
    s = x.sum()
    if s <= 0:
        raise ZeroSum("probability vector sums to zero")
    return _frozen(x / s)


def clamp_log(p) -> np.ndarray:
    """``log`` of probabilities clamped to ``[EPS, 1]``."""
    return np.log(np.clip(p, EPS, 1.0))


def softmax(z) -> np.ndarray:
    """Row-wise softmax of a logit matrix (or a single logit vector)."""
    z = np.asarray(z, dtype=float)
    return np.exp(log_softmax(z, axis=-1))


def softmax_extended(activations) -> np.ndarray:
    """Injective map from ``R^d`` into the interior of the ``d+1`` simplex.

    A zero logit is appended before the softmax, so the inverse is
    ``a_i = log(p_i / p_{d+1})``.  Accepts a vector or an ``(n, d)`` matrix.
    """
    a = np.asarray(activations, dtype=float)
    if not np.all(np.isfinite(a)):
        raise NonFinite("activations contain non-finite values")
    if a.ndim == 0:
        a = a[None]
    pad = np.zeros(a.shape[:-1] + (1,))
    return softmax(np.concatenate([a, pad], axis=-1))


def inverse_softmax_extended(p) -> np.ndarray:
    """Recover the activations from the output of :func:`softmax_extended`."""
    p = np.asarray(p, dtype=float)
    return np.log(p[..., :-1]) - np.log(p[..., -1:])


def validate_probabilities(probs, tol: float = SUM_TOL) -> np.ndarray:
    """Check an ``(n, k)`` matrix row by row and re-normalise small drift.

    Rows whose sum is off by more than ``tol`` are rejected; the error message
    names the first offending row.
    """
    p = np.array(probs, dtype=float)
    if p.ndim != 2:
        raise DimensionMismatch(f"predictions must be a 2-D array, got shape {p.shape}")
    if p.shape[1] < 2:
        raise DimensionMismatch("predictions need at least 2 classes")
    bad = ~np.isfinite(p).all(axis=1)
    if bad.any():
        raise NonFinite(f"row {int(np.argmax(bad))}: non-finite probability")
    bad = (p < 0).any(axis=1)
    if bad.any():
        raise NegativeEntry(f"row {int(np.argmax(bad))}: negative probability")
    s = p.sum(axis=1)
    bad = np.abs(s - 1.0) > tol
    if bad.any():
        i = int(np.argmax(bad))
        raise InputError(f"row {i}: probabilities sum to {s[i]!r}, not 1 within {tol}")
    # rows already normalised up to rounding are left bit-identical
    drift = np.abs(s - 1.0) > 4 * p.shape[1] * np.finfo(float).eps
    p[drift] /= s[drift, None]
    return p


@dataclass(frozen=True)
class LabeledPredictions:
    """Aligned predictions ``(n, k)`` and integer class labels ``(n,)``.

    Labels are stored as indices; :attr:`onehot` expands them on demand.
    """

    probs: np.ndarray
    labels: np.ndarray
    logits: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        probs = validate_probabilities(self.probs)
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise DimensionMismatch("labels must be one-dimensional")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.mod(labels, 1) == 0):
                raise InputError("labels must be integers")
        labels = labels.astype(np.int64)
        n, k = probs.shape
        if labels.shape[0] != n:
            raise DimensionMismatch(f"{n} predictions but {labels.shape[0]} labels")
        if n < 2:
            raise InputError("a dataset needs at least 2 rows")
        bad = (labels < 0) | (labels >= k)
        if bad.any():
            i = int(np.argmax(bad))
            raise LabelOutOfRange(f"row {i}: label {labels[i]} outside [0, {k})")
        object.__setattr__(self, "probs", _frozen(probs))
        object.__setattr__(self, "labels", _frozen(labels))
        if self.logits is not None:
            z = np.array(self.logits, dtype=float)
            if z.shape != probs.shape:
                raise DimensionMismatch("logits and probabilities differ in shape")
            object.__setattr__(self, "logits", _frozen(z))

    @classmethod
    def from_logits(cls, logits, labels) -> "LabeledPredictions":
        z = np.asarray(logits, dtype=float)
        if not np.all(np.isfinite(z)):
            raise NonFinite("logits contain non-finite values")
        return cls(softmax(z), labels, logits=z)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def k(self) -> int:
        return self.probs.shape[1]

    @property
    def onehot(self) -> np.ndarray:
        return np.eye(self.k)[self.labels]

    def get_logits(self) -> np.ndarray:
        """Stored logits, or ``log`` of the clamped probabilities."""
        if self.logits is not None:
            return self.logits
        return clamp_log(self.probs)

    def take(self, idx) -> "LabeledPredictions":
        idx = np.asarray(idx)
        z = None if self.logits is None else self.logits[idx]
        return LabeledPredictions(self.probs[idx], self.labels[idx], logits=z)


@dataclass(frozen=True)
class EstimateReport:
    """A single named estimate plus what is needed to reproduce it."""

    metric_name: str
    value: float
    n: int
    k: int
    kernel: dict[str, Any]
    generator: str
    seed: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise InputError(f"{self.metric_name} is not finite: {self.value}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric_name,
            "value": float(self.value),
            "n": self.n,
            "k": self.k,
            "kernel": self.kernel,
            "generator": self.generator,
            "seed": self.seed,
        }
