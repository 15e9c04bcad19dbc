"""Post-hoc recalibration: temperature scaling and one-vs-rest isotonic regression."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from .errors import DegenerateLabelsWarning, InputError
from .simplex import LabeledPredictions, softmax

T_BOUNDS = (0.05, 20.0)
_INVPHI = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class TemperatureModel:
    T: float

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"temperature must be positive and finite, got {self.T}")

    def to_dict(self) -> dict:
        return {"type": "temperature", "T": self.T}


def mean_nll(logits: np.ndarray, labels: np.ndarray, T: float = 1.0) -> float:
    lp = log_softmax(logits / T, axis=1)
    return float(-np.mean(lp[np.arange(labels.size), labels]))


def golden_section(f, lo: float, hi: float, tol: float) -> float:
    """Minimise a unimodal ``f`` on ``[lo, hi]`` to an interval width of ``tol``."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    x = (a + b) / 2
    # the bracket ends are candidates too (monotone objectives)
    cands = [(f(x), x), (f(lo), lo), (f(hi), hi)]
    return min(cands)[1]


def temperature_fit(validation: LabeledPredictions, bounds=T_BOUNDS,
                    tol: float = 1e-4) -> TemperatureModel:
    """Temperature minimising mean NLL, by golden-section search on ``log T``.

    Probability-only datasets use ``log p`` as logits.
    """
    z = validation.get_logits()
    y = validation.labels
    if np.unique(y).size < 2:
        warnings.warn("only one class present; NLL is monotone in T and the "
                      "search ends at a bracket boundary", DegenerateLabelsWarning)
    logT = golden_section(lambda u: mean_nll(z, y, math.exp(u)),
                          math.log(bounds[0]), math.log(bounds[1]), tol)
    return TemperatureModel(math.exp(logT))


def temperature_apply(model: TemperatureModel, dataset: LabeledPredictions) -> LabeledPredictions:
    """Row-wise ``softmax(z / T)``; the logits of the result are ``z / T``."""
    z = dataset.get_logits() / model.T
    return LabeledPredictions(softmax(z), dataset.labels, logits=z)


def pav(y, w=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit by pool-adjacent-violators."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals, wts, sizes = [], [], []
    for yi, wi in zip(y, w):
        vals.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            v2, w2, s2 = vals.pop(), wts.pop(), sizes.pop()
            v1, w1, s1 = vals.pop(), wts.pop(), sizes.pop()
            wt = w1 + w2
            vals.append((v1 * w1 + v2 * w2) / wt)
            wts.append(wt)
            sizes.append(s1 + s2)
    return np.repeat(vals, sizes)


@dataclass(frozen=True)
class IsotonicClass:
    breakpoints: np.ndarray
    values: np.ndarray

    def __call__(self, x) -> np.ndarray:
        # right-continuous step function, clamped outside the fitted range
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        return self.values[np.clip(idx, 0, self.values.size - 1)]


@dataclass(frozen=True)
class IsotonicModel:
    classes: list

    def to_dict(self) -> dict:
        return {
            "type": "isotonic",
            "classes": [
                {"breakpoints": c.breakpoints.tolist(), "values": c.values.tolist()}
                for c in self.classes
            ],
        }


def isotonic_fit_1d(scores, targets) -> IsotonicClass:
    """Fit one class; tied scores are pooled before PAV."""
    order = np.argsort(scores, kind="stable")
    s = np.asarray(scores, dtype=float)[order]
    t = np.asarray(targets, dtype=float)[order]
    uniq, start = np.unique(s, return_index=True)
    w = np.diff(np.append(start, s.size)).astype(float)
    means = np.add.reduceat(t, start) / w
    return IsotonicClass(uniq, np.clip(pav(means, w), 0.0, 1.0))


def isotonic_fit(validation: LabeledPredictions) -> IsotonicModel:
    """Per-class one-vs-rest isotonic regression of ``1{y = i}`` on ``g_i``."""
    Y = validation.onehot
    return IsotonicModel([isotonic_fit_1d(validation.probs[:, i], Y[:, i])
                          for i in range(validation.k)])


def isotonic_scores(model: IsotonicModel, probs) -> np.ndarray:
    """Per-class fitted values before row normalisation."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape[1] != len(model.classes):
        raise InputError(f"model has {len(model.classes)} classes, data has {probs.shape[1]}")
    return np.stack([c(probs[:, i]) for i, c in enumerate(model.classes)], axis=1)


def isotonic_apply(model: IsotonicModel, dataset: LabeledPredictions) -> LabeledPredictions:
    """Map each class score and renormalise rows; all-zero rows become uniform."""
    q = isotonic_scores(model, dataset.probs)
    s = q.sum(axis=1, keepdims=True)
    zero = s[:, 0] <= 0
    q[zero] = 1.0
    s[zero] = q.shape[1]
    return LabeledPredictions(q / s, dataset.labels)


def model_from_dict(d: dict):
    kind = d.get("type")
    if kind == "temperature":
        return TemperatureModel(float(d["T"]))
    if kind == "isotonic":
        return IsotonicModel([
            IsotonicClass(np.asarray(c["breakpoints"], dtype=float),
                          np.asarray(c["values"], dtype=float))
            for c in d["classes"]
        ])
    raise InputError(f"unknown model type {kind!r}")


def save_model(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def apply_model(model, dataset: LabeledPredictions) -> LabeledPredictions:
    if isinstance(model, TemperatureModel):
        return temperature_apply(model, dataset)
    return isotonic_apply(model, dataset)
