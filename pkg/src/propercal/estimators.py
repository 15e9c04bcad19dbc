"""Finite-sample estimators of proper calibration error, refinement and sharpness.

All kernel estimators share one conditional-expectation estimate per point,
computed leave-one-out (point ``h`` never weights its own label)::

    E_h = sum_{j != h} k(g_h, g_j) y_j / sum_{j != h} k(g_h, g_j)

From it:

* calibration error ``mean_h D_F(E_h, g_h)``
* refinement ``-mean_h F(E_h)``
* sharpness ``mean_h F(E_h) - F(y_bar)``
* calibration error via the risk ``-REF + mean_i (D_F(y_i, g_i) - F(y_i))``
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import xlogy

from .bregman import (
    BINARY_COUNTERPART,
    ConvexGenerator,
    bregman_divergence,
    get_generator,
)
from .errors import InvariantViolation
from .kernels import Binning, Dirichlet, KernelSpec, LogWeightMatrix, bin_ids, resolve_kernel
from .simplex import EPS, LabeledPredictions, softmax_extended

NEG_TOL = 1e-12


def _onehot(labels: np.ndarray, k: int) -> np.ndarray:
    return np.eye(k)[labels]


def _cond_expectation(probs, labels, num_classes, kernel: KernelSpec,
                      exclude_diagonal: bool = True):
    """Return ``(E, resolved_kernel)`` for raw arrays.

    ``num_classes`` is the label-space size; it may differ from the
    prediction dimension (layer sharpness feeds activations of any width).
    """
    n = probs.shape[0]
    if exclude_diagonal and n < 2:
        raise ValueError("leave-one-out estimation needs n >= 2")
    Y = _onehot(labels, num_classes)
    kernel = resolve_kernel(kernel, probs)

    if isinstance(kernel, Binning):
        ids = bin_ids(probs, kernel.bins)
        counts = np.bincount(ids).astype(float)
        sums = np.zeros((counts.size, num_classes))
        np.add.at(sums, ids, Y)
        if not exclude_diagonal:
            return sums[ids] / counts[ids, None], kernel
        c = counts[ids] - 1.0
        lonely = c == 0
        c[lonely] = 1.0
        E = (sums[ids] - Y) / c[:, None]
        # a point alone in its bin falls back to its own label
        E[lonely] = Y[lonely]
        return E, kernel

    W = LogWeightMatrix(probs, kernel, exclude_diagonal)
    E = np.empty((n, num_classes))
    for start, stop, L in W.blocks():
        # shifting by the row maximum makes num/den the ratio of two
        # LogSumExps; classes with no support get exactly zero mass
        L -= L.max(axis=1, keepdims=True)
        np.exp(L, out=L)
        num = L @ Y
        E[start:stop] = num / num.sum(axis=1, keepdims=True)
    return E, kernel


def cond_expectation(dataset: LabeledPredictions, kernel: KernelSpec = Dirichlet(),
                     exclude_diagonal: bool = True) -> np.ndarray:
    """Kernel estimate of ``E[Y | g(x_h)]`` for every row, shape ``(n, k)``."""
    return _cond_expectation(dataset.probs, dataset.labels, dataset.k, kernel,
                             exclude_diagonal)[0]


def _check_nonneg(name, value):
    if not np.isfinite(value):
        raise InvariantViolation(f"{name} is not finite")
    if value < -NEG_TOL:
        raise InvariantViolation(f"{name} = {value} is negative")
    return value


def ce_from_estimates(F: ConvexGenerator, E, probs) -> float:
    return _check_nonneg("calibration error", float(np.mean(bregman_divergence(F, E, probs))))


def ce_direct(dataset: LabeledPredictions, F="kl", kernel: KernelSpec = Dirichlet()) -> float:
    """Plug-in calibration error ``mean_h D_F(E_h, g(x_h))``."""
    F = get_generator(F)
    E = cond_expectation(dataset, kernel)
    return ce_from_estimates(F, E, dataset.probs)


def kl_closed_form(E, probs) -> float:
    """``mean_h <E_h, log(E_h / g_h)>`` with ``0 log 0 = 0``."""
    terms = xlogy(E, E) - xlogy(E, np.clip(probs, EPS, 1.0))
    return float(np.mean(terms.sum(axis=1)))


def ce_kl_closed_form(dataset: LabeledPredictions, kernel: KernelSpec = Dirichlet()) -> float:
    """KL calibration error written directly as an expected KL divergence."""
    E = cond_expectation(dataset, kernel)
    return kl_closed_form(E, dataset.probs)


def l2_closed_form(E, probs) -> float:
    """``mean_h ||E_h - g_h||^2``."""
    return float(np.mean(np.sum((E - probs) ** 2, axis=1)))


def refinement(dataset: LabeledPredictions, F="kl", kernel: KernelSpec = Dirichlet()) -> float:
    """``-mean_h F(E_h)`` with leave-one-out estimates."""
    F = get_generator(F)
    E = cond_expectation(dataset, kernel)
    return float(-np.mean(F.value(E)))


def empirical_risk(dataset: LabeledPredictions, F="kl") -> float:
    """``mean_i D_F(y_i, g(x_i))``; the mean log loss for the KL generator."""
    F = get_generator(F)
    return float(np.mean(bregman_divergence(F, dataset.onehot, dataset.probs)))


def _mean_F_labels(F, labels, k):
    return float(np.mean(F.value(_onehot(labels, k))))


def ce_via_risk(dataset: LabeledPredictions, F="kl", kernel: KernelSpec = Dirichlet()) -> float:
    """Calibration error recovered from the risk minus refinement.

    Unlike :func:`ce_direct` this can be slightly negative on finite samples.
    """
    rep = decompose(dataset, F, kernel)
    return rep.ce_via_risk


def sharpness(dataset: LabeledPredictions, F="kl", kernel: KernelSpec = Dirichlet()) -> float:
    """``-F(y_bar) - REF``; an estimate of prediction/label mutual information under KL."""
    F = get_generator(F)
    E = cond_expectation(dataset, kernel)
    ybar = dataset.onehot.mean(axis=0)
    return float(np.mean(F.value(E)) - F.value(ybar))


@dataclass(frozen=True)
class DecompositionReport:
    risk: float
    calibration_error: float
    ce_via_risk: float
    refinement: float
    sharpness: float
    mean_F_labels: float
    generator: str
    kernel: dict = field(default_factory=dict)
    n: int = 0
    k: int = 0
    ce_kl: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["ce_kl"] is None:
            del d["ce_kl"]
        return d


def _decompose_arrays(probs, labels, k, F: ConvexGenerator, kernel: KernelSpec, E=None):
    if E is None:
        E, kernel = _cond_expectation(probs, labels, k, kernel)
    Y = _onehot(labels, k)
    risk = float(np.mean(bregman_divergence(F, Y, probs)))
    mean_fy = float(np.mean(F.value(Y)))
    ref = float(-np.mean(F.value(E)))
    ce = ce_from_estimates(F, E, probs)
    sharp = -float(F.value(Y.mean(axis=0))) - ref
    ce_kl = kl_closed_form(E, probs) if F.name in ("neg-entropy", "binary-entropy") else None
    return DecompositionReport(
        risk=risk,
        calibration_error=ce,
        ce_via_risk=-ref + (risk - mean_fy),
        refinement=ref,
        sharpness=sharp,
        mean_F_labels=mean_fy,
        generator=F.name,
        kernel=kernel.describe() | {"loo": True, "clamp_eps": EPS},
        n=probs.shape[0],
        k=k,
        ce_kl=ce_kl,
    )


def decompose(dataset: LabeledPredictions, F="kl", kernel: KernelSpec = Dirichlet(),
              E=None) -> DecompositionReport:
    """Risk, both calibration error paths, refinement and sharpness at once.

    ``E`` may be passed to reuse conditional expectations computed with the
    same (resolved) kernel, e.g. when evaluating several generators.
    """
    F = get_generator(F)
    F.check_dim(dataset.k)
    return _decompose_arrays(dataset.probs, dataset.labels, dataset.k, F, kernel, E)


def _binary_generator(F) -> ConvexGenerator:
    F = get_generator(F)
    if F.dim == 2:
        return F
    return get_generator(BINARY_COUNTERPART[F.name])


def one_vs_rest(dataset: LabeledPredictions, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Binary problem for class ``i``: predictions ``(g_i, 1 - g_i)``, label 0 iff ``y = i``."""
    g = dataset.probs[:, i]
    return np.stack([g, 1.0 - g], axis=1), (dataset.labels != i).astype(np.int64)


@dataclass(frozen=True)
class ClasswiseReport:
    per_class: list
    generator: str

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.per_class]))

    @property
    def calibration_error(self) -> float:
        return self.mean("calibration_error")

    def to_dict(self) -> dict:
        keys = ("risk", "calibration_error", "ce_via_risk", "refinement", "sharpness")
        out = {key: self.mean(key) for key in keys}
        out["generator"] = self.generator
        out["per_class"] = [r.to_dict() for r in self.per_class]
        return out


def classwise_decompose(dataset: LabeledPredictions, binary_F="binary-entropy",
                        kernel: KernelSpec = Dirichlet()) -> ClasswiseReport:
    """One-vs-rest decomposition for every class.

    A missing Dirichlet bandwidth is selected separately for each class.
    """
    F = _binary_generator(binary_F)
    reports = []
    for i in range(dataset.k):
        p2, y2 = one_vs_rest(dataset, i)
        reports.append(_decompose_arrays(p2, y2, 2, F, kernel))
    return ClasswiseReport(reports, F.name)


def classwise_ce(dataset: LabeledPredictions, binary_F="binary-entropy",
                 kernel: KernelSpec = Dirichlet()) -> tuple[float, np.ndarray]:
    """Class-wise calibration error averaged with the ``1/k`` convention.

    Returns ``(mean, per_class)``.
    """
    rep = classwise_decompose(dataset, binary_F, kernel)
    per = np.array([r.calibration_error for r in rep.per_class])
    return float(per.mean()), per


def _equal_width_bins(x: np.ndarray, bins: int) -> np.ndarray:
    return np.clip(np.floor(x * bins), 0, bins - 1).astype(np.int64)


def _binned_l1(score: np.ndarray, target: np.ndarray, bins: int) -> float:
    b = _equal_width_bins(score, bins)
    cnt = np.bincount(b, minlength=bins).astype(float)
    gap = np.bincount(b, weights=target, minlength=bins) - np.bincount(b, weights=score, minlength=bins)
    # |sum(target) - sum(score)| / n == (|B|/n) * |mean target - mean score|
    return float(np.sum(np.abs(gap[cnt > 0])) / score.size)


def binned_classwise_ce1(dataset: LabeledPredictions, bins: int = 15,
                         return_per_class: bool = False):
    """Binned class-wise L1 calibration error over equal-width bins."""
    Y = dataset.onehot
    per = np.array([_binned_l1(dataset.probs[:, i], Y[:, i], bins) for i in range(dataset.k)])
    if return_per_class:
        return float(per.mean()), per
    return float(per.mean())


def binned_toplabel_ece(dataset: LabeledPredictions, bins: int = 15) -> float:
    """Top-label expected calibration error (confidence vs accuracy per bin)."""
    pred = np.argmax(dataset.probs, axis=1)  # first maximum on ties
    conf = dataset.probs[np.arange(dataset.n), pred]
    correct = (pred == dataset.labels).astype(float)
    return _binned_l1(conf, correct, bins)


def layer_sharpness(features, labels, F="kl", kernel: KernelSpec = Dirichlet(),
                    num_classes: int | None = None) -> float:
    """Sharpness of an intermediate representation.

    Features are pushed through an injective softmax into the simplex of
    dimension ``d + 1``; ``F`` acts on the label-space conditional expectations.
    """
    F = get_generator(F)
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    if X.shape[0] != labels.shape[0]:
        raise ValueError("features and labels differ in length")
    k = int(num_classes or labels.max() + 1)
    k = max(k, 2)
    F.check_dim(k)
    probs = softmax_extended(X)
    E, _ = _cond_expectation(probs, labels, k, kernel)
    ybar = _onehot(labels, k).mean(axis=0)
    return float(np.mean(F.value(E)) - F.value(ybar))
