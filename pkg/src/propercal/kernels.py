"""Kernels on the simplex for conditional-expectation weighting.

Two kernels are supported: the Dirichlet kernel (evaluated in log-space)
and an equal-width binning kernel.  Pairwise log-weights are produced in row
blocks so memory stays ``O(n)`` per block regardless of ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np
from scipy.special import gammaln

from .errors import BandwidthNonPositive, DimensionMismatch, EmptyGrid, EmptyRow
from .simplex import EPS, LabeledPredictions, clamp_log

#: Candidate bandwidths for leave-one-out maximum likelihood selection.
DEFAULT_GRID = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
#: Largest ``n`` for which :meth:`LogWeightMatrix.to_array` materialises.
MATERIALIZE_CAP = 20_000
# entries per row block; small enough to stay cache resident
_BLOCK_ENTRIES = 1 << 16


@dataclass(frozen=True)
class Dirichlet:
    """Dirichlet kernel with concentration ``center / bandwidth + 1``.

    ``bandwidth=None`` selects the bandwidth per dataset by leave-one-out
    maximum likelihood over :data:`DEFAULT_GRID`.
    """

    bandwidth: float | None = None

    def __post_init__(self):
        if self.bandwidth is not None and not (self.bandwidth > 0 and np.isfinite(self.bandwidth)):
            raise BandwidthNonPositive(f"bandwidth must be positive, got {self.bandwidth}")

    def describe(self) -> dict:
        return {"name": "dirichlet", "bandwidth": self.bandwidth}


@dataclass(frozen=True)
class Binning:
    """Equal-width bins applied to every coordinate independently."""

    bins: int = 15

    def __post_init__(self):
        if int(self.bins) != self.bins or self.bins < 1:
            raise ValueError(f"bins must be a positive integer, got {self.bins}")

    def describe(self) -> dict:
        return {"name": "binning", "bins": int(self.bins), "scheme": "equal-width"}


KernelSpec = Union[Dirichlet, Binning]


def _as_probs(data) -> np.ndarray:
    if isinstance(data, LabeledPredictions):
        return data.probs
    return np.asarray(data, dtype=float)


def dirichlet_log_norm(centers: np.ndarray, h: float) -> np.ndarray:
    """Log normalising constant of ``Dirichlet(center / h + 1)`` per center."""
    a = centers / h
    return gammaln(centers.shape[-1] + a.sum(axis=-1)) - gammaln(a + 1.0).sum(axis=-1)


def log_dirichlet_kernel(x, center, h: float) -> float:
    """Log-density at ``x`` of the Dirichlet kernel centred on ``center``."""
    if not h > 0:
        raise BandwidthNonPositive(f"bandwidth must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    if x.shape != center.shape:
        raise DimensionMismatch(f"point {x.shape} and center {center.shape} differ")
    return float(dirichlet_log_norm(center, h) + np.dot(center, clamp_log(x)) / h)


def bin_ids(probs: np.ndarray, bins: int) -> np.ndarray:
    """Integer bin label per row; 1.0 falls into the last bin."""
    cells = np.minimum(np.floor(probs * bins), bins - 1).astype(np.int64)
    cells = np.maximum(cells, 0)
    _, ids = np.unique(cells, axis=0, return_inverse=True)
    return ids.reshape(-1)


def block_rows(n: int) -> int:
    return max(1, min(n, _BLOCK_ENTRIES // max(n, 1)))


class LogWeightMatrix:
    """Row-blocked ``n x n`` matrix of ``log k(g(x_h), g(x_j))``.

    Rows are generated on demand; :meth:`to_array` materialises the whole
    matrix when ``n`` does not exceed ``cap``.  Excluded diagonal entries
    and binning non-matches are ``-inf``.
    """

    def __init__(self, probs: np.ndarray, kernel: KernelSpec, exclude_diagonal: bool,
                 cap: int = MATERIALIZE_CAP):
        self.probs = probs
        self.kernel = kernel
        self.exclude_diagonal = exclude_diagonal
        self.cap = cap
        self.n = probs.shape[0]
        if isinstance(kernel, Dirichlet):
            self._logx = clamp_log(probs)
            self._norm = dirichlet_log_norm(probs, kernel.bandwidth)
        else:
            self._ids = bin_ids(probs, kernel.bins)

    def block(self, start: int, stop: int) -> np.ndarray:
        if isinstance(self.kernel, Dirichlet):
            out = self._logx[start:stop] @ self.probs.T
            out /= self.kernel.bandwidth
            out += self._norm[None, :]
        else:
            same = self._ids[start:stop, None] == self._ids[None, :]
            out = np.where(same, 0.0, -np.inf)
        if self.exclude_diagonal:
            r = np.arange(start, stop)
            out[r - start, r] = -np.inf
        return out

    def blocks(self, rows: int | None = None) -> Iterator[tuple[int, int, np.ndarray]]:
        rows = rows or block_rows(self.n)
        for start in range(0, self.n, rows):
            stop = min(self.n, start + rows)
            yield start, stop, self.block(start, stop)

    def to_array(self) -> np.ndarray:
        if self.n > self.cap:
            raise MemoryError(f"n={self.n} exceeds the materialisation cap {self.cap}; use blocks()")
        return self.block(0, self.n)


def resolve_kernel(kernel: KernelSpec, data) -> KernelSpec:
    """Fill in a missing Dirichlet bandwidth by leave-one-out selection."""
    if isinstance(kernel, Dirichlet) and kernel.bandwidth is None:
        return Dirichlet(bandwidth_loo_mle(data))
    return kernel


def build_log_weights(dataset, kernel: KernelSpec, exclude_diagonal: bool = True,
                      cap: int = MATERIALIZE_CAP) -> LogWeightMatrix:
    """Pairwise log-kernel weights for a dataset.

    With the binning kernel and ``exclude_diagonal`` set, a point alone in
    its bin has an empty row; :class:`EmptyRow` is raised for the first one.
    """
    probs = _as_probs(dataset)
    if exclude_diagonal and probs.shape[0] < 2:
        raise ValueError("excluding the diagonal needs n >= 2")
    kernel = resolve_kernel(kernel, probs)
    W = LogWeightMatrix(probs, kernel, exclude_diagonal, cap)
    if isinstance(kernel, Binning) and exclude_diagonal:
        counts = np.bincount(W._ids)
        lonely = np.flatnonzero(counts[W._ids] == 1)
        if lonely.size:
            raise EmptyRow(int(lonely[0]))
    return W


def loo_log_likelihood(data, grid=DEFAULT_GRID) -> np.ndarray:
    """Leave-one-out log-likelihood of the Dirichlet KDE for each bandwidth.

    Entry ``i`` is ``sum_h log( sum_{j != h} k_i(g_h, g_j) / (n - 1) )``.
    """
    probs = _as_probs(data)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyGrid("bandwidth grid is empty")
    if np.any(~(grid > 0)):
        raise BandwidthNonPositive("all candidate bandwidths must be positive")
    n = probs.shape[0]
    if n < 2:
        raise ValueError("leave-one-out selection needs n >= 2")
    logx = clamp_log(probs)
    norms = [dirichlet_log_norm(probs, h) for h in grid]
    totals = np.zeros(grid.size)
    rows = block_rows(n)
    buf = np.empty((rows, n))
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        inner = logx[start:stop] @ probs.T
        r = np.arange(stop - start)
        L = buf[: stop - start]
        for i, h in enumerate(grid):
            np.multiply(inner, 1.0 / h, out=L)
            L += norms[i][None, :]
            L[r, r + start] = -np.inf
            m = L.max(axis=1, keepdims=True)
            L -= m
            np.exp(L, out=L)
            totals[i] += np.sum(m[:, 0] + np.log(L.sum(axis=1)))
    return totals - n * np.log(n - 1)


def bandwidth_loo_mle(data, grid=DEFAULT_GRID) -> float:
    """Grid bandwidth with the highest leave-one-out likelihood.

    Ties go to the smaller bandwidth.
    """
    grid = np.asarray(grid, dtype=float)
    scores = loo_log_likelihood(data, grid)
    order = np.argsort(grid, kind="stable")
    best = order[0]
    for i in order[1:]:
        if scores[i] > scores[best]:
            best = i
    return float(grid[best])


__all__ = [
    "DEFAULT_GRID", "MATERIALIZE_CAP", "EPS", "Dirichlet", "Binning", "KernelSpec",
    "LogWeightMatrix", "log_dirichlet_kernel", "dirichlet_log_norm", "bin_ids",
    "build_log_weights", "resolve_kernel", "loo_log_likelihood", "bandwidth_loo_mle",
]
