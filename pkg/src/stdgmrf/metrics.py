"""Reconstruction metrics: RMSE, Gaussian CRPS and stencil correlation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import InvalidInput, Undefined


def _select(a: np.ndarray, index_set):
    a = np.asarray(a, dtype=float)
    if index_set is None:
        return a.ravel()
    if isinstance(index_set, tuple):
        return a[index_set]
    idx = np.asarray(index_set)
    return a[idx] if idx.dtype == bool else a.ravel()[idx]


def rmse(estimate, reference, index_set=None) -> float:
    """Root-mean-square difference over ``index_set``.

    Args:
        estimate, reference: arrays of equal shape.
        index_set: boolean mask, tuple of index arrays, flat indices, or
            None for all entries.

    Raises:
        InvalidInput: the selection is empty.
    """
    e = _select(estimate, index_set)
    r = _select(reference, index_set)
    if e.size == 0:
        raise InvalidInput("rmse over an empty index set")
    return float(np.sqrt(np.mean((e - r) ** 2)))


def crps_gaussian(mu, sigma, y):
    """Closed-form CRPS of N(mu, sigma^2) at y (positive, lower is better).

    ``sigma == 0`` gives |y - mu|.  Works elementwise on arrays.
    """
    mu, sigma, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, y)))
    if np.any(sigma < 0):
        raise InvalidInput("sigma must be nonnegative")
    out = np.array(np.abs(y - mu), ndmin=1)
    shape = mu.shape
    mu, sigma, y = (np.atleast_1d(a) for a in (mu, sigma, y))
    pos = sigma > 0
    z = (y[pos] - mu[pos]) / sigma[pos]
    out[pos] = sigma[pos] * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / np.sqrt(np.pi))
    return float(out[0]) if shape == () else out.reshape(shape)


def mean_crps(mu, sigma, y, index_set=None) -> float:
    vals = crps_gaussian(_select(mu, index_set), _select(sigma, index_set), _select(y, index_set))
    vals = np.atleast_1d(vals)
    if vals.size == 0:
        raise InvalidInput("crps over an empty index set")
    return float(vals.mean())


def stencil_pearson(learned: dict, truth: dict) -> float:
    """Pearson correlation of two offset-keyed weight maps (missing keys are 0).

    Raises:
        Undefined: either aligned vector has zero variance.
    """
    keys = sorted(set(learned) | set(truth))
    a = np.array([learned.get(k, 0.0) for k in keys], dtype=float)
    b = np.array([truth.get(k, 0.0) for k in keys], dtype=float)
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if len(keys) < 2 or den == 0.0:
        raise Undefined("stencil correlation needs non-constant weights")
    return float(np.dot(a, b) / den)


@dataclass
class MetricReport:
    rmse_mu: float | None
    rmse_sigma: float | None
    crps: float
    stencil_pearson: float | None = None
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)
