"""Partial, noisy observations y_k = H_k x_k + noise with selection matrices H_k."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidObservation


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observations stored as flat (k, node, value, sigma) records.

    Each record selects one latent coordinate; records are unique per (k, node).
    """

    n_steps: int
    n_nodes: int
    k: np.ndarray
    node: np.ndarray
    values: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.int64).ravel()
        node = np.asarray(self.node, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), values.shape).copy()
        if not (k.size == node.size == values.size):
            raise InvalidObservation("k, node and values must have equal length")
        if k.size:
            if k.min() < 0 or k.max() >= self.n_steps:
                raise InvalidObservation("time index out of range")
            if node.min() < 0 or node.max() >= self.n_nodes:
                raise InvalidObservation("node index out of range")
            if np.unique(k * self.n_nodes + node).size != k.size:
                raise InvalidObservation("duplicate (k, node) observation")
        if np.any(~(sigma > 0)) or np.any(~np.isfinite(values)):
            raise InvalidObservation("sigma must be positive and values finite")
        for name, arr in (("k", k), ("node", node), ("values", values), ("sigma", sigma)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, n_steps: int, n_nodes: int) -> "ObservationSet":
        return cls(n_steps, n_nodes, [], [], [], [])

    @classmethod
    def from_dense(cls, y: np.ndarray, mask: np.ndarray, sigma) -> "ObservationSet":
        """Observe ``y[k, i]`` wherever ``mask[k, i]`` is true."""
        y = np.asarray(y, dtype=float)
        mask = np.asarray(mask, dtype=bool)
        kk, nn = np.nonzero(mask)
        sig = np.asarray(sigma, dtype=float)
        sig = sig[kk, nn] if sig.ndim == 2 else sig
        return cls(y.shape[0], y.shape[1], kk, nn, y[kk, nn], sig)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def mask(self) -> np.ndarray:
        out = np.zeros((self.n_steps, self.n_nodes), dtype=bool)
        out[self.k, self.node] = True
        return out

    @property
    def precision(self) -> np.ndarray:
        """Diagonal of H^T R^-1 H as a (K+1, N) array."""
        out = np.zeros((self.n_steps, self.n_nodes))
        out[self.k, self.node] = self.sigma ** -2
        return out

    def scatter(self, v: np.ndarray) -> np.ndarray:
        """H^T v for per-record values ``v``."""
        out = np.zeros((self.n_steps, self.n_nodes))
        out[self.k, self.node] = v
        return out

    def weighted_values(self) -> np.ndarray:
        """H^T R^-1 y."""
        return self.scatter(self.values / self.sigma ** 2)

    def select(self, x: np.ndarray) -> np.ndarray:
        """H x as a flat per-record vector."""
        return np.asarray(x)[self.k, self.node]

    def subset(self, keep: np.ndarray) -> "ObservationSet":
        keep = np.asarray(keep)
        return ObservationSet(self.n_steps, self.n_nodes, self.k[keep], self.node[keep],
                              self.values[keep], self.sigma[keep])

    def check_shape(self, n_steps: int, n_nodes: int) -> None:
        if (self.n_steps, self.n_nodes) != (n_steps, n_nodes):
            raise InvalidObservation(
                f"observations are for {(self.n_steps, self.n_nodes)}, model is {(n_steps, n_nodes)}"
            )
