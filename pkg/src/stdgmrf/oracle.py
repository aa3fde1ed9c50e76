"""Dense reference implementations for small instances.

Everything here is built from dense N x N matrices written directly from
the layer formulas, never by probing the sparse operators, so the tests that
compare the two are genuinely independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NumericalFailure, TooLarge, UnsupportedGraph
from .graph import GraphSpec
from .observations import ObservationSet
from .prior import ModelParams

MAX_DENSE_DIM = 4096
MAX_RTS_NODES = 1024


# ---------------------------------------------------------------------------
# dense layers

def dense_spatial_layer(g: GraphSpec, coef) -> np.ndarray:
    alpha, beta, gamma = coef
    a = g.dense_adjacency()
    d = g.degrees
    return alpha * np.diag(d ** gamma) + beta * np.diag(d ** (gamma - 1.0)) @ a


def dense_temporal_layer(g: GraphSpec, variant: str, coef) -> np.ndarray:
    a = g.dense_adjacency()
    n = g.n_nodes
    eye = np.eye(n)
    if variant == "ar":
        return coef[0] * eye
    if variant == "diffusion":
        return coef[0] * eye + coef[1] * (a - np.diag(a.sum(axis=1)))
    if variant == "directed_flow":
        return (coef[0] * eye + coef[1] * (a - np.diag(a.sum(axis=1)))
                + coef[2] * (a.T - np.diag(a.sum(axis=0))))
    if variant == "advection_diffusion":
        if not g.has_normals:
            raise UnsupportedGraph("advection-diffusion layers need edge normals")
        d, u, v = coef
        nx = g.normals_x.toarray()
        ny = g.normals_y.toarray()
        m = a * (d * d - 0.5 * (nx * u + ny * v))
        m[np.diag_indices(n)] -= a.sum(axis=1) * d * d
        return eye + m
    raise ValueError(f"unknown temporal variant {variant!r}")


def dense_S_blocks(m: ModelParams, g: GraphSpec) -> list[np.ndarray]:
    """S_k = G_L ... G_1 for every step k."""
    out = []
    for k in range(m.n_steps):
        s = np.eye(g.n_nodes)
        for layer in m.spatial_layers(k):
            s = dense_spatial_layer(g, (layer.alpha, layer.beta, layer.gamma)) @ s
        out.append(s)
    return out


def dense_F_blocks(m: ModelParams, g: GraphSpec) -> dict[tuple[int, int], np.ndarray]:
    """Transition matrices F_{k,tau} keyed by (k, tau)."""
    out = {}
    if m.L_temporal == 0:
        return out
    for k in range(1, m.n_steps):
        for tau in range(1, min(k, m.markov_order) + 1):
            f = np.eye(g.n_nodes)
            for layer in m.temporal_layers(k, tau):
                f = dense_temporal_layer(g, layer.variant, layer.coef) @ f
            out[(k, tau)] = f
    return out


def assemble_F(blocks: dict, n_steps: int, n: int) -> np.ndarray:
    """Unit lower block-banded F with -F_{k,tau} below the diagonal."""
    big = np.eye(n_steps * n)
    for (k, tau), f in blocks.items():
        big[k * n:(k + 1) * n, (k - tau) * n:(k - tau + 1) * n] = -f
    return big


def dense_G(m: ModelParams, g: GraphSpec) -> np.ndarray:
    n = g.n_nodes
    s = sla.block_diag(*dense_S_blocks(m, g))
    return s @ assemble_F(dense_F_blocks(m, g), m.n_steps, n)


def dense_precision(m: ModelParams, g: GraphSpec) -> np.ndarray:
    """F^T S^T S F by dense products."""
    _guard(m.n_steps * g.n_nodes)
    gm = dense_G(m, g)
    return gm.T @ gm


def precision_from_blocks(F_blocks: dict, Q_blocks: list[np.ndarray], markov_order: int) -> np.ndarray:
    """Block-banded assembly Omega_ij = sum_k F~_{k,i}^T Q_k F~_{k,j}.

    F~_{k,k} = I and F~_{k,k-tau} = -F_{k,tau}; only k with k - i <= p and
    k - j <= p contribute, so blocks with |i - j| > p are zero.
    """
    n_steps = len(Q_blocks)
    n = Q_blocks[0].shape[0]
    eye = np.eye(n)

    def ftil(k, i):
        if k == i:
            return eye
        return -F_blocks[(k, k - i)] if (k, k - i) in F_blocks else None

    om = np.zeros((n_steps * n, n_steps * n))
    for i in range(n_steps):
        for j in range(max(0, i - markov_order), min(n_steps, i + markov_order + 1)):
            blk = np.zeros((n, n))
            for k in range(max(i, j), min(n_steps, min(i, j) + markov_order + 1)):
                fi, fj = ftil(k, i), ftil(k, j)
                if fi is not None and fj is not None:
                    blk += fi.T @ Q_blocks[k] @ fj
            om[i * n:(i + 1) * n, j * n:(j + 1) * n] = blk
    return om


def dense_offsets(m: ModelParams, g: GraphSpec) -> np.ndarray:
    """c_k = -(b_f,k 1 + S_k^-1 b_s,k 1), shape (K+1, N)."""
    ones = np.ones(g.n_nodes)
    sg = m.spatial_group
    out = np.empty((m.n_steps, g.n_nodes))
    for k, s in enumerate(dense_S_blocks(m, g)):
        out[k] = -(m.bias_f[sg[k]] * ones + np.linalg.solve(s, m.bias_s[sg[k]] * ones))
    return out


def prior_mean_iterative(F_blocks: dict, c: np.ndarray) -> np.ndarray:
    """mu_k = sum_tau F_{k,tau} mu_{k-tau} + c_k."""
    c = np.asarray(c, dtype=float)
    mu = np.zeros_like(c)
    for k in range(c.shape[0]):
        mu[k] = c[k]
        for (kk, tau), f in F_blocks.items():
            if kk == k:
                mu[k] += f @ mu[k - tau]
    return mu


# ---------------------------------------------------------------------------
# dense posterior

@dataclass
class DensePosterior:
    mean: np.ndarray
    marginal_std: np.ndarray
    covariance: np.ndarray


def _guard(dim: int) -> None:
    if dim > MAX_DENSE_DIM:
        raise TooLarge(f"dense oracle limited to {MAX_DENSE_DIM} coordinates, got {dim}")


def _chol(a: np.ndarray) -> np.ndarray:
    try:
        return sla.cholesky(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"Cholesky failed: {exc}") from exc


def posterior_from_precision(omega: np.ndarray, eta: np.ndarray, obs: ObservationSet) -> DensePosterior:
    """Condition N(Omega^-1 eta, Omega^-1) on the observations."""
    shape = (obs.n_steps, obs.n_nodes)
    _guard(omega.shape[0])
    om_post = omega + np.diag(obs.precision.ravel())
    rhs = np.asarray(eta, dtype=float).ravel() + obs.weighted_values().ravel()
    lo = _chol(om_post)
    mean = sla.cho_solve((lo, True), rhs)
    cov = sla.cho_solve((lo, True), np.eye(omega.shape[0]))
    std = np.sqrt(np.diag(cov))
    return DensePosterior(mean.reshape(shape), std.reshape(shape), cov)


def dense_posterior(m: ModelParams, g: GraphSpec, obs: ObservationSet) -> DensePosterior:
    """Exact posterior by Cholesky of the dense posterior precision.

    Raises:
        TooLarge: if (K+1) N exceeds 4096.
    """
    _guard(m.n_steps * g.n_nodes)
    obs.check_shape(m.n_steps, g.n_nodes)
    omega = dense_precision(m, g)
    mu = prior_mean_iterative(dense_F_blocks(m, g), dense_offsets(m, g))
    return posterior_from_precision(omega, omega @ mu.ravel(), obs)


def dense_log_evidence(m: ModelParams, g: GraphSpec, obs: ObservationSet) -> float:
    """log p(y) under the prior and Gaussian observation model."""
    _guard(m.n_steps * g.n_nodes)
    omega = dense_precision(m, g)
    mu = prior_mean_iterative(dense_F_blocks(m, g), dense_offsets(m, g)).ravel()
    idx = obs.k * g.n_nodes + obs.node
    cov = np.linalg.inv(omega)[np.ix_(idx, idx)] + np.diag(obs.sigma ** 2)
    r = obs.values - mu[idx]
    lo = _chol(cov)
    w = sla.solve_triangular(lo, r, lower=True)
    return float(-0.5 * w @ w - np.sum(np.log(np.diag(lo))) - 0.5 * idx.size * np.log(2 * np.pi))


# ---------------------------------------------------------------------------
# state-space form and RTS smoother

@dataclass
class LinearGaussianSSM:
    """x_0 ~ N(mu0, Q0^-1); x_k = F_k x_{k-1} + c_k + e_k with e_k ~ N(0, Q_k^-1)."""

    mu0: np.ndarray
    Q0: np.ndarray
    F: list
    c: list
    Q: list

    @property
    def n_steps(self) -> int:
        return len(self.F) + 1

    def dense_precision(self) -> np.ndarray:
        blocks = {(k, 1): f for k, f in enumerate(self.F, start=1)}
        return precision_from_blocks(blocks, [self.Q0] + list(self.Q), 1)

    def prior_mean(self) -> np.ndarray:
        blocks = {(k, 1): f for k, f in enumerate(self.F, start=1)}
        return prior_mean_iterative(blocks, np.vstack([self.mu0] + list(self.c)))


def model_to_ssm(m: ModelParams, g: GraphSpec) -> LinearGaussianSSM:
    """Dense first-order state-space form of a prior with markov_order 1."""
    if m.markov_order != 1:
        raise UnsupportedGraph("state-space conversion needs markov_order = 1")
    s_blocks = dense_S_blocks(m, g)
    f_blocks = dense_F_blocks(m, g)
    c = dense_offsets(m, g)
    eye = np.eye(g.n_nodes)
    q = [s.T @ s for s in s_blocks]
    F = [f_blocks.get((k, 1), np.zeros_like(eye)) for k in range(1, m.n_steps)]
    return LinearGaussianSSM(c[0], q[0], F, list(c[1:]), q[1:])


@dataclass
class SmootherResult:
    means: np.ndarray
    covariances: np.ndarray

    @property
    def marginal_std(self) -> np.ndarray:
        return np.sqrt(np.einsum("kii->ki", self.covariances))


def _inv_spd(q: np.ndarray) -> np.ndarray:
    lo = _chol(q)
    return sla.cho_solve((lo, True), np.eye(q.shape[0]))


def rts_smoother(mu0, Q0, F, c, Q, obs: ObservationSet, max_nodes: int = MAX_RTS_NODES) -> SmootherResult:
    """Kalman filter plus Rauch-Tung-Striebel backward pass (covariance form).

    Args:
        mu0, Q0: initial mean and precision.
        F, c, Q: per-transition matrices, offsets and noise precisions
            (lists of length K).
        obs: observations of shape (K+1, N).
        max_nodes: refuse state dimensions above this.

    Returns:
        Smoothed means (K+1, N) and covariances (K+1, N, N).

    Raises:
        TooLarge: N exceeds ``max_nodes``.
        NumericalFailure: an innovation covariance is not positive definite.
    """
    n = len(mu0)
    if n > max_nodes:
        raise TooLarge(f"dense smoother limited to {max_nodes} nodes, got {n}")
    n_steps = len(F) + 1
    obs.check_shape(n_steps, n)
    pred_m, pred_p, filt_m, filt_p = [], [], [], []
    m_k, p_k = np.asarray(mu0, dtype=float), _inv_spd(Q0)
    for k in range(n_steps):
        if k > 0:
            m_k = F[k - 1] @ m_k + c[k - 1]
            p_k = F[k - 1] @ p_k @ F[k - 1].T + _inv_spd(Q[k - 1])
        pred_m.append(m_k)
        pred_p.append(p_k)
        sel = obs.k == k
        if np.any(sel):
            idx = obs.node[sel]
            s = p_k[np.ix_(idx, idx)] + np.diag(obs.sigma[sel] ** 2)
            lo = _chol(s)
            ph = p_k[:, idx]
            gain = sla.cho_solve((lo, True), ph.T).T
            m_k = m_k + gain @ (obs.values[sel] - m_k[idx])
            p_k = p_k - gain @ ph.T
            p_k = 0.5 * (p_k + p_k.T)
        filt_m.append(m_k)
        filt_p.append(p_k)
    means = np.empty((n_steps, n))
    covs = np.empty((n_steps, n, n))
    means[-1], covs[-1] = filt_m[-1], filt_p[-1]
    for k in range(n_steps - 2, -1, -1):
        lo = _chol(pred_p[k + 1])
        gain = sla.cho_solve((lo, True), F[k] @ filt_p[k]).T
        means[k] = filt_m[k] + gain @ (means[k + 1] - pred_m[k + 1])
        ck = filt_p[k] + gain @ (covs[k + 1] - pred_p[k + 1]) @ gain.T
        covs[k] = 0.5 * (ck + ck.T)
    return SmootherResult(means, covs)


def smoother_expected_log_joint(ssm: LinearGaussianSSM, sm: SmootherResult, obs: ObservationSet) -> float:
    """Approximate E[log p(x, y)] from smoothed marginals, up to constants.

    Lag-one cross-covariances are dropped.  The value is only used as the
    dense per-iteration workload of a smoother-based learner in benchmarks.
    """
    total = 0.0
    d0 = sm.means[0] - ssm.mu0
    total -= 0.5 * (d0 @ ssm.Q0 @ d0 + np.sum(ssm.Q0 * sm.covariances[0]))
    for k in range(1, ssm.n_steps):
        f, q = ssm.F[k - 1], ssm.Q[k - 1]
        r = sm.means[k] - f @ sm.means[k - 1] - ssm.c[k - 1]
        pk = sm.covariances[k] + f @ sm.covariances[k - 1] @ f.T
        total -= 0.5 * (r @ q @ r + np.sum(q * pk))
    x = sm.means[obs.k, obs.node]
    v = sm.covariances[obs.k, obs.node, obs.node]
    total -= 0.5 * float(np.sum(((obs.values - x) ** 2 + v) / obs.sigma ** 2))
    return float(total)
