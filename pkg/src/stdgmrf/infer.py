"""Exact Gaussian posterior inference with conjugate gradients.

The posterior precision is Omega+ = F^T S^T S F + H^T R^-1 H.  All solves
work on (K+1, N) state arrays through matrix-free products, so memory stays
linear in the number of latent coordinates.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidInput, SolverDiverged
from .graph import GraphSpec
from .observations import ObservationSet
from .prior import ModelParams, bias_image, ft_apply, information_vector, precision_matvec, st_apply

REG_NU0 = 10.0
REG_DECAY = 10.0
REG_EVERY = 10
REG_MAX_OUTER = 100
REG_INNER_TOL = 1e-7
REG_INNER_MAX = 200


class SolveResult(NamedTuple):
    solution: np.ndarray
    iterations: int
    residual_norm: float


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def cg_solve(matvec: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray, x0: np.ndarray | None = None,
             tol: float = 1e-7, max_iter: int = 200, rtol: float = 0.0) -> SolveResult:
    """Conjugate gradients for a symmetric positive definite operator.

    Args:
        matvec: applies the operator to an array shaped like ``rhs``.
        rhs: right-hand side of any shape.
        x0: initial guess (zeros if None).
        tol: absolute residual threshold on ||b - A x||_2.
        max_iter: iteration cap.
        rtol: optional relative threshold; the run stops once
            ||r|| < max(tol, rtol * ||b||).

    Returns:
        ``(solution, iterations, residual_norm)``.
    """
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    thresh = max(tol, rtol * float(np.linalg.norm(b)))
    r = b - matvec(x)
    rr = float(np.vdot(r, r))
    if not _finite(x, r):
        raise SolverDiverged("non-finite initial residual")
    p = r.copy()
    it = 0
    while np.sqrt(rr) >= thresh and it < max_iter:
        ap = matvec(p)
        pap = float(np.vdot(p, ap))
        if not np.isfinite(pap) or pap <= 0.0:
            raise SolverDiverged(f"CG breakdown at iteration {it}: p^T A p = {pap}")
        a = rr / pap
        x += a * p
        r -= a * ap
        rr_new = float(np.vdot(r, r))
        if not np.isfinite(rr_new):
            raise SolverDiverged(f"non-finite residual at iteration {it}")
        p *= rr_new / rr
        p += r
        rr = rr_new
        it += 1
    return SolveResult(x, it, float(np.sqrt(rr)))


def regularized_cg_solve(matvec, rhs: np.ndarray, x0: np.ndarray | None = None,
                         tol: float = 1e-7, rtol: float = 0.0, info: dict | None = None) -> SolveResult:
    """Solve A x = b through a sequence of shifted systems (nu I + A) x' = nu x + b.

    nu starts at 10 and is divided by 10 every 10 outer steps.  Each inner
    solve is plain CG (threshold 1e-7, at most 200 iterations) warm-started
    at the current iterate; at most 100 outer steps are taken.

    Args:
        tol, rtol: outer stopping rule on the unshifted residual, as in
            :func:`cg_solve`.  ``rtol`` also scales the inner thresholds.
        info: optional dict that receives ``inner_iterations``.

    Returns:
        ``(solution, outer_iterations, residual_norm)``.
    """
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    thresh = max(tol, rtol * float(np.linalg.norm(b)))
    inner_total = 0
    outer = 0
    res = float(np.linalg.norm(b - matvec(x)))
    while res >= thresh and outer < REG_MAX_OUTER:
        nu = REG_NU0 / REG_DECAY ** (outer // REG_EVERY)
        shifted_rhs = nu * x + b
        x, n_in, _ = cg_solve(lambda v: nu * v + matvec(v), shifted_rhs, x,
                              tol=REG_INNER_TOL, max_iter=REG_INNER_MAX, rtol=rtol)
        inner_total += n_in
        outer += 1
        res = float(np.linalg.norm(b - matvec(x)))
        if not np.isfinite(res):
            raise SolverDiverged(f"non-finite residual at outer iteration {outer}")
    if info is not None:
        info["inner_iterations"] = inner_total
    return SolveResult(x, outer, res)


def posterior_matvec(m: ModelParams, g: GraphSpec, obs: ObservationSet, x: np.ndarray) -> np.ndarray:
    """Omega+ x = F^T S^T S F x + H^T R^-1 H x."""
    return precision_matvec(m, g, x) + obs.precision * x


def posterior_rhs(m: ModelParams, g: GraphSpec, obs: ObservationSet) -> np.ndarray:
    """eta + H^T R^-1 y."""
    return information_vector(m, g) + obs.weighted_values()


def _initial(vp, shape) -> np.ndarray:
    if vp is None:
        return np.zeros(shape)
    nu = getattr(vp, "nu", vp)
    return np.asarray(nu, dtype=float)


def posterior_mean(m: ModelParams, vp, g: GraphSpec, obs: ObservationSet,
                   tol: float = 1e-7, rtol: float = 1e-10, info: dict | None = None) -> np.ndarray:
    """Posterior mean by regularized CG warm-started at the variational mean.

    ``vp`` may be a VariationalParams, a (K+1, N) array, or None for a cold
    start at zero.
    """
    obs.check_shape(m.n_steps, g.n_nodes)
    shape = (m.n_steps, g.n_nodes)
    sol = regularized_cg_solve(lambda v: posterior_matvec(m, g, obs, v), posterior_rhs(m, g, obs),
                               _initial(vp, shape), tol=tol, rtol=rtol, info=info)
    if info is not None:
        info["outer_iterations"] = sol.iterations
        info["residual_norm"] = sol.residual_norm
    return sol.solution


def posterior_sample(m: ModelParams, vp, g: GraphSpec, obs: ObservationSet, n_samples: int,
                     seed=None, mean: np.ndarray | None = None, tol: float = 1e-7,
                     rtol: float = 1e-10, max_iter: int = 5000, info: dict | None = None) -> np.ndarray:
    """Exact posterior draws by randomising the right-hand side.

    Each draw solves Omega+ x = F^T S^T (z - (S b_f + b_s)) + H^T R^-1 (y + sigma u)
    with z, u standard normal; CG starts from the posterior mean.

    Returns:
        Array of shape (n_samples, K+1, N).
    """
    obs.check_shape(m.n_steps, g.n_nodes)
    shape = (m.n_steps, g.n_nodes)
    rng = np.random.default_rng(seed)
    if mean is None:
        mean = posterior_mean(m, vp, g, obs, tol=tol, rtol=rtol)
    b_img = bias_image(m, g)
    out = np.empty((n_samples,) + shape)
    iters, resids = [], []
    for s in range(n_samples):
        z = rng.standard_normal(shape)
        u = rng.standard_normal(len(obs))
        rhs = ft_apply(m, g, st_apply(m, g, z - b_img)) + obs.scatter(
            (obs.values + obs.sigma * u) / obs.sigma ** 2)
        sol = cg_solve(lambda v: posterior_matvec(m, g, obs, v), rhs, mean,
                       tol=tol, max_iter=max_iter, rtol=rtol)
        out[s] = sol.solution
        iters.append(sol.iterations)
        resids.append(sol.residual_norm)
    if info is not None:
        info["sample_iterations"] = iters
        info["sample_residuals"] = resids
    return out


def marginal_std(samples: np.ndarray) -> np.ndarray:
    """Unbiased per-coordinate sample standard deviation over axis 0."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 2:
        raise InvalidInput("marginal_std needs at least two samples")
    return np.std(samples, axis=0, ddof=1)


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    samples: np.ndarray
    marginal_std: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def summarize_posterior(m: ModelParams, vp, g: GraphSpec, obs: ObservationSet,
                        n_samples: int = 100, seed=None) -> PosteriorSummary:
    """Mean, ``n_samples`` perturbation draws and their marginal std."""
    diag: dict = {}
    t0 = time.perf_counter()
    mean = posterior_mean(m, vp, g, obs, info=diag)
    t1 = time.perf_counter()
    samples = posterior_sample(m, vp, g, obs, n_samples, seed=seed, mean=mean, info=diag)
    t2 = time.perf_counter()
    diag["seconds"] = {"mean": t1 - t0, "samples": t2 - t1}
    return PosteriorSummary(mean, samples, marginal_std(samples), diag)
