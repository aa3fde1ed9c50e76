"""Wall-clock scaling of the sparse engine against a dense smoother path.

For each lattice side the engine is timed per CG iteration (one posterior
precision product plus vector updates) and per training iteration (one ELBO
value and gradient).  The smoother path times one training iteration of an
exact smoother-based learner: dense assembly of the state-space blocks, a
Kalman/RTS pass and the expected log joint.
"""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TooLarge
from .graph import build_periodic_lattice, precompute_spectrum
from .infer import cg_solve, posterior_matvec
from .observations import ObservationSet
from .oracle import MAX_RTS_NODES, model_to_ssm, rts_smoother, smoother_expected_log_joint
from .prior import ModelParams
from .vi import VariationalParams, elbo_and_grad

COLUMNS = ("path", "side", "N", "K", "phase", "seconds")


@dataclass
class BenchResult:
    rows: list = field(default_factory=list)
    refused: list = field(default_factory=list)

    def seconds(self, path: str, side: int, phase: str) -> float:
        for r in self.rows:
            if (r["path"], r["side"], r["phase"]) == (path, side, phase):
                return r["seconds"]
        raise KeyError((path, side, phase))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=COLUMNS)
            wr.writeheader()
            for r in self.rows:
                wr.writerow({**r, "seconds": f"{r['seconds']:.6g}"})
            for p, side, n, k in self.refused:
                wr.writerow({"path": p, "side": side, "N": n, "K": k, "phase": "refused", "seconds": "nan"})


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _instance(side: int, K: int, rng: np.random.Generator, obs_frac: float = 0.8):
    g = precompute_spectrum(build_periodic_lattice(side), method="lattice")
    m = ModelParams.init(K + 1, rng=rng)
    mask = rng.random((K + 1, g.n_nodes)) < obs_frac
    y = rng.standard_normal((K + 1, g.n_nodes))
    obs = ObservationSet.from_dense(y, mask, 0.1)
    return g, m, obs


def benchmark_scaling(sides, K: int = 10, iters: int = 20, reps: int = 5, seed: int = 0,
                      paths=("engine", "rts"), rts_max_nodes: int = MAX_RTS_NODES) -> BenchResult:
    """Time both paths on generated lattice instances.

    Args:
        sides: lattice sides to run.
        K: number of transitions.
        iters: CG iterations per timed solve (the time is divided by it).
        reps: repetitions; medians are reported.
        paths: subset of ``("engine", "rts")``.
        rts_max_nodes: node guard for the dense smoother path.

    Returns:
        Timing rows plus the (path, side, N, K) entries refused by the guard.
    """
    res = BenchResult()
    rng = np.random.default_rng(seed)
    for side in sides:
        g, m, obs = _instance(side, K, rng)
        n = g.n_nodes
        if "engine" in paths:
            b = rng.standard_normal((K + 1, n))

            def cg_run():
                cg_solve(lambda v: posterior_matvec(m, g, obs, v), b, tol=0.0, max_iter=iters)

            vp = VariationalParams.init(obs)
            noise = rng.standard_normal((K + 1, n))
            res.rows.append(dict(path="engine", side=side, N=n, K=K, phase="cg_iteration",
                                 seconds=_median_time(cg_run, reps) / iters))
            res.rows.append(dict(path="engine", side=side, N=n, K=K, phase="train_iteration",
                                 seconds=_median_time(lambda: elbo_and_grad(m, vp, g, obs, noise), reps)))
        if "rts" in paths:
            try:
                sec = _median_time(lambda: rts_training_iteration(m, g, obs, rts_max_nodes), reps)
            except TooLarge:
                res.refused.append(("rts", side, n, K))
                continue
            res.rows.append(dict(path="rts", side=side, N=n, K=K, phase="train_iteration", seconds=sec))
    return res


def rts_training_iteration(m: ModelParams, g, obs: ObservationSet, max_nodes: int = MAX_RTS_NODES) -> float:
    """One iteration of the dense smoother path; returns the expected log joint.

    Raises:
        TooLarge: before any dense allocation when N exceeds ``max_nodes``.
    """
    if g.n_nodes > max_nodes:
        raise TooLarge(f"dense smoother limited to {max_nodes} nodes, got {g.n_nodes}")
    ssm = model_to_ssm(m, g)
    sm = rts_smoother(ssm.mu0, ssm.Q0, ssm.F, ssm.c, ssm.Q, obs, max_nodes=max_nodes)
    return smoother_expected_log_joint(ssm, sm, obs)
