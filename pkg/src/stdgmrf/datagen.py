"""Synthetic advection-diffusion sequences on a periodic lattice.

A frame transition is four explicit steps of the third-order Taylor
expansion of exp(M), where M discretises diffusion with coefficient D and
advection with velocity v.  The initial state and the process noise are
sparse GMRF draws obtained by solving S e = z with CG.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidMask, UnsupportedGraph
from .graph import GraphSpec
from .infer import cg_solve
from .observations import ObservationSet
from .oracle import LinearGaussianSSM

ROLES = ("train", "val", "test")


@dataclass
class SimConfig:
    K: int = 20
    D_diff: float = 0.01
    v: tuple = (-0.3, 0.3)
    steps_per_frame: int = 4
    delta: float = 0.01
    noise_diag: float = 10.0
    noise_scale: float = 1.0
    seed: int = 0


@dataclass
class MaskConfig:
    w: int = 9
    mask_start: int | None = None
    mask_len: int = 10
    corner: tuple | None = None
    sigma: float = 0.01
    val_frac: float = 0.1
    seed: int = 0


def _require_lattice(g: GraphSpec) -> None:
    if g.side is None or not g.has_normals:
        raise UnsupportedGraph("advection-diffusion data needs a periodic lattice with normals")


def adv_diff_generator(g: GraphSpec, D_diff: float, v) -> sp.csr_matrix:
    """M with M_ij = w_ij (D - n_ij . v / 2) on edges and M_ii = -deg_i D."""
    _require_lattice(g)
    a = g.adjacency
    off = D_diff * a - 0.5 * (a.multiply(g.normals_x) * v[0] + a.multiply(g.normals_y) * v[1])
    return (off - sp.diags(g.degrees * D_diff)).tocsr()


def build_adv_diff_transition(g: GraphSpec, D_diff: float, v, steps_per_frame: int = 4) -> sp.csr_matrix:
    """(I + M + M^2/2 + M^3/6) ** steps_per_frame as a sparse matrix."""
    if steps_per_frame < 1:
        raise ValueError("steps_per_frame must be >= 1")
    m = adv_diff_generator(g, D_diff, v)
    eye = sp.identity(g.n_nodes, format="csr")
    m2 = m @ m
    step = (eye + m + 0.5 * m2 + (m2 @ m) / 6.0).tocsr()
    out = step
    for _ in range(steps_per_frame - 1):
        out = (out @ step).tocsr()
    out.sum_duplicates()
    return out


def initial_factor(g: GraphSpec, delta: float = 0.01) -> sp.csr_matrix:
    """S_0 = (deg + delta) I - A, a jittered graph Laplacian."""
    return (sp.diags(g.degrees + delta) - g.adjacency).tocsr()


def noise_factor(g: GraphSpec, diag: float = 10.0) -> sp.csr_matrix:
    """S = diag I - A."""
    return (diag * sp.identity(g.n_nodes) - g.adjacency).tocsr()


def _gmrf_draw(s: sp.csr_matrix, rng: np.random.Generator) -> np.ndarray:
    # S symmetric PD, so S e = z gives e ~ N(0, (S^T S)^-1)
    z = rng.standard_normal(s.shape[0])
    sol = cg_solve(lambda x: s @ x, z, tol=0.0, rtol=1e-13, max_iter=20 * s.shape[0])
    return sol.solution


def simulate(g: GraphSpec, cfg: SimConfig | None = None) -> np.ndarray:
    """Ground-truth states of shape (K+1, N)."""
    cfg = cfg or SimConfig()
    _require_lattice(g)
    rng = np.random.default_rng(cfg.seed)
    f = build_adv_diff_transition(g, cfg.D_diff, cfg.v, cfg.steps_per_frame)
    s0 = initial_factor(g, cfg.delta)
    sn = noise_factor(g, cfg.noise_diag)
    x = np.empty((cfg.K + 1, g.n_nodes))
    x[0] = _gmrf_draw(s0, rng)
    for k in range(1, cfg.K + 1):
        x[k] = f @ x[k - 1] + cfg.noise_scale * _gmrf_draw(sn, rng)
    return x


def true_ssm(g: GraphSpec, cfg: SimConfig | None = None) -> LinearGaussianSSM:
    """Dense state-space form of the generating process (for exact oracles)."""
    cfg = cfg or SimConfig()
    f = build_adv_diff_transition(g, cfg.D_diff, cfg.v, cfg.steps_per_frame).toarray()
    s0 = initial_factor(g, cfg.delta).toarray()
    sn = noise_factor(g, cfg.noise_diag).toarray() / cfg.noise_scale
    zero = np.zeros(g.n_nodes)
    return LinearGaussianSSM(zero, s0.T @ s0, [f] * cfg.K, [zero] * cfg.K, [sn.T @ sn] * cfg.K)


@dataclass
class SyntheticDataset:
    """Truth plus per-coordinate roles.

    ``obs_*`` arrays list every non-test coordinate with its noisy value;
    ``obs_role`` marks each as ``train`` or ``val``.  Test coordinates are
    the masked ones and carry no observation.
    """

    side: int
    truth: np.ndarray
    obs_k: np.ndarray
    obs_node: np.ndarray
    obs_value: np.ndarray
    obs_sigma: np.ndarray
    obs_role: np.ndarray
    test_k: np.ndarray
    test_node: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.truth.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.truth.shape[1]

    @property
    def test_mask(self) -> np.ndarray:
        out = np.zeros(self.truth.shape, dtype=bool)
        out[self.test_k, self.test_node] = True
        return out

    def role_mask(self, role: str) -> np.ndarray:
        if role == "test":
            return self.test_mask
        out = np.zeros(self.truth.shape, dtype=bool)
        sel = self.obs_role == role
        out[self.obs_k[sel], self.obs_node[sel]] = True
        return out

    def observations(self, roles=("train",)) -> ObservationSet:
        sel = np.isin(self.obs_role, roles)
        return ObservationSet(self.n_steps, self.n_nodes, self.obs_k[sel], self.obs_node[sel],
                              self.obs_value[sel], self.obs_sigma[sel])

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "truth.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "node", "value"])
            for (k, i), val in np.ndenumerate(self.truth):
                wr.writerow([k, i, repr(float(val))])
        with open(path / "obs.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "node", "value", "sigma"])
            for k, i, val, s in zip(self.obs_k, self.obs_node, self.obs_value, self.obs_sigma):
                wr.writerow([int(k), int(i), repr(float(val)), repr(float(s))])
        roles = np.full(self.truth.shape, "", dtype=object)
        roles[self.obs_k, self.obs_node] = self.obs_role
        roles[self.test_k, self.test_node] = "test"
        with open(path / "splits.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "node", "role"])
            for (k, i), role in np.ndenumerate(roles):
                wr.writerow([k, i, role])
        meta = dict(self.meta, side=self.side)
        (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticDataset":
        path = Path(path)
        meta = json.loads((path / "meta.json").read_text())
        side = int(meta["side"])
        truth_rows = _read_rows(path / "truth.csv")
        n_steps = max(int(r["k"]) for r in truth_rows) + 1
        truth = np.zeros((n_steps, side * side))
        for r in truth_rows:
            truth[int(r["k"]), int(r["node"])] = float(r["value"])
        obs_rows = _read_rows(path / "obs.csv")
        role_of = {(int(r["k"]), int(r["node"])): r["role"] for r in _read_rows(path / "splits.csv")}
        ok = np.array([int(r["k"]) for r in obs_rows], dtype=np.int64)
        on = np.array([int(r["node"]) for r in obs_rows], dtype=np.int64)
        test = sorted(key for key, role in role_of.items() if role == "test")
        return cls(
            side=side,
            truth=truth,
            obs_k=ok,
            obs_node=on,
            obs_value=np.array([float(r["value"]) for r in obs_rows]),
            obs_sigma=np.array([float(r["sigma"]) for r in obs_rows]),
            obs_role=np.array([role_of[(k, i)] for k, i in zip(ok.tolist(), on.tolist())], dtype=object),
            test_k=np.array([t[0] for t in test], dtype=np.int64),
            test_node=np.array([t[1] for t in test], dtype=np.int64),
            meta=meta,
        )


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def mask_nodes(side: int, w: int, corner=None) -> np.ndarray:
    """Node ids of a w x w square; centred unless a (row, col) corner is given."""
    if w < 0 or w > side:
        raise InvalidMask(f"mask width {w} does not fit a lattice of side {side}")
    if corner is None:
        corner = ((side - w) // 2, (side - w) // 2)
    r0, c0 = corner
    if r0 < 0 or c0 < 0 or r0 + w > side or c0 + w > side:
        raise InvalidMask(f"mask at {corner} with width {w} exceeds the lattice")
    rows, cols = np.meshgrid(np.arange(r0, r0 + w), np.arange(c0, c0 + w), indexing="ij")
    return np.sort((rows * side + cols).ravel())


def mask_and_observe(truth: np.ndarray, cfg: MaskConfig | None = None, meta: dict | None = None) -> SyntheticDataset:
    """Hide a w x w square for ``mask_len`` steps and add observation noise elsewhere.

    Args:
        truth: (K+1, N) states on a lattice with N = side**2.
        cfg: mask and noise settings; ``mask_start`` defaults to K // 2 - 5
            clipped into range.
        meta: extra metadata merged into the dataset record.

    Returns:
        The dataset with train/val/test roles.
    """
    cfg = cfg or MaskConfig()
    truth = np.asarray(truth, dtype=float)
    n_steps, n = truth.shape
    side = math.isqrt(n)
    if side * side != n:
        raise InvalidMask("truth does not live on a square lattice")
    start = cfg.mask_start
    if start is None:
        start = min(max(0, (n_steps - 1) // 2 - 5), max(0, n_steps - cfg.mask_len))
    if cfg.w > 0 and (start < 0 or start + cfg.mask_len > n_steps):
        raise InvalidMask(f"mask steps [{start}, {start + cfg.mask_len}) exceed {n_steps} steps")
    nodes = mask_nodes(side, cfg.w, cfg.corner)
    hidden = np.zeros((n_steps, n), dtype=bool)
    if cfg.w > 0:
        hidden[start:start + cfg.mask_len][:, nodes] = True
    rng = np.random.default_rng(cfg.seed)
    ok, on = np.nonzero(~hidden)
    values = truth[ok, on] + cfg.sigma * rng.standard_normal(ok.size)
    n_val = int(round(cfg.val_frac * ok.size))
    role = np.full(ok.size, "train", dtype=object)
    role[rng.choice(ok.size, size=n_val, replace=False)] = "val"
    tk, tn = np.nonzero(hidden)
    info = dict(meta or {})
    info.update({k if k.startswith("mask_") else f"mask_{k}": v for k, v in asdict(cfg).items()})
    info["mask_start"] = int(start)
    return SyntheticDataset(side, truth, ok, on, values, np.full(ok.size, float(cfg.sigma)), role,
                            tk, tn, info)


def make_dataset(g: GraphSpec, sim: SimConfig | None = None, mask: MaskConfig | None = None) -> SyntheticDataset:
    """simulate followed by mask_and_observe, with all settings in ``meta``."""
    sim = sim or SimConfig()
    truth = simulate(g, sim)
    meta = {f"sim_{k}": (list(v) if isinstance(v, tuple) else v) for k, v in asdict(sim).items()}
    return mask_and_observe(truth, mask, meta)
