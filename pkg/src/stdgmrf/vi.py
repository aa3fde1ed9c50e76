"""Variational learning of prior parameters.

The variational family is x = P z + nu with z ~ N(0, I) and
P = diag(P_0, ..., P_K) F~, where P_k = diag(rho_k) S~_k diag(psi_k) uses one
spatial layer S~_k and F~ optionally couples consecutive steps through one
diffusion layer per step: (F~ z)_k = z_k + F~_k z_{k-1}.

Gradients are exact reverse-mode derivatives of the single-draw ELBO, written
out by hand over the fixed chain q-sample -> temporal map -> spatial map ->
quadratic terms, plus analytic log-determinant partials.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidObservation, SingularLayer, TrainingDiverged
from .graph import GraphSpec
from .layers import (
    spatial_coef_grad,
    spatial_forward,
    spatial_logdet_coef,
    spatial_transpose,
    temporal_coef_grad,
    temporal_forward,
)
from .observations import ObservationSet
from .prior import ModelParams, g_backward, g_forward_tape, prior_logdet

log = logging.getLogger(__name__)

THETA_KEYS = ("spatial", "bias_s", "bias_f", "temporal")
PHI_KEYS = ("nu", "log_rho", "log_psi", "s_tilde", "f_tilde")


@dataclass
class VariationalParams:
    """Parameters phi of q(x).

    ``rho`` and ``psi`` are stored as logs.  ``s_tilde`` holds one
    (alpha, beta, gamma) row per step; ``f_tilde`` holds one (lam, omega)
    diffusion row per transition k = 1..K, or is None for independent steps.
    """

    nu: np.ndarray
    log_rho: np.ndarray
    log_psi: np.ndarray
    s_tilde: np.ndarray
    f_tilde: np.ndarray | None = None

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.log_rho = np.asarray(self.log_rho, dtype=float)
        self.log_psi = np.asarray(self.log_psi, dtype=float)
        self.s_tilde = np.asarray(self.s_tilde, dtype=float)
        shape = self.nu.shape
        if self.log_rho.shape != shape or self.log_psi.shape != shape:
            raise ValueError("nu, log_rho and log_psi must share one (K+1, N) shape")
        if self.s_tilde.shape != (shape[0], 3):
            raise ValueError(f"s_tilde must have shape ({shape[0]}, 3)")
        if self.f_tilde is not None:
            self.f_tilde = np.asarray(self.f_tilde, dtype=float)
            if self.f_tilde.shape != (shape[0] - 1, 2):
                raise ValueError(f"f_tilde must have shape ({shape[0] - 1}, 2)")

    @property
    def rho(self) -> np.ndarray:
        return np.exp(self.log_rho)

    @property
    def psi(self) -> np.ndarray:
        return np.exp(self.log_psi)

    @property
    def shape(self) -> tuple[int, int]:
        return self.nu.shape

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"nu": self.nu, "log_rho": self.log_rho, "log_psi": self.log_psi,
               "s_tilde": self.s_tilde}
        if self.f_tilde is not None:
            out["f_tilde"] = self.f_tilde
        return out

    def copy(self) -> "VariationalParams":
        return VariationalParams(self.nu.copy(), self.log_rho.copy(), self.log_psi.copy(),
                                 self.s_tilde.copy(),
                                 None if self.f_tilde is None else self.f_tilde.copy())

    @classmethod
    def init(cls, obs: ObservationSet, temporal: bool = True, scale: float | None = 1.0,
             fill: str = "step_mean") -> "VariationalParams":
        """Start q near the data.

        nu copies observed values; unobserved entries get the mean of the
        observed values at the same step (``fill="step_mean"``, falling back
        to the global mean) or 0 (``fill="zero"``).  rho starts at ``scale``
        (None means the median observation noise), psi = 1, S~ = I, F~ = 0.
        """
        shape = (obs.n_steps, obs.n_nodes)
        nu = obs.scatter(obs.values)
        if fill == "step_mean" and len(obs):
            counts = np.bincount(obs.k, minlength=shape[0])
            sums = np.bincount(obs.k, weights=obs.values, minlength=shape[0])
            level = np.where(counts > 0, sums / np.maximum(counts, 1), obs.values.mean())
            nu = np.where(obs.mask, nu, level[:, None])
        elif fill not in ("step_mean", "zero"):
            raise ValueError(f"unknown fill {fill!r}")
        if scale is None:
            scale = float(np.median(obs.sigma)) if len(obs) else 1.0
        s_tilde = np.tile([1.0, 0.0, 0.0], (shape[0], 1))
        f_tilde = np.zeros((shape[0] - 1, 2)) if temporal else None
        return cls(nu, np.full(shape, np.log(scale)), np.zeros(shape), s_tilde, f_tilde)


@dataclass
class TrainConfig:
    iterations: int = 10000
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    mc_samples: int = 1
    seed: int = 0
    log_every: int = 0


# ---------------------------------------------------------------------------
# flat parameter vector

@dataclass(frozen=True)
class Manifest:
    """Names, shapes and offsets of arrays packed into one flat vector."""

    entries: tuple = field(default_factory=tuple)

    @classmethod
    def of(cls, m: ModelParams, vp: VariationalParams) -> "Manifest":
        arrays = {**m.arrays(), **vp.arrays()}
        return cls(tuple((k, arrays[k].shape) for k in THETA_KEYS + PHI_KEYS if k in arrays))

    @property
    def size(self) -> int:
        return int(sum(int(np.prod(s)) for _, s in self.entries))

    def offsets(self):
        off = 0
        for name, shape in self.entries:
            n = int(np.prod(shape))
            yield name, shape, off, n
            off += n

    def names(self) -> list[str]:
        """One label per scalar, e.g. ``temporal[0,0,1,2]``."""
        out = []
        for name, shape, _, _ in self.offsets():
            for idx in np.ndindex(*shape):
                out.append(f"{name}[{','.join(map(str, idx))}]")
        return out


def pack(m: ModelParams, vp: VariationalParams) -> np.ndarray:
    arrays = {**m.arrays(), **vp.arrays()}
    man = Manifest.of(m, vp)
    return np.concatenate([arrays[n].ravel() for n, _ in man.entries]) if man.entries else np.zeros(0)


def pack_grads(grads: dict, manifest: Manifest) -> np.ndarray:
    return np.concatenate([np.asarray(grads[n], dtype=float).ravel() for n, _ in manifest.entries])


def unpack(vec: np.ndarray, m: ModelParams, vp: VariationalParams):
    """Build new (ModelParams, VariationalParams) from ``vec`` using templates."""
    man = Manifest.of(m, vp)
    arrays = {}
    for name, shape, off, n in man.offsets():
        arrays[name] = np.array(vec[off:off + n]).reshape(shape)
    m2 = ModelParams(m.n_steps, m.markov_order, m.time_invariant, m.temporal_variant,
                     arrays["spatial"], arrays["bias_s"], arrays["bias_f"], arrays["temporal"])
    vp2 = VariationalParams(arrays["nu"], arrays["log_rho"], arrays["log_psi"],
                            arrays["s_tilde"], arrays.get("f_tilde"))
    return m2, vp2


# ---------------------------------------------------------------------------
# q(x)

def _q_forward(vp: VariationalParams, g: GraphSpec, z: np.ndarray):
    w = np.array(z, dtype=float, copy=True)
    if vp.f_tilde is not None and z.shape[0] > 1:
        w[1:] += temporal_forward(g, "diffusion", vp.f_tilde, z[:-1])
    psi, rho = vp.psi, vp.rho
    u = psi * w
    t = spatial_forward(g, vp.s_tilde, u)
    x = rho * t + vp.nu
    return x, (z, w, u, t)


def _q_backward(vp: VariationalParams, g: GraphSpec, tape, gx: np.ndarray) -> dict:
    z, w, u, t = tape
    rho, psi = vp.rho, vp.psi
    gt = gx * rho
    gu = spatial_transpose(g, vp.s_tilde, gt)
    grads = {
        "nu": gx.copy(),
        "log_rho": gx * t * rho,
        "s_tilde": spatial_coef_grad(g, vp.s_tilde, u, gt),
        "log_psi": gu * w * psi,
    }
    if vp.f_tilde is not None:
        gw = gu * psi
        grads["f_tilde"] = (
            temporal_coef_grad(g, "diffusion", vp.f_tilde, z[:-1], gw[1:])
            if z.shape[0] > 1 else np.zeros_like(vp.f_tilde)
        )
    return grads


def q_sample(vp: VariationalParams, g: GraphSpec, noise: np.ndarray) -> np.ndarray:
    """Reparameterised draw x = P z + nu for standard-normal ``noise`` of shape (K+1, N)."""
    return _q_forward(vp, g, np.asarray(noise, dtype=float))[0]


def q_entropy_logdet(vp: VariationalParams, g: GraphSpec, with_grad: bool = False):
    """Half the log-determinant of Lambda = P P^T, i.e. log|det P|.

    F~ is unit lower block-triangular and contributes nothing.
    """
    vals = spatial_logdet_coef(g, vp.s_tilde, with_grad=with_grad)
    if with_grad:
        vals, sgrad = vals
    total = float(vp.log_rho.sum() + vp.log_psi.sum() + vals.sum())
    if not with_grad:
        return total
    grads = {"nu": np.zeros_like(vp.nu), "log_rho": np.ones_like(vp.log_rho),
             "log_psi": np.ones_like(vp.log_psi), "s_tilde": sgrad}
    if vp.f_tilde is not None:
        grads["f_tilde"] = np.zeros_like(vp.f_tilde)
    return total, grads


# ---------------------------------------------------------------------------
# ELBO

def _as_draws(noise: np.ndarray, shape) -> np.ndarray:
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 2:
        noise = noise[None]
    if noise.ndim != 3 or noise.shape[1:] != tuple(shape):
        raise InvalidObservation(f"noise must have shape {tuple(shape)} or (S, *{tuple(shape)})")
    return noise


def _check(m: ModelParams, vp: VariationalParams, g: GraphSpec, obs: ObservationSet) -> None:
    shape = (m.n_steps, g.n_nodes)
    if vp.shape != shape:
        raise InvalidObservation(f"variational shape {vp.shape} does not match model {shape}")
    obs.check_shape(*shape)


def elbo_and_grad(m: ModelParams, vp: VariationalParams, g: GraphSpec, obs: ObservationSet,
                  noise: np.ndarray, with_grad: bool = True):
    """Monte-Carlo ELBO (additive constants dropped) and its gradient.

    ``noise`` has shape (K+1, N) or (S, K+1, N); the estimate averages the S
    draws.  Returns ``value`` or ``(value, grads)`` with ``grads`` a dict
    keyed like ``ModelParams.arrays() | VariationalParams.arrays()``.
    """
    _check(m, vp, g, obs)
    draws = _as_draws(noise, vp.shape)
    prec = obs.precision
    y = obs.scatter(obs.values)
    n_draws = draws.shape[0]
    quad = 0.0
    acc = None
    for z in draws:
        x, qtape = _q_forward(vp, g, z)
        zz, gtape = g_forward_tape(m, g, x)
        r = x - y
        quad += -0.5 * float(np.sum(zz * zz)) - 0.5 * float(np.sum(prec * r * r))
        if not with_grad:
            continue
        gx, theta_grads = g_backward(m, g, gtape, -zz)
        gx -= prec * r
        grads = {**theta_grads, **_q_backward(vp, g, qtape, gx)}
        if acc is None:
            acc = grads
        else:
            for key in acc:
                acc[key] += grads[key]
    if with_grad:
        ld_p, gp = prior_logdet(m, g, with_grad=True)
        ld_q, gq = q_entropy_logdet(vp, g, with_grad=True)
    else:
        ld_p = prior_logdet(m, g)
        ld_q = q_entropy_logdet(vp, g)
    value = quad / n_draws + ld_p + ld_q - float(np.sum(np.log(obs.sigma)))
    if not with_grad:
        return value
    for key in acc:
        acc[key] /= n_draws
    acc["spatial"] += gp
    for key, val in gq.items():
        acc[key] += val
    return value, acc


def elbo(m: ModelParams, vp: VariationalParams, g: GraphSpec, obs: ObservationSet,
         noise: np.ndarray) -> float:
    """Single- or multi-draw ELBO estimate for the given standard-normal noise."""
    return elbo_and_grad(m, vp, g, obs, noise, with_grad=False)


def elbo_gradient(m: ModelParams, vp: VariationalParams, g: GraphSpec, obs: ObservationSet,
                  noise: np.ndarray) -> np.ndarray:
    """Gradient of :func:`elbo` as a flat vector ordered by :class:`Manifest`."""
    _, grads = elbo_and_grad(m, vp, g, obs, noise)
    return pack_grads(grads, Manifest.of(m, vp))


# ---------------------------------------------------------------------------
# optimisation

class Adam:
    """Adam on a flat parameter vector (minimisation)."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """Update ``params`` in place."""
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.epsilon)


def train(m: ModelParams, vp: VariationalParams, g: GraphSpec, obs: ObservationSet,
          cfg: TrainConfig | None = None, callback=None):
    """Maximise the ELBO with Adam, drawing fresh noise every iteration.

    Returns ``(model, variational, trace)`` where ``trace[i]`` is the ELBO
    estimate evaluated before update i.
    """
    cfg = cfg or TrainConfig()
    _check(m, vp, g, obs)
    rng = np.random.default_rng(cfg.seed)
    theta = pack(m, vp)
    man = Manifest.of(m, vp)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    trace = np.empty(cfg.iterations)
    cur_m, cur_vp = m.copy(), vp.copy()
    for it in range(cfg.iterations):
        noise = rng.standard_normal((cfg.mc_samples,) + vp.shape)
        try:
            val, grads = elbo_and_grad(cur_m, cur_vp, g, obs, noise)
        except SingularLayer as exc:
            raise TrainingDiverged(it, f"singular spatial layer at iteration {it}") from exc
        flat = pack_grads(grads, man)
        if not np.isfinite(val) or not np.all(np.isfinite(flat)):
            raise TrainingDiverged(it)
        trace[it] = val
        opt.step(theta, -flat)
        cur_m, cur_vp = unpack(theta, m, vp)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("iter %d elbo %.4f", it + 1, val)
        if callback is not None:
            callback(it, val, cur_m, cur_vp)
    return cur_m, cur_vp, trace
