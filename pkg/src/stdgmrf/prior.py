"""Joint spatiotemporal DGMRF prior.

States are arrays of shape (K+1, N), row k holding x_k.  The prior is the
two-stage affine map

    h = f(x) = F x + b_f        (temporal map, unit lower block-banded F)
    z = s(h) = S h + b_s        (spatial map, block diagonal S)

with z standard normal, so the precision is F^T S^T S F.  Block k of F h is
``h_k - sum_tau F_{k,tau} h_{k-tau}`` where each F_{k,tau} is a product of
temporal layers; block k of S is a product of spatial layers.

Parameters live in arrays indexed by *groups*: with ``time_invariant`` every
step k >= 1 shares one spatial group and one temporal group, otherwise each
step has its own.  Step 0 always has its own spatial group (the initial state
prior) and no temporal group.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphSpec
from .layers import (
    SpatialLayerParams,
    TemporalLayerParams,
    VARIANTS,
    n_coefs,
    spatial_coef_grad,
    spatial_forward,
    spatial_logdet_coef,
    spatial_transpose,
    temporal_coef_grad,
    temporal_forward,
    temporal_transpose,
)

DEFAULT_TEMPORAL_INIT = {
    "ar": (1.0,),
    "diffusion": (1.0, 0.0),
    "directed_flow": (1.0, 0.0, 0.0),
    "advection_diffusion": (0.1, 0.0, 0.0),
}


@dataclass
class ModelParams:
    """All prior parameters.

    Attributes:
        n_steps: number of time points K+1.
        markov_order: p >= 1.
        time_invariant: share spatial/temporal parameters over k >= 1.
        temporal_variant: key of :data:`stdgmrf.layers.VARIANTS`.
        spatial: (n_spatial_groups, L_spatial, 3) alpha, beta, gamma.
        bias_s, bias_f: (n_spatial_groups,) spatial and temporal bias scalars.
        temporal: (n_temporal_groups, p, L_temporal, n_coefs) layer coefficients.

    ``L_temporal == 0`` means no temporal coupling at all (F = I), i.e. K+1
    independent spatial DGMRFs.
    """

    n_steps: int
    markov_order: int
    time_invariant: bool
    temporal_variant: str
    spatial: np.ndarray
    bias_s: np.ndarray
    bias_f: np.ndarray
    temporal: np.ndarray

    def __post_init__(self):
        if self.markov_order < 1:
            raise ValueError("markov_order must be >= 1")
        if self.temporal_variant not in VARIANTS:
            raise ValueError(f"unknown temporal variant {self.temporal_variant!r}")
        ns, nt = n_spatial_groups(self.n_steps, self.time_invariant), n_temporal_groups(
            self.n_steps, self.time_invariant
        )
        self.spatial = np.asarray(self.spatial, dtype=float)
        self.bias_s = np.asarray(self.bias_s, dtype=float)
        self.bias_f = np.asarray(self.bias_f, dtype=float)
        self.temporal = np.asarray(self.temporal, dtype=float)
        if self.spatial.ndim != 3 or self.spatial.shape[0] != ns or self.spatial.shape[2] != 3:
            raise ValueError(f"spatial must have shape ({ns}, L, 3), got {self.spatial.shape}")
        if self.bias_s.shape != (ns,) or self.bias_f.shape != (ns,):
            raise ValueError(f"biases must have shape ({ns},)")
        t = self.temporal
        if t.ndim != 4 or t.shape[0] != nt or t.shape[1] != self.markov_order or t.shape[3] != n_coefs(
            self.temporal_variant
        ):
            raise ValueError(
                f"temporal must have shape ({nt}, {self.markov_order}, L, "
                f"{n_coefs(self.temporal_variant)}), got {t.shape}"
            )

    @property
    def K(self) -> int:
        return self.n_steps - 1

    @property
    def L_spatial(self) -> int:
        return self.spatial.shape[1]

    @property
    def L_temporal(self) -> int:
        return self.temporal.shape[2]

    @property
    def spatial_group(self) -> np.ndarray:
        return spatial_groups(self.n_steps, self.time_invariant)

    @property
    def temporal_group(self) -> np.ndarray:
        return temporal_groups(self.n_steps, self.time_invariant)

    def spatial_layers(self, k: int) -> list[SpatialLayerParams]:
        gi = self.spatial_group[k]
        return [SpatialLayerParams(*row) for row in self.spatial[gi]]

    def temporal_layers(self, k: int, tau: int) -> list[TemporalLayerParams]:
        if not 1 <= tau <= min(k, self.markov_order):
            raise IndexError(f"no transition for step {k} at lag {tau}")
        gi = self.temporal_group[k]
        return [TemporalLayerParams(self.temporal_variant, tuple(row)) for row in self.temporal[gi, tau - 1]]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.n_steps, self.markov_order, self.time_invariant, self.temporal_variant,
            self.spatial.copy(), self.bias_s.copy(), self.bias_f.copy(), self.temporal.copy(),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {"spatial": self.spatial, "bias_s": self.bias_s, "bias_f": self.bias_f,
                "temporal": self.temporal}

    @classmethod
    def init(
        cls,
        n_steps: int,
        *,
        L_spatial: int = 2,
        L_temporal: int = 4,
        markov_order: int = 1,
        temporal_variant: str = "advection_diffusion",
        time_invariant: bool = True,
        rng: np.random.Generator | None = None,
    ) -> "ModelParams":
        """Near-identity initialisation.

        alpha = 1 + u, beta = u' with u, u' ~ U[-0.1, 0.1], gamma = 1, zero
        biases; temporal layers start at lam = 1, omega = zeta = 0, or
        d = 0.1, v = 0 for advection-diffusion.
        """
        rng = np.random.default_rng() if rng is None else rng
        ns = n_spatial_groups(n_steps, time_invariant)
        nt = n_temporal_groups(n_steps, time_invariant)
        spatial = np.empty((ns, L_spatial, 3))
        spatial[..., 0] = 1.0 + rng.uniform(-0.1, 0.1, (ns, L_spatial))
        spatial[..., 1] = rng.uniform(-0.1, 0.1, (ns, L_spatial))
        spatial[..., 2] = 1.0
        temporal = np.empty((nt, markov_order, L_temporal, n_coefs(temporal_variant)))
        temporal[...] = DEFAULT_TEMPORAL_INIT[temporal_variant]
        return cls(n_steps, markov_order, time_invariant, temporal_variant, spatial,
                   np.zeros(ns), np.zeros(ns), temporal)


def n_spatial_groups(n_steps: int, time_invariant: bool) -> int:
    return min(n_steps, 2) if time_invariant else n_steps


def n_temporal_groups(n_steps: int, time_invariant: bool) -> int:
    if n_steps <= 1:
        return 0
    return 1 if time_invariant else n_steps - 1


def spatial_groups(n_steps: int, time_invariant: bool) -> np.ndarray:
    k = np.arange(n_steps)
    return np.minimum(k, 1) if time_invariant else k


def temporal_groups(n_steps: int, time_invariant: bool) -> np.ndarray:
    k = np.arange(n_steps)
    return np.where(k == 0, -1, 0) if time_invariant else k - 1


# ---------------------------------------------------------------------------
# layer stacks

def stack_forward(fwd, coefs: np.ndarray, x: np.ndarray, keep: bool = False):
    """Apply layers ``coefs[:, 0], coefs[:, 1], ...`` in order.

    ``fwd(coef_rows, x)`` applies one layer.  With ``keep`` the list of layer
    inputs is returned as well, for the backward pass.
    """
    inputs = []
    for l in range(coefs.shape[1]):
        if keep:
            inputs.append(x)
        x = fwd(coefs[:, l], x)
    return (x, inputs) if keep else x


def stack_transpose(tr, coefs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Transpose of :func:`stack_forward`: transposed layers in reverse order."""
    for l in reversed(range(coefs.shape[1])):
        x = tr(coefs[:, l], x)
    return x


def stack_backward(tr, cgrad, coefs: np.ndarray, inputs: list, gy: np.ndarray):
    """Reverse pass through a layer stack.

    Returns the input cotangent and coefficient gradients shaped like ``coefs``.
    """
    gc = np.zeros_like(coefs)
    for l in reversed(range(coefs.shape[1])):
        gc[:, l] = cgrad(coefs[:, l], inputs[l], gy)
        gy = tr(coefs[:, l], gy)
    return gy, gc


def _spatial_fns(g: GraphSpec):
    return (
        lambda c, x: spatial_forward(g, c, x),
        lambda c, x: spatial_transpose(g, c, x),
        lambda c, x, gy: spatial_coef_grad(g, c, x, gy),
    )


def _temporal_fns(g: GraphSpec, variant: str):
    return (
        lambda c, x: temporal_forward(g, variant, c, x),
        lambda c, x: temporal_transpose(g, variant, c, x),
        lambda c, x, gy: temporal_coef_grad(g, variant, c, x, gy),
    )


def _lag_steps(m: ModelParams, tau: int) -> np.ndarray:
    return np.arange(tau, m.n_steps)


def _lag_coefs(m: ModelParams, tau: int) -> np.ndarray:
    ks = _lag_steps(m, tau)
    return m.temporal[m.temporal_group[ks], tau - 1]


def _active_lags(m: ModelParams):
    if m.L_temporal == 0:
        return []
    return [tau for tau in range(1, m.markov_order + 1) if tau < m.n_steps]


# ---------------------------------------------------------------------------
# maps

def f_linear(m: ModelParams, g: GraphSpec, x: np.ndarray) -> np.ndarray:
    """F x without bias."""
    fwd, _, _ = _temporal_fns(g, m.temporal_variant)
    h = np.array(x, dtype=float, copy=True)
    for tau in _active_lags(m):
        h[tau:] -= stack_forward(fwd, _lag_coefs(m, tau), x[: m.n_steps - tau])
    return h


def f_apply(m: ModelParams, g: GraphSpec, x: np.ndarray) -> np.ndarray:
    """Temporal map h = F x + b_f."""
    return f_linear(m, g, x) + m.bias_f[m.spatial_group][:, None]


def ft_apply(m: ModelParams, g: GraphSpec, h: np.ndarray) -> np.ndarray:
    """F^T h (no bias)."""
    _, tr, _ = _temporal_fns(g, m.temporal_variant)
    out = np.array(h, dtype=float, copy=True)
    for tau in _active_lags(m):
        out[: m.n_steps - tau] -= stack_transpose(tr, _lag_coefs(m, tau), h[tau:])
    return out


def s_linear(m: ModelParams, g: GraphSpec, h: np.ndarray) -> np.ndarray:
    fwd, _, _ = _spatial_fns(g)
    return stack_forward(fwd, m.spatial[m.spatial_group], np.asarray(h, dtype=float))


def s_apply(m: ModelParams, g: GraphSpec, h: np.ndarray) -> np.ndarray:
    """Spatial map z = S h + b_s, bias added once after the last layer."""
    return s_linear(m, g, h) + m.bias_s[m.spatial_group][:, None]


def st_apply(m: ModelParams, g: GraphSpec, z: np.ndarray) -> np.ndarray:
    """S^T z (no bias)."""
    _, tr, _ = _spatial_fns(g)
    return stack_transpose(tr, m.spatial[m.spatial_group], np.asarray(z, dtype=float))


def g_apply(m: ModelParams, g: GraphSpec, x: np.ndarray) -> np.ndarray:
    """Full affine map x -> z = S(F x + b_f) + b_s."""
    return s_apply(m, g, f_apply(m, g, x))


def precision_matvec(m: ModelParams, g: GraphSpec, x: np.ndarray) -> np.ndarray:
    """Prior precision product F^T S^T S F x."""
    return ft_apply(m, g, st_apply(m, g, s_linear(m, g, f_linear(m, g, x))))


def bias_image(m: ModelParams, g: GraphSpec) -> np.ndarray:
    """S b_f + b_s, the total bias of the affine map."""
    ones = np.ones((m.n_steps, g.n_nodes))
    bf = m.bias_f[m.spatial_group][:, None] * ones
    return s_linear(m, g, bf) + m.bias_s[m.spatial_group][:, None]


def information_vector(m: ModelParams, g: GraphSpec) -> np.ndarray:
    """eta = Omega mu = -F^T S^T (S b_f + b_s)."""
    return -ft_apply(m, g, st_apply(m, g, bias_image(m, g)))


def prior_logdet(m: ModelParams, g: GraphSpec, with_grad: bool = False):
    """log|det(S F)| = sum_k log|det S_k|; temporal parameters do not enter."""
    counts = np.bincount(m.spatial_group, minlength=m.spatial.shape[0]).astype(float)
    flat = m.spatial.reshape(-1, 3)
    if flat.shape[0] == 0:
        return (0.0, np.zeros_like(m.spatial)) if with_grad else 0.0
    if with_grad:
        val, grad = spatial_logdet_coef(g, flat, with_grad=True)
    else:
        val = spatial_logdet_coef(g, flat)
    per_group = val.reshape(m.spatial.shape[:2]).sum(axis=1)
    total = float(np.dot(counts, per_group))
    if not with_grad:
        return total
    return total, grad.reshape(m.spatial.shape) * counts[:, None, None]


# ---------------------------------------------------------------------------
# reverse pass through g(x) = S(Fx + b_f) + b_s

def g_forward_tape(m: ModelParams, g: GraphSpec, x: np.ndarray):
    """Evaluate z = g(x) and record what the reverse pass needs."""
    tfwd, _, _ = _temporal_fns(g, m.temporal_variant)
    sfwd, _, _ = _spatial_fns(g)
    h = np.array(x, dtype=float, copy=True)
    lag_inputs = {}
    for tau in _active_lags(m):
        out, inputs = stack_forward(tfwd, _lag_coefs(m, tau), x[: m.n_steps - tau], keep=True)
        h[tau:] -= out
        lag_inputs[tau] = inputs
    h += m.bias_f[m.spatial_group][:, None]
    z, s_inputs = stack_forward(sfwd, m.spatial[m.spatial_group], h, keep=True)
    z += m.bias_s[m.spatial_group][:, None]
    return z, {"lag_inputs": lag_inputs, "s_inputs": s_inputs}


def g_backward(m: ModelParams, g: GraphSpec, tape: dict, gz: np.ndarray):
    """Pull the cotangent ``gz`` of z back to x and to the prior parameters.

    Returns ``(gx, grads)`` with ``grads`` keyed like :meth:`ModelParams.arrays`.
    """
    _, ttr, tcg = _temporal_fns(g, m.temporal_variant)
    _, str_, scg = _spatial_fns(g)
    sg = m.spatial_group
    ns = m.spatial.shape[0]
    g_bias_s = np.bincount(sg, weights=gz.sum(axis=1), minlength=ns)
    gh, gc_rows = stack_backward(str_, scg, m.spatial[sg], tape["s_inputs"], gz)
    g_spatial = np.zeros_like(m.spatial)
    np.add.at(g_spatial, sg, gc_rows)
    g_bias_f = np.bincount(sg, weights=gh.sum(axis=1), minlength=ns)
    gx = gh.copy()
    g_temporal = np.zeros_like(m.temporal)
    for tau, inputs in tape["lag_inputs"].items():
        ks = _lag_steps(m, tau)
        gin, gc = stack_backward(ttr, tcg, _lag_coefs(m, tau), inputs, -gh[tau:])
        gx[: m.n_steps - tau] += gin
        np.add.at(g_temporal[:, tau - 1], m.temporal_group[ks], gc)
    grads = {"spatial": g_spatial, "bias_s": g_bias_s, "bias_f": g_bias_f, "temporal": g_temporal}
    return gx, grads
