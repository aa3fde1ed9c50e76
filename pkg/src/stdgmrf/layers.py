"""Spatial DGMRF layers and linear temporal transition layers.

Every layer is a sparse linear operator on node vectors.  The vectorised
kernels below act on a batch ``X`` of shape (R, N), one row per time step,
with one coefficient row per batch row, so a whole state sequence is pushed
through a layer with a single sparse product.

Spatial coefficients are ``(alpha, beta, gamma)`` and define
``alpha * D**gamma + beta * D**(gamma - 1) @ A``.

Temporal coefficients depend on the variant:

- ``ar`` (lam): lam I
- ``diffusion`` (lam, omega): lam I + omega (A - D)
- ``directed_flow`` (lam, omega, zeta): lam I + omega (A - D_out) + zeta (A^T - D_in)
- ``advection_diffusion`` (d, u, v): I + M with M_ij = w_ij (d^2 - n_ij . (u, v) / 2)
  on edges and M_ii = -deg_i d^2
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SingularLayer, UnsupportedGraph
from .graph import GraphSpec, lattice_node, lattice_offset

VARIANTS: dict[str, tuple[str, ...]] = {
    "ar": ("lam",),
    "diffusion": ("lam", "omega"),
    "directed_flow": ("lam", "omega", "zeta"),
    "advection_diffusion": ("d", "u", "v"),
}

SINGULAR_TOL = 1e-12


def n_coefs(variant: str) -> int:
    try:
        return len(VARIANTS[variant])
    except KeyError:
        raise ValueError(f"unknown temporal variant {variant!r}") from None


@dataclass(frozen=True)
class SpatialLayerParams:
    alpha: float
    beta: float
    gamma: float
    bias: float = 0.0

    @property
    def coef(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma], dtype=float)


@dataclass(frozen=True)
class TemporalLayerParams:
    variant: str
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != n_coefs(self.variant):
            raise ValueError(f"{self.variant} takes {VARIANTS[self.variant]}, got {self.values}")

    @classmethod
    def ar(cls, lam):
        return cls("ar", (float(lam),))

    @classmethod
    def diffusion(cls, lam, omega):
        return cls("diffusion", (float(lam), float(omega)))

    @classmethod
    def directed_flow(cls, lam, omega, zeta):
        return cls("directed_flow", (float(lam), float(omega), float(zeta)))

    @classmethod
    def advection_diffusion(cls, d, v):
        return cls("advection_diffusion", (float(d), float(v[0]), float(v[1])))

    @property
    def coef(self) -> np.ndarray:
        return np.array(self.values, dtype=float)


# ---------------------------------------------------------------------------
# batched kernels

def amul(a, x: np.ndarray) -> np.ndarray:
    """Row-batched sparse product: returns ``x @ a.T`` for x of shape (R, N)."""
    return np.asarray(a @ x.T).T


def _split3(y: np.ndarray, n: int):
    return y[:, :n], y[:, n:2 * n], y[:, 2 * n:]


def _coef_rows(coef: np.ndarray, rows: int) -> np.ndarray:
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 1:
        coef = np.broadcast_to(coef, (rows, coef.size))
    return coef


def _check_degrees(g: GraphSpec) -> None:
    if np.any(g.degrees <= 0):
        raise UnsupportedGraph("spatial layers need strictly positive degrees")


def spatial_forward(g: GraphSpec, coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    c = _coef_rows(coef, x.shape[0])
    dg = np.exp(c[:, 2:3] * g.log_degrees)
    return c[:, 0:1] * dg * x + c[:, 1:2] * (dg / g.degrees) * amul(g.adjacency, x)


def spatial_transpose(g: GraphSpec, coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    c = _coef_rows(coef, x.shape[0])
    dg = np.exp(c[:, 2:3] * g.log_degrees)
    return c[:, 0:1] * dg * x + amul(g.adjacency_t, c[:, 1:2] * (dg / g.degrees) * x)


def spatial_coef_grad(g: GraphSpec, coef: np.ndarray, x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(gy * spatial_forward(x))`` w.r.t. each coefficient row."""
    c = _coef_rows(coef, x.shape[0])
    dg = np.exp(c[:, 2:3] * g.log_degrees)
    t_alpha = dg * x
    t_beta = (dg / g.degrees) * amul(g.adjacency, x)
    y = c[:, 0:1] * t_alpha + c[:, 1:2] * t_beta
    return np.stack(
        [
            np.einsum("rn,rn->r", gy, t_alpha),
            np.einsum("rn,rn->r", gy, t_beta),
            np.einsum("rn,rn->r", gy, g.log_degrees * y),
        ],
        axis=1,
    )


def spatial_logdet_coef(g: GraphSpec, coef: np.ndarray, with_grad: bool = False):
    """log|det| of spatial layers for each coefficient row (and its gradient)."""
    if g.spectrum is None:
        raise UnsupportedGraph("spectrum not precomputed; call precompute_spectrum first")
    c = np.atleast_2d(np.asarray(coef, dtype=float))
    lam = g.spectrum
    ev = c[:, 0:1] + c[:, 1:2] * lam
    if np.any(np.abs(ev) < SINGULAR_TOL):
        raise SingularLayer("alpha + beta * lambda_i vanishes for some eigenvalue")
    sum_logd = float(np.sum(g.log_degrees))
    val = c[:, 2] * sum_logd + np.sum(np.log(np.abs(ev)), axis=1)
    if not with_grad:
        return val
    inv = 1.0 / ev
    grad = np.stack(
        [inv.sum(axis=1), (lam * inv).sum(axis=1), np.full(c.shape[0], sum_logd)], axis=1
    )
    return val, grad


def _require(g: GraphSpec, variant: str) -> None:
    if variant == "advection_diffusion" and not g.has_normals:
        raise UnsupportedGraph("advection-diffusion layers need edge normals")
    n_coefs(variant)


def temporal_forward(g: GraphSpec, variant: str, coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    _require(g, variant)
    c = _coef_rows(coef, x.shape[0])
    if variant == "ar":
        return c[:, 0:1] * x
    if variant == "diffusion":
        return c[:, 0:1] * x + c[:, 1:2] * (amul(g.adjacency, x) - g.degrees * x)
    if variant == "directed_flow":
        return (
            c[:, 0:1] * x
            + c[:, 1:2] * (amul(g.adjacency, x) - g.degrees_out * x)
            + c[:, 2:3] * (amul(g.adjacency_t, x) - g.degrees_in * x)
        )
    ax, wx, wy = _split3(amul(g.stacked_operator, x), g.n_nodes)
    d2 = c[:, 0:1] ** 2
    return x + d2 * (ax - g.degrees * x) - 0.5 * (c[:, 1:2] * wx + c[:, 2:3] * wy)


def temporal_transpose(g: GraphSpec, variant: str, coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    _require(g, variant)
    c = _coef_rows(coef, x.shape[0])
    if variant == "ar":
        return c[:, 0:1] * x
    if variant == "diffusion":
        return c[:, 0:1] * x + c[:, 1:2] * (amul(g.adjacency_t, x) - g.degrees * x)
    if variant == "directed_flow":
        return (
            c[:, 0:1] * x
            + c[:, 1:2] * (amul(g.adjacency_t, x) - g.degrees_out * x)
            + c[:, 2:3] * (amul(g.adjacency, x) - g.degrees_in * x)
        )
    ax, wx, wy = _split3(amul(g.stacked_operator_t, x), g.n_nodes)
    d2 = c[:, 0:1] ** 2
    return x + d2 * (ax - g.degrees * x) - 0.5 * (c[:, 1:2] * wx + c[:, 2:3] * wy)


def temporal_coef_grad(
    g: GraphSpec, variant: str, coef: np.ndarray, x: np.ndarray, gy: np.ndarray
) -> np.ndarray:
    """Gradient of ``sum(gy * temporal_forward(x))`` w.r.t. each coefficient row."""
    c = _coef_rows(coef, x.shape[0])

    def dot(a):
        return np.einsum("rn,rn->r", gy, a)

    if variant == "ar":
        return dot(x)[:, None]
    if variant == "diffusion":
        return np.stack([dot(x), dot(amul(g.adjacency, x) - g.degrees * x)], axis=1)
    if variant == "directed_flow":
        return np.stack(
            [
                dot(x),
                dot(amul(g.adjacency, x) - g.degrees_out * x),
                dot(amul(g.adjacency_t, x) - g.degrees_in * x),
            ],
            axis=1,
        )
    ax, wx, wy = _split3(amul(g.stacked_operator, x), g.n_nodes)
    return np.stack(
        [2.0 * c[:, 0] * dot(ax - g.degrees * x), -0.5 * dot(wx), -0.5 * dot(wy)], axis=1
    )


# ---------------------------------------------------------------------------
# single-vector API

def spatial_apply(g: GraphSpec, p: SpatialLayerParams, h: np.ndarray) -> np.ndarray:
    """Apply one spatial layer (with its bias) to a node vector."""
    _check_degrees(g)
    h = np.asarray(h, dtype=float)
    return spatial_forward(g, p.coef, h[None, :])[0] + p.bias


def spatial_logdet(g: GraphSpec, p: SpatialLayerParams) -> float:
    """log|det(alpha D^gamma + beta D^(gamma-1) A)| via the precomputed spectrum."""
    return float(spatial_logdet_coef(g, p.coef)[0])


def temporal_apply(g: GraphSpec, p: TemporalLayerParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return temporal_forward(g, p.variant, p.coef, x[None, :])[0]


def temporal_apply_transpose(g: GraphSpec, p: TemporalLayerParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return temporal_transpose(g, p.variant, p.coef, x[None, :])[0]


def row_stencil(g: GraphSpec, row: np.ndarray, center: int, radius: int | None = None) -> dict:
    """Key the entries of a lattice matrix row by their (dx, dy) offset."""
    if g.side is None:
        raise UnsupportedGraph("stencils are defined on periodic lattices only")
    out: dict[tuple[int, int], float] = {}
    for j in range(g.n_nodes):
        off = lattice_offset(center, j, g.side)
        if radius is None or abs(off[0]) + abs(off[1]) <= radius:
            out[off] = float(row[j])
    return out


def temporal_stencil(g: GraphSpec, layers: Sequence[TemporalLayerParams]) -> dict:
    """Weights that the composed transition F_L ... F_1 gives to a pixel's neighbours.

    Returns the centre row of the composed matrix keyed by ``(dx, dy)``,
    restricted to offsets with ``|dx| + |dy| <= len(layers)``.
    """
    if g.side is None:
        raise UnsupportedGraph("stencils are defined on periodic lattices only")
    center = lattice_node(g.side // 2, g.side // 2, g.side)
    r = np.zeros((1, g.n_nodes))
    r[0, center] = 1.0
    # row c of F_L...F_1 equals F_1^T ... F_L^T e_c
    for layer in reversed(list(layers)):
        r = temporal_transpose(g, layer.variant, layer.coef, r)
    return row_stencil(g, r[0], center, radius=len(layers))
