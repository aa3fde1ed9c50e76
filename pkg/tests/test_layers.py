import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stdgmrf.errors import SingularLayer, UnsupportedGraph
from stdgmrf.graph import build_periodic_lattice, load_graph, precompute_spectrum
from stdgmrf.layers import (
    SpatialLayerParams,
    TemporalLayerParams,
    spatial_apply,
    spatial_coef_grad,
    spatial_forward,
    spatial_logdet,
    spatial_logdet_coef,
    spatial_transpose,
    temporal_apply,
    temporal_apply_transpose,
    temporal_coef_grad,
    temporal_forward,
    temporal_stencil,
    temporal_transpose,
)

from conftest import TEMPORAL_RANGES, random_graph


def dense_spatial(a, alpha, beta, gamma):
    d = a.sum(axis=1)
    return alpha * np.diag(d**gamma) + beta * np.diag(d ** (gamma - 1)) @ a


# ---------------------------------------------------------------- spatial

def test_spatial_identity(lattice3, rng):
    h = rng.normal(size=9)
    assert np.array_equal(spatial_apply(lattice3, SpatialLayerParams(1, 0, 0), h), h)


def test_spatial_pure_adjacency_on_ones(lattice3):
    out = spatial_apply(lattice3, SpatialLayerParams(0, 1, 1), np.ones(9))
    assert np.allclose(out, 4.0)


def test_spatial_matches_dense(lattice3, rng):
    h = rng.normal(size=9)
    expected = (2.5 * 4 * np.eye(9) - lattice3.dense_adjacency()) @ h
    assert np.allclose(spatial_apply(lattice3, SpatialLayerParams(2.5, -1, 1), h), expected, atol=1e-12)


def test_spatial_bias_added(lattice3, rng):
    h = rng.normal(size=9)
    p = SpatialLayerParams(1.3, 0.4, 0.7)
    pb = SpatialLayerParams(1.3, 0.4, 0.7, bias=0.25)
    assert np.allclose(spatial_apply(lattice3, pb, h) - spatial_apply(lattice3, p, h), 0.25)


def test_spatial_needs_positive_degree():
    g = load_graph([(0, 1, 1.0)])
    object.__setattr__(g, "degrees", np.array([1.0, 0.0]))
    with pytest.raises(UnsupportedGraph):
        spatial_apply(g, SpatialLayerParams(1, 0, 1), np.ones(2))


def test_logdet_identity(lattice3):
    assert spatial_logdet(lattice3, SpatialLayerParams(1, 0, 0)) == 0.0


def test_logdet_matches_slogdet(lattice3):
    ref = np.linalg.slogdet(dense_spatial(lattice3.dense_adjacency(), 2.5, -1, 1))[1]
    assert abs(spatial_logdet(lattice3, SpatialLayerParams(2.5, -1, 1)) - ref) < 1e-8


def test_logdet_singular(lattice3):
    with pytest.raises(SingularLayer):
        spatial_logdet(lattice3, SpatialLayerParams(1, -1, 1))


def test_logdet_needs_spectrum():
    with pytest.raises(UnsupportedGraph):
        spatial_logdet(build_periodic_lattice(3), SpatialLayerParams(1, 0, 1))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_logdet_random_graphs(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, int(rng.integers(2, 10)), extra=4)
    alpha = rng.uniform(0.5, 3) * rng.choice([-1, 1])
    beta = alpha * rng.uniform(-0.9, 0.9)
    gamma = rng.uniform(0, 2)
    ref = np.linalg.slogdet(dense_spatial(g.dense_adjacency(), alpha, beta, gamma))[1]
    assert abs(spatial_logdet(g, SpatialLayerParams(alpha, beta, gamma)) - ref) < 1e-8


def test_spatial_transpose_adjoint(rng):
    g = random_graph(rng, 7)
    c = np.array([[1.2, 0.3, 0.6], [0.8, -0.5, 1.4]])
    x, y = rng.normal(size=(2, 7)), rng.normal(size=(2, 7))
    lhs = np.sum(spatial_forward(g, c, x) * y)
    rhs = np.sum(x * spatial_transpose(g, c, y))
    assert abs(lhs - rhs) < 1e-12


def test_spatial_coef_grad_fd(rng):
    g = random_graph(rng, 6)
    c = np.array([[1.2, 0.3, 0.6], [0.8, -0.5, 1.4]])
    x, gy = rng.normal(size=(2, 6)), rng.normal(size=(2, 6))
    an = spatial_coef_grad(g, c, x, gy)
    eps = 1e-6
    for idx in np.ndindex(c.shape):
        cp, cm = c.copy(), c.copy()
        cp[idx] += eps
        cm[idx] -= eps
        fd = (np.sum(gy * spatial_forward(g, cp, x)) - np.sum(gy * spatial_forward(g, cm, x))) / (2 * eps)
        assert abs(fd - an[idx]) < 1e-7


def test_logdet_coef_grad_fd(lattice3):
    c = np.array([[2.0, -0.7, 0.8], [1.5, 0.4, 1.2]])
    _, grad = spatial_logdet_coef(lattice3, c, with_grad=True)
    eps = 1e-6
    for idx in np.ndindex(c.shape):
        cp, cm = c.copy(), c.copy()
        cp[idx] += eps
        cm[idx] -= eps
        fd = (spatial_logdet_coef(lattice3, cp)[idx[0]] - spatial_logdet_coef(lattice3, cm)[idx[0]]) / (2 * eps)
        assert abs(fd - grad[idx]) < 1e-6


# ---------------------------------------------------------------- temporal

def test_ar_unit_is_identity(lattice3, rng):
    x = rng.normal(size=9)
    assert np.array_equal(temporal_apply(lattice3, TemporalLayerParams.ar(1.0), x), x)


def test_diffusion_preserves_constants(lattice3):
    out = temporal_apply(lattice3, TemporalLayerParams.diffusion(1.0, 0.3), np.ones(9))
    assert np.allclose(out, 1.0, atol=1e-14)


def test_advection_diffusion_east_entry():
    g = build_periodic_lattice(5)
    layer = TemporalLayerParams.advection_diffusion(0.1, (-0.3, 0.3))
    e = np.zeros(25)
    e[13] = 1.0
    # entry (12, 13): node 13 is the east neighbour of 12
    assert abs(temporal_apply(g, layer, e)[12] - 0.16) < 1e-12


@pytest.mark.parametrize("side", [3, 5])
def test_advection_diffusion_preserves_constants(side):
    g = build_periodic_lattice(side)
    layer = TemporalLayerParams.advection_diffusion(0.2, (0.4, -0.1))
    assert np.allclose(temporal_apply(g, layer, np.ones(side * side)), 1.0, atol=1e-14)


def test_advection_diffusion_needs_normals():
    g = load_graph([(0, 1, 1.0), (1, 2, 1.0)])
    with pytest.raises(UnsupportedGraph):
        temporal_apply(g, TemporalLayerParams.advection_diffusion(0.1, (0, 0)), np.ones(3))


def test_directed_flow_reduces_to_diffusion(lattice3, rng):
    x = rng.normal(size=9)
    a = temporal_apply(lattice3, TemporalLayerParams.directed_flow(0.9, 0.2, 0.0), x)
    b = temporal_apply(lattice3, TemporalLayerParams.diffusion(0.9, 0.2), x)
    assert np.allclose(a, b, atol=1e-14)


def test_directed_flow_dense():
    g = load_graph([(0, 1, 1.0), (1, 2, 2.0), (2, 0, 0.5), (0, 2, 1.5)], directed=True)
    a = g.dense_adjacency()
    lam, om, ze = 0.8, 0.3, -0.2
    dense = lam * np.eye(3) + om * (a - np.diag(a.sum(1))) + ze * (a.T - np.diag(a.sum(0)))
    x = np.array([1.0, -2.0, 0.5])
    layer = TemporalLayerParams.directed_flow(lam, om, ze)
    assert np.allclose(temporal_apply(g, layer, x), dense @ x, atol=1e-14)
    assert np.allclose(temporal_apply_transpose(g, layer, x), dense.T @ x, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), variant=st.sampled_from(sorted(TEMPORAL_RANGES)))
def test_temporal_linear_and_adjoint(seed, variant):
    rng = np.random.default_rng(seed)
    g = build_periodic_lattice(4)
    coef = np.array([rng.uniform(lo, hi) for lo, hi in TEMPORAL_RANGES[variant]])
    x, y = rng.normal(size=(2, 1, 16))
    a, b = rng.normal(size=2)
    f = lambda v: temporal_forward(g, variant, coef, v)
    assert np.allclose(f(a * x + b * y), a * f(x) + b * f(y), atol=1e-12)
    assert abs(np.sum(f(x) * y) - np.sum(x * temporal_transpose(g, variant, coef, y))) < 1e-12


@pytest.mark.parametrize("variant", sorted(TEMPORAL_RANGES))
def test_temporal_coef_grad_fd(variant, rng):
    g = build_periodic_lattice(3)
    coef = np.array([[rng.uniform(lo, hi) for lo, hi in TEMPORAL_RANGES[variant]] for _ in range(2)])
    x, gy = rng.normal(size=(2, 2, 9))
    an = temporal_coef_grad(g, variant, coef, x, gy)
    eps = 1e-6
    for idx in np.ndindex(coef.shape):
        cp, cm = coef.copy(), coef.copy()
        cp[idx] += eps
        cm[idx] -= eps
        fd = (np.sum(gy * temporal_forward(g, variant, cp, x)) - np.sum(gy * temporal_forward(g, variant, cm, x))) / (
            2 * eps
        )
        assert abs(fd - an[idx]) < 1e-7


# ---------------------------------------------------------------- stencils

def test_stencil_single_ar():
    g = build_periodic_lattice(5)
    st_ = temporal_stencil(g, [TemporalLayerParams.ar(0.9)])
    assert st_ == {(0, 0): 0.9, (1, 0): 0.0, (-1, 0): 0.0, (0, 1): 0.0, (0, -1): 0.0}


def test_stencil_two_ar():
    g = build_periodic_lattice(5)
    st_ = temporal_stencil(g, [TemporalLayerParams.ar(0.9)] * 2)
    assert abs(st_[(0, 0)] - 0.81) < 1e-15
    assert all(v == 0.0 for k, v in st_.items() if k != (0, 0))
    assert len(st_) == 13


def test_stencil_advection_diffusion():
    g = build_periodic_lattice(5)
    st_ = temporal_stencil(g, [TemporalLayerParams.advection_diffusion(0.1, (-0.3, 0.3))])
    expected = {(0, 0): 0.96, (1, 0): 0.16, (-1, 0): -0.14, (0, 1): -0.14, (0, -1): 0.16}
    assert st_.keys() == expected.keys()
    for k, v in expected.items():
        assert abs(st_[k] - v) < 1e-12


def test_stencil_needs_lattice():
    g = precompute_spectrum(load_graph([(0, 1, 1.0)]))
    with pytest.raises(UnsupportedGraph):
        temporal_stencil(g, [TemporalLayerParams.ar(0.5)])
