import numpy as np
import pytest

from stdgmrf.graph import build_periodic_lattice, load_graph, precompute_spectrum
from stdgmrf.prior import ModelParams

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def lattice3():
    return precompute_spectrum(build_periodic_lattice(3))


@pytest.fixture
def ring4():
    """Square 0-1-2-3 with unit normals, spectrum attached."""
    return precompute_spectrum(square_ring())


def square_ring():
    return load_graph([(0, 1, 1.0, 1, 0), (1, 2, 1.0, 0, 1), (2, 3, 1.0, -1, 0), (3, 0, 1.0, 0, -1)])


def scalar_graph():
    """One node with a unit self-loop, so D = A = [[1]]."""
    return precompute_spectrum(load_graph([(0, 0, 1.0)]))


def random_graph(rng, n, extra=3):
    """Connected weighted undirected graph: a path plus random chords."""
    recs = [(i, i + 1, float(rng.uniform(0.5, 2.0))) for i in range(n - 1)]
    seen = {(i, i + 1) for i in range(n - 1)}
    for _ in range(extra):
        a, b = sorted(rng.choice(n, 2, replace=False).tolist())
        if (a, b) not in seen:
            seen.add((a, b))
            recs.append((a, b, float(rng.uniform(0.5, 2.0))))
    return precompute_spectrum(load_graph(recs))


TEMPORAL_RANGES = {
    "ar": [(-0.9, 0.9)],
    "diffusion": [(0.5, 1.0), (-0.2, 0.2)],
    "directed_flow": [(0.5, 1.0), (-0.2, 0.2), (-0.2, 0.2)],
    "advection_diffusion": [(0.05, 0.3), (-0.5, 0.5), (-0.5, 0.5)],
}


def random_model(rng, n_steps, variant="advection_diffusion", L_spatial=2, L_temporal=2,
                 markov_order=1, time_invariant=False, biases=True, alpha=(1.5, 2.5), gamma=(0.5, 1.5)):
    m = ModelParams.init(n_steps, L_spatial=L_spatial, L_temporal=L_temporal, markov_order=markov_order,
                         temporal_variant=variant, time_invariant=time_invariant, rng=rng)
    m.spatial[..., 0] = rng.uniform(*alpha, m.spatial.shape[:2])
    m.spatial[..., 1] = m.spatial[..., 0] * rng.uniform(-0.6, 0.6, m.spatial.shape[:2])
    m.spatial[..., 2] = rng.uniform(*gamma, m.spatial.shape[:2])
    for c, (lo, hi) in enumerate(TEMPORAL_RANGES[variant]):
        m.temporal[..., c] = rng.uniform(lo, hi, m.temporal.shape[:-1])
    if biases:
        m.bias_f[:] = rng.normal(size=m.bias_f.shape)
        m.bias_s[:] = rng.normal(size=m.bias_s.shape)
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
