import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stdgmrf.datagen import (
    MaskConfig,
    SimConfig,
    SyntheticDataset,
    _gmrf_draw,
    build_adv_diff_transition,
    make_dataset,
    mask_and_observe,
    mask_nodes,
    noise_factor,
    simulate,
    true_ssm,
)
from stdgmrf.errors import InvalidMask, UnsupportedGraph
from stdgmrf.graph import build_periodic_lattice, load_graph


def dense_generator(side, D, v):
    n = side * side
    m = np.zeros((n, n))
    for r in range(side):
        for c in range(side):
            i = r * side + c
            m[i, i] = -4 * D
            for dr, dc in [(0, 1), (0, -1), (1, 0), (-1, 0)]:
                j = ((r + dr) % side) * side + (c + dc) % side
                m[i, j] += D - 0.5 * (dc * v[0] + dr * v[1])
    return m


def dense_transition(side, D, v, steps=4):
    m = dense_generator(side, D, v)
    step = np.eye(side * side) + m + m @ m / 2 + m @ m @ m / 6
    return np.linalg.matrix_power(step, steps)


def test_zero_dynamics_is_identity():
    g = build_periodic_lattice(4)
    f = build_adv_diff_transition(g, 0.0, (0.0, 0.0)).toarray()
    assert np.array_equal(f, np.eye(16))


@settings(max_examples=20, deadline=None)
@given(D=st.floats(0, 0.2), vx=st.floats(-1, 1), vy=st.floats(-1, 1), steps=st.integers(1, 4))
def test_transition_rows_sum_to_one(D, vx, vy, steps):
    g = build_periodic_lattice(4)
    f = build_adv_diff_transition(g, D, (vx, vy), steps)
    assert np.allclose(np.asarray(f.sum(axis=1)).ravel(), 1.0, atol=1e-12)


@pytest.mark.parametrize("side", [3, 5])
def test_transition_matches_dense_taylor(side):
    g = build_periodic_lattice(side)
    f = build_adv_diff_transition(g, 0.01, (-0.3, 0.3)).toarray()
    assert np.max(np.abs(f - dense_transition(side, 0.01, (-0.3, 0.3)))) < 1e-12


def test_transition_needs_lattice():
    g = load_graph([(0, 1, 1.0), (1, 2, 1.0)])
    with pytest.raises(UnsupportedGraph):
        build_adv_diff_transition(g, 0.01, (0, 0))


def test_simulate_deterministic():
    g = build_periodic_lattice(5)
    a = simulate(g, SimConfig(K=3, seed=4))
    b = simulate(g, SimConfig(K=3, seed=4))
    assert a.shape == (4, 25)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, simulate(g, SimConfig(K=3, seed=5)))


def test_simulate_without_dynamics_or_noise_is_constant():
    g = build_periodic_lattice(4)
    x = simulate(g, SimConfig(K=5, D_diff=0.0, v=(0.0, 0.0), noise_scale=0.0))
    assert np.array_equal(x, np.repeat(x[:1], 6, axis=0))


def test_noise_draw_precision():
    g = build_periodic_lattice(3)
    s = noise_factor(g, 10.0)
    rng = np.random.default_rng(0)
    n = 2000
    draws = np.stack([_gmrf_draw(s, rng) for _ in range(n)])
    sd = s.toarray()
    cov = np.linalg.inv(sd.T @ sd)
    emp = draws.T @ draws / n
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
    assert np.all(np.abs(emp - cov) < 5 * se)
    prec = np.linalg.inv(emp)
    ref = sd.T @ sd
    assert np.max(np.abs(prec - ref)) / np.max(np.abs(ref)) < 0.1


def test_true_ssm_matches_generator():
    g = build_periodic_lattice(3)
    cfg = SimConfig(K=2)
    ssm = true_ssm(g, cfg)
    assert len(ssm.F) == 2
    assert np.allclose(ssm.F[0], dense_transition(3, cfg.D_diff, cfg.v))
    a = g.dense_adjacency()
    s0 = (4 + cfg.delta) * np.eye(9) - a
    assert np.allclose(ssm.Q0, s0 @ s0)


# ---------------------------------------------------------------- masking

def test_mask_counts_side30():
    truth = np.zeros((21, 900))
    ds = mask_and_observe(truth, MaskConfig(w=9))
    assert ds.test_k.size == 810
    assert ds.obs_k.size == 21 * 900 - 810
    assert ds.meta["mask_start"] == 5


def test_mask_default_centred():
    assert mask_nodes(5, 1).tolist() == [12]
    assert mask_nodes(4, 2).tolist() == [5, 6, 9, 10]
    assert mask_nodes(4, 2, corner=(0, 2)).tolist() == [2, 3, 6, 7]


def test_mask_zero_width_observes_everything():
    truth = np.arange(24.0).reshape(6, 4)
    ds = mask_and_observe(truth, MaskConfig(w=0))
    assert ds.test_k.size == 0
    assert ds.obs_k.size == 24


def test_noise_free_observations_equal_truth():
    truth = np.random.default_rng(0).normal(size=(12, 16))
    ds = mask_and_observe(truth, MaskConfig(w=2, sigma=0.0))
    assert np.array_equal(ds.obs_value, truth[ds.obs_k, ds.obs_node])


@pytest.mark.parametrize(
    "cfg",
    [MaskConfig(w=5), MaskConfig(w=2, corner=(3, 0)), MaskConfig(w=2, mask_start=5, mask_len=10), MaskConfig(w=-1)],
)
def test_mask_out_of_range(cfg):
    with pytest.raises(InvalidMask):
        mask_and_observe(np.zeros((12, 16)), cfg)


def test_non_square_truth_rejected():
    with pytest.raises(InvalidMask):
        mask_and_observe(np.zeros((12, 15)), MaskConfig(w=1))


@settings(max_examples=20, deadline=None)
@given(side=st.integers(3, 8), data=st.data())
def test_roles_partition_coordinates(side, data):
    w = data.draw(st.integers(0, side))
    n_steps = data.draw(st.integers(1, 14))
    length = data.draw(st.integers(1, n_steps))
    ds = mask_and_observe(np.zeros((n_steps, side * side)), MaskConfig(w=w, mask_len=length, seed=1))
    test = ds.test_mask
    train, val = ds.role_mask("train"), ds.role_mask("val")
    assert not np.any(test & (train | val)) and not np.any(train & val)
    assert np.all(test | train | val)
    # masked coordinates never appear among the observations
    assert not np.any(test[ds.obs_k, ds.obs_node])
    assert np.sum(val) == round(0.1 * ds.obs_k.size)
    assert np.sum(test) == (w * w * length if w else 0)


def test_observations_by_role():
    ds = mask_and_observe(np.zeros((12, 16)), MaskConfig(w=2, sigma=0.1))
    tr = ds.observations(("train",))
    both = ds.observations(("train", "val"))
    assert len(tr) + np.sum(ds.obs_role == "val") == len(both) == ds.obs_k.size


def test_dataset_roundtrip(tmp_path):
    g = build_periodic_lattice(4)
    ds = make_dataset(g, SimConfig(K=11, seed=2), MaskConfig(w=2, seed=3))
    ds.save(tmp_path)
    for name in ["truth.csv", "obs.csv", "splits.csv", "meta.json"]:
        assert (tmp_path / name).exists()
    assert (tmp_path / "obs.csv").read_text().splitlines()[0] == "k,node,value,sigma"
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["sim_delta"] == 0.01 and meta["sim_seed"] == 2 and meta["mask_w"] == 2
    back = SyntheticDataset.load(tmp_path)
    assert np.array_equal(back.truth, ds.truth)
    assert np.array_equal(back.test_mask, ds.test_mask)
    assert np.array_equal(back.role_mask("val"), ds.role_mask("val"))
    a, b = back.observations(), ds.observations()
    order_a = np.lexsort((a.node, a.k))
    order_b = np.lexsort((b.node, b.k))
    assert np.array_equal(a.values[order_a], b.values[order_b])


def test_make_dataset_deterministic():
    g = build_periodic_lattice(4)
    a = make_dataset(g, SimConfig(K=11), MaskConfig(w=2))
    b = make_dataset(g, SimConfig(K=11), MaskConfig(w=2))
    assert np.array_equal(a.obs_value, b.obs_value)
    assert np.array_equal(a.obs_role, b.obs_role)
