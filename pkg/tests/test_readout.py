import numpy as np
import pytest

import oracles
from ignn.numerics import ParameterStore, Tensor
from ignn.readout import Set2Set, create_head, output_head, set2set_readout, sum_readout
from ignn.verification import random_set2set


@pytest.mark.parametrize("seed", range(5))
def test_set2set_matches_transcription(seed):
    rng = np.random.default_rng(seed)
    d, steps = 3, int(rng.integers(1, 5))
    s2s = random_set2set(rng, d, steps)
    node_graph = np.sort(rng.integers(0, 3, size=9))
    node_graph[:3] = [0, 1, 2]
    node_graph.sort()
    x = rng.normal(size=(9, d))
    ref = oracles.set2set(x, node_graph, 3, {k: v.data for k, v in s2s.weights.items()}, steps)
    out = set2set_readout(s2s, Tensor(x), node_graph, 3)
    assert out.shape == (3, 2 * d)
    np.testing.assert_allclose(out.data, ref, rtol=0, atol=1e-12)


def test_set2set_attention_is_distribution_per_graph():
    rng = np.random.default_rng(0)
    s2s = random_set2set(rng, 4, 3)
    node_graph = np.array([0, 0, 0, 1, 1, 2])
    log = []
    set2set_readout(s2s, Tensor(rng.normal(size=(6, 4))), node_graph, 3, attention_log=log)
    assert len(log) == 3
    for a in log:
        assert (a >= 0).all()
        np.testing.assert_allclose(np.bincount(node_graph, weights=a), 1.0, atol=1e-15)


@pytest.mark.parametrize("readout", ("sum", "set2set"))
def test_readouts_are_permutation_invariant(readout):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(7, 3))
    s2s = random_set2set(rng, 3, 3)
    fn = (lambda z: sum_readout(Tensor(z), np.zeros(7, int), 1)) if readout == "sum" else (
        lambda z: set2set_readout(s2s, Tensor(z), np.zeros(7, int), 1))
    perm = rng.permutation(7)
    np.testing.assert_allclose(fn(x[perm]).data, fn(x).data, rtol=0, atol=1e-9)


def test_single_node_attention_reads_the_node():
    rng = np.random.default_rng(2)
    s2s = random_set2set(rng, 2, 2)
    x = rng.normal(size=(1, 2))
    out = set2set_readout(s2s, Tensor(x), np.zeros(1, int), 1).data
    np.testing.assert_allclose(out[0, 2:], x[0], atol=1e-15)


def test_zero_steps_rejected():
    s2s = Set2Set.create(ParameterStore(), 2, 0, seed=0)
    with pytest.raises(ValueError):
        set2set_readout(s2s, Tensor(np.zeros((2, 2))), np.zeros(2, int), 1)


def test_sum_readout():
    x = np.arange(8.0).reshape(4, 2)
    np.testing.assert_array_equal(sum_readout(Tensor(x), np.array([0, 1, 1, 0]), 2).data, [[6, 8], [6, 8]])


def test_head_shapes():
    store = ParameterStore()
    head = create_head(store, 6, 5, 2, seed=0)
    assert output_head(Tensor(np.ones((3, 6))), head).shape == (3, 2)
    assert store["head.layer0.weight"].shape == (6, 5)
