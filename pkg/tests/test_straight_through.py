import numpy as np

from dnw.engine import NeuralGraph, TrainConfig
from dnw.graph import GraphSpec, edge_threshold, select_edges
from dnw.harness.data import gen_spirals
from dnw.straight_through import STPolicy, st_mask, st_train
from dnw.training import train


def twin(spec):
    return NeuralGraph.build(spec, 2, 2), NeuralGraph.build(spec, 2, 2)


def test_single_step_two_node_graph():
    spec = GraphSpec(blocks=[1, 1], k=1, activation="identity", batchnorm=False, seed=3)
    a, b = twin(spec)
    data = gen_spirals(4, 2, 0.0, seed=0, test_fraction=0.25)
    cfg = TrainConfig.plain(lr=0.1, epochs=1, batch_size=8)
    w0 = a.store.weights[0, 1]
    train(a, data, cfg)
    st_train(b, data, cfg)
    assert a.store.weights[0, 1] != w0
    assert a.store.weights[0, 1] == b.store.weights[0, 1]


def test_st_mask_equals_selection_and_threshold():
    for seed in range(20):
        m = NeuralGraph.build(GraphSpec(blocks=[2, 3, 3, 2], k=seed, seed=seed), 2, 2)
        if seed % 3 == 0:
            m.store.weights = np.round(m.store.weights, 1)  # ties
        mask, tau = st_mask(m.store)
        e = select_edges(m.store)
        assert np.array_equal(mask, e)
        assert tau == edge_threshold(m.store, e)


def test_equivalence_over_steps_with_momentum():
    spec = GraphSpec(blocks=[2, 4, 4, 2], k=14, seed=8)
    a, b = twin(spec)
    data = gen_spirals(40, 2, 0.1, seed=1)
    cfg = TrainConfig(lr=0.1, epochs=2, batch_size=16, seed=5)
    taus = []

    class Recording(STPolicy):
        def edges(self, store):
            mask = super().edges(store)
            taus.append((self.tau, edge_threshold(store, select_edges(store))))
            return mask

    train(a, data, cfg)
    st_train(b, data, cfg, policy=Recording())
    assert np.max(np.abs(a.store.weights - b.store.weights)) < 1e-9
    assert taus and all(t1 == t2 for t1, t2 in taus)
