import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnw import kernels
from dnw.engine import (NeuralGraph, TrainConfig, backward, edge_grads, forward, update_edges)
from dnw.errors import ContractError, NumericError
from dnw.graph import GraphSpec, edge_threshold, select_edges
from dnw.harness.data import gen_spirals
from dnw.training import FrozenPolicy, fit, train
from dnw.numerics import finite_diff
from oracles import _loss, fd_gradient_errors, min_normalized_variance, mlp_forward, random_graph_case


def chain_model():
    m = NeuralGraph.build(GraphSpec(blocks=[1, 1, 1], k=3, activation="identity", batchnorm=False), 1, 2)
    m.io.in_w[:] = 1.0
    m.io.in_b[:] = 0.0
    m.store.weights[0, 1], m.store.weights[1, 2], m.store.weights[0, 2] = 2.0, -1.0, 0.5
    return m


def test_forward_hand_example():
    m = chain_model()
    state, _ = forward(m, select_edges(m.store), np.ones((1, 1)))
    assert state.Z[1, 0] == 2.0
    assert state.I[2, 0] == -1.5
    assert state.Z[2, 0] == -1.5


def test_forward_zero_weights():
    m = NeuralGraph.build(GraphSpec(blocks=[2, 2, 2], k=8, activation="tanh", batchnorm=False), 2, 2)
    m.nodes.beta[2:4] = 0.3
    m.store.weights[:] = 0.0
    X = np.random.default_rng(0).normal(size=(2, 5))
    state, logits = forward(m, select_edges(m.store), X)
    assert np.allclose(state.Z[2:4], np.tanh(0.3))
    assert np.allclose(state.Z[4:6], 0.0)
    assert np.allclose(logits, m.io.out_b[:, None])


@pytest.mark.parametrize("batchnorm", [True, False])
def test_adjacent_complete_graph_is_an_mlp(batchnorm):
    sizes = [2, 4, 3, 2]
    m = NeuralGraph.build(GraphSpec(blocks=sizes, k=0, activation="tanh", batchnorm=batchnorm,
                                    candidates="adjacent", seed=5), 3, 2)
    m.store.k = m.topology.n_candidates
    r = np.random.default_rng(1)
    m.nodes.gamma[:] = r.uniform(0.5, 1.5, m.topology.n_nodes)
    m.nodes.beta[:] = r.uniform(-0.5, 0.5, m.topology.n_nodes)
    X = r.normal(size=(3, 7))
    _, logits = forward(m, select_edges(m.store), X)
    rng = m.topology.block_ranges
    Ws = [m.store.weights[rng[i].start:rng[i].stop, rng[i + 1].start:rng[i + 1].stop].T
          for i in range(len(sizes) - 1)]
    gam = [m.nodes.gamma[r_.start:r_.stop] for r_ in rng[1:-1]]
    bet = [m.nodes.beta[r_.start:r_.stop] for r_ in rng[1:-1]]
    ref = mlp_forward(Ws, m.io.in_w, m.io.in_b, m.io.out_w, m.io.out_b, gam, bet, np.tanh, X, batchnorm)
    assert np.max(np.abs(logits - ref)) < 1e-12


def test_forward_reads_only_real_edges():
    m, edges, X, y = random_graph_case(7)
    state, logits = forward(m, edges, X)
    assert state.edges_read == int(edges.sum())
    before = logits.copy()
    m.store.weights[m.store.candidates & ~edges] = 1e6
    _, after = forward(m, edges, X)
    assert np.array_equal(before, after)


def test_forward_errors():
    m = chain_model()
    with pytest.raises(ContractError):
        forward(m, np.ones((3, 3), dtype=bool), np.ones((1, 1)))
    with pytest.raises(NumericError):
        forward(m, select_edges(m.store), np.array([[np.nan]]))
    m.store.weights[0, 1] = 1e308
    m.io.in_w[:] = 1e10
    with pytest.raises(NumericError):
        forward(m, select_edges(m.store), np.ones((1, 1)))


def test_backward_edge_mismatch():
    m = chain_model()
    state, _ = forward(m, select_edges(m.store), np.ones((1, 2)))
    other = np.zeros((3, 3), dtype=bool)
    with pytest.raises(ContractError):
        backward(m, state, np.array([0, 1]), edges=other)
    with pytest.raises(ContractError):
        edge_grads(m, forward(m, select_edges(m.store), np.ones((1, 2)))[0])


def test_saturated_loss_gives_zero_input_gradient():
    m = chain_model()
    m.io.out_w[:] = np.array([[1.0], [-1.0]])
    state, _ = forward(m, select_edges(m.store), np.array([[-40.0 / 1.5]]))
    # logits (40, -40) with label 0
    backward(m, state, np.array([0]))
    assert np.all(np.abs(state.dI) < 1e-15)


def test_single_edge_gradient_matches_finite_difference():
    m = NeuralGraph.build(GraphSpec(blocks=[1, 1], k=1, activation="identity", batchnorm=False), 1, 2)
    X = np.array([[0.3, -1.2, 0.7]])
    y = np.array([0, 1, 1])
    errs = fd_gradient_errors(m, select_edges(m.store), X, y)
    assert max(errs.values()) < 1e-6


@pytest.mark.parametrize("seed", range(6))
def test_random_graph_gradients_match_finite_differences(seed):
    m, edges, X, y = random_graph_case(seed)
    errs = fd_gradient_errors(m, edges, X, y)
    assert max(errs.values()) < 1e-5, errs


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    m, edges, X, y = random_graph_case(100 + seed)
    sp, lp = forward(m, edges, X, backend="python")
    sc, lc = forward(m, edges, X, backend="cython")
    assert np.max(np.abs(lp - lc)) < 1e-12
    gp = backward(m, sp, y, backend="python")
    gc = backward(m, sc, y, backend="cython")
    assert np.max(np.abs(gp.dI - gc.dI)) < 1e-12
    assert np.max(np.abs(gp.gamma - gc.gamma)) < 1e-12
    assert np.max(np.abs(edge_grads(m, sp, "python") - edge_grads(m, sc, "cython"))) < 1e-12


def test_update_rule_arithmetic():
    m = NeuralGraph.build(GraphSpec(blocks=[1, 1], k=1, batchnorm=False), 1, 2)
    store = m.store
    store.weights[0, 1] = 0.2
    Z = np.array([[1.0, 0.0], [0.0, 0.0]])
    dI = np.array([[0.0, 0.0], [0.3, -0.1]])
    update_edges(store, None, TrainConfig.plain(lr=0.1), grad=Z @ dI.T)
    assert store.weights[0, 1] == pytest.approx(0.17, abs=1e-15)
    update_edges(store, None, TrainConfig.plain(lr=0.1), grad=np.zeros((2, 2)))
    assert store.weights[0, 1] == pytest.approx(0.17, abs=1e-15)


def test_update_rule_bitwise():
    m, edges, X, y = random_graph_case(21)
    state, _ = forward(m, edges, X)
    backward(m, state, y)
    W0 = m.store.weights.copy()
    lr = 0.05
    update_edges(m.store, state, TrainConfig.plain(lr=lr), model=m)
    Z, dI = state.Z, state.dI
    for u, v in zip(*np.nonzero(m.store.candidates)):
        acc = 0.0
        for b in range(Z.shape[1]):
            acc += Z[u, b] * dI[v, b]
        assert m.store.weights[u, v] == W0[u, v] - lr * acc
    assert np.array_equal(m.store.weights[~m.store.candidates], W0[~m.store.candidates])


def test_momentum_and_weight_decay():
    m = NeuralGraph.build(GraphSpec(blocks=[1, 1], k=1, batchnorm=False), 1, 2)
    s = m.store
    s.weights[0, 1] = 0.5
    cfg = TrainConfig(lr=0.1, momentum=0.9, weight_decay=0.01)
    g = np.zeros((2, 2))
    g[0, 1] = 0.2
    update_edges(s, None, cfg, grad=g)
    v1 = 0.2 + 0.01 * 0.5
    assert s.velocity[0, 1] == pytest.approx(v1)
    w1 = 0.5 - 0.1 * v1
    assert s.weights[0, 1] == pytest.approx(w1)
    update_edges(s, None, cfg, grad=g)
    v2 = 0.9 * v1 + 0.2 + 0.01 * w1
    assert s.weights[0, 1] == pytest.approx(w1 - 0.1 * v2)


def test_hallucinated_edge_with_aligned_gradient_enters():
    m, edges, X, y = random_graph_case(3)
    state, _ = forward(m, edges, X)
    backward(m, state, y)
    G = edge_grads(m, state)
    hal = np.argwhere(m.store.candidates & ~edges & (np.abs(G) > 1e-6))
    assert len(hal) and edges.any()
    u, v = hal[0]
    tau = edge_threshold(m.store, edges)
    lr = 2.0 * (tau + abs(m.store.weights[u, v])) / (100 * abs(G[u, v]))
    only = np.zeros_like(edges)
    only[u, v] = True
    entered = None
    for step in range(100):
        e = select_edges(m.store)
        if e[u, v]:
            entered = step
            break
        assert np.array_equal(e, edges)
        state, _ = forward(m, e, X)
        backward(m, state, y)
        assert np.array_equal(edge_grads(m, state), G)  # hallucinated: forward is unchanged
        update_edges(m.store, state, TrainConfig.plain(lr=lr), allowed=only, model=m)
    else:
        entered = 100 if select_edges(m.store)[u, v] else None
    assert entered is not None


def test_train_config_errors():
    for kw in ({"lr": 0.0}, {"momentum": 1.0}, {"weight_decay": -1.0}, {"epochs": -1},
               {"batch_size": 0}, {"schedule": "step"}):
        with pytest.raises(ContractError):
            TrainConfig(**kw)


def test_cosine_schedule():
    c = TrainConfig(lr=0.2, schedule="cosine")
    assert c.lr_at(0, 10) == pytest.approx(0.2)
    assert c.lr_at(5, 10) == pytest.approx(0.1)
    assert TrainConfig(lr=0.2).lr_at(5, 10) == 0.2


def small_model(seed=0, k=20):
    return NeuralGraph.build(GraphSpec(blocks=[3, 4, 4, 2], k=k, seed=seed), 2, 2)


def test_zero_epochs_leaves_model_at_init(spirals_small):
    m = small_model()
    init = m.copy()
    _, records = train(m, spirals_small, TrainConfig(epochs=0))
    assert len(records) == 1 and records[0].epoch == 0
    assert np.array_equal(m.store.weights, init.store.weights)
    assert np.array_equal(m.io.in_w, init.io.in_w)


def test_k_all_pairs_matches_complete_graph_training(spirals_small):
    k = small_model().topology.n_candidates
    a, b = small_model(k=k), small_model(k=k)
    cfg = TrainConfig(epochs=2, batch_size=16, seed=2)
    train(a, spirals_small, cfg)
    fit(b, spirals_small, cfg, policy=FrozenPolicy(b.store.candidates))
    assert np.array_equal(a.store.weights, b.store.weights)
    assert np.array_equal(a.nodes.gamma, b.nodes.gamma)


@given(st.integers(0, 10**6), st.integers(0, 30))
@settings(max_examples=15, deadline=None)
def test_edge_count_conserved(seed, k):
    data = gen_spirals(20, 2, 0.1, seed=seed % 7)
    m = small_model(seed, k)
    counts = []
    train(m, data, TrainConfig(epochs=1, batch_size=8, seed=seed, lr=0.5),
          on_step=lambda it, model, edges: counts.append(int(select_edges(model.store).sum())))
    assert counts and set(counts) == {k}


def test_training_is_deterministic(spirals_small):
    cfg = TrainConfig(epochs=2, batch_size=16, seed=4)
    _, ra = train(small_model(1), spirals_small, cfg)
    _, rb = train(small_model(1), spirals_small, cfg)
    assert [r.to_dict() for r in ra] == [r.to_dict() for r in rb]


def test_records_report_k_active_edges(spirals_small):
    _, recs = train(small_model(2, k=15), spirals_small, TrainConfig(epochs=2, batch_size=16))
    assert all(r.active_edges == 15 == r.k for r in recs)


def test_zero_variance_normalized_input_gradient_converges():
    # a hidden node with no real in-edges has constant input; under batch norm its
    # curvature scale is sqrt(1e-5), so the central difference converges like h**2
    m, e, X, y = random_graph_case(1014)
    assert min_normalized_variance(m, e, X) == 0.0
    state, _ = forward(m, e, X)
    backward(m, state, y)
    G = edge_grads(m, state)
    v = int(np.flatnonzero((m.nodes.kind == 1) & (state.var == 0))[0])
    u = int(np.flatnonzero(m.store.candidates[:, v] & ~e[:, v] & (np.abs(G[:, v]) > 1e-3))[0])
    errs = []
    for h in (1e-4, 1e-5, 1e-6, 1e-7):
        fd = finite_diff(lambda t: _loss(m, e, X, y, {v: t[0] * state.Z[u]}), np.zeros(1), h)[0]
        errs.append(abs(fd - G[u, v]) / abs(G[u, v]))
    assert all(a / b > 50 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-6
