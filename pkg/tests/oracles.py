"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np

from dnw.engine import NeuralGraph, backward, forward
from dnw.graph import GraphSpec, select_edges
from dnw.numerics import finite_diff, softmax_ce

H = 1e-5
# Central differences at h = 1e-5 carry rounding noise near eps * |L| / h ~ 1e-11, so
# relative error is measured against max(|a|, |b|, FLOOR).
FLOOR = 1e-5
# Below this batch variance of a normalized node's input, the truncation error of the
# central difference, of order h**2 / (var + 1e-5), exceeds the 1e-5 tolerance.
MIN_BN_VAR = 1e-3


def rel_err(a, b, floor=FLOOR):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor), initial=0.0))


def random_graph_case(seed, max_nodes=20, max_batch=8, n_features=3, n_classes=3):
    """A random small graph, a real edge set of random size and a minibatch."""
    r = np.random.default_rng(seed)
    while True:
        blocks = r.integers(1, 5, size=r.integers(2, 6)).tolist()
        if sum(blocks) <= max_nodes:
            break
    spec = GraphSpec(blocks=blocks, k=0, activation=str(r.choice(["relu", "tanh", "identity"])),
                     seed=int(r.integers(2**31)), batchnorm=bool(r.integers(2)))
    model = NeuralGraph.build(spec, n_features, n_classes)
    n_cand = model.topology.n_candidates
    model.store.k = int(r.integers(0, n_cand + 1))
    hidden = model.nodes.kind == 1
    model.nodes.gamma[hidden] = r.uniform(0.5, 1.5, hidden.sum())
    model.nodes.beta[hidden] = r.uniform(-0.3, 0.3, hidden.sum())
    model.store.weights[model.store.candidates] *= 2.0
    B = int(r.integers(2, max_batch + 1))
    X = r.normal(size=(n_features, B))
    y = r.integers(0, n_classes, B)
    return model, select_edges(model.store), X, y


def min_normalized_variance(model, edges, X):
    """Smallest batch variance of any hidden node input (inf without batch norm)."""
    if not model.normalize:
        return np.inf
    state, _ = forward(model, edges, X, train=True)
    hidden = model.nodes.kind == 1
    return float(state.var[hidden].min()) if hidden.any() else np.inf


def fd_cases(n, seed=0, min_var=MIN_BN_VAR):
    """``n`` random cases on which the h = 1e-5 oracle is valid, and the number redrawn."""
    cases, redrawn, s = [], 0, seed
    while len(cases) < n:
        case = random_graph_case(s)
        s += 1
        if min_normalized_variance(*case[:3]) < min_var:
            redrawn += 1
            continue
        cases.append(case)
    return cases, redrawn


def _loss(model, edges, X, y, shift=None):
    _, logits = forward(model, edges, X, train=True, shift=shift)
    return softmax_ce(logits, y)[0]


def fd_gradient_errors(model, edges, X, y):
    """Max relative error of every analytic gradient group against central differences."""
    state, _ = forward(model, edges, X, train=True)
    g = backward(model, state, y)
    Z, dI = state.Z, state.dI
    out = {}

    def param_fd(arr, mask=None):
        def f(vals):
            saved = arr.copy()
            arr[...] = vals
            try:
                return _loss(model, edges, X, y)
            finally:
                arr[...] = saved
        fd = finite_diff(f, arr.copy(), H)
        return fd if mask is None else fd[mask]

    hidden = model.nodes.kind == 1
    for name in ("in_w", "in_b", "out_w", "out_b"):
        out[name] = rel_err(getattr(g, name), param_fd(getattr(model.io, name)))
    out["gamma"] = rel_err(g.gamma[hidden], param_fd(model.nodes.gamma, hidden))
    out["beta"] = rel_err(g.beta[hidden], param_fd(model.nodes.beta, hidden))

    # dL/dI_v: shift the node input I_v by a batch vector
    N, B = Z.shape
    fd_dI = np.zeros((N, B))
    non_input = [v for v in range(N) if model.nodes.kind[v] != 0]
    for v in non_input:
        fd_dI[v] = finite_diff(lambda s: _loss(model, edges, X, y, {v: s}), np.zeros(B), H)
    out["dI"] = rel_err(dI[non_input], fd_dI[non_input])

    # edge signal <Z_u, dL/dI_v>: for real pairs it is dL/dw_uv; for hallucinated
    # pairs it is the derivative of adding eps * Z_u to I_v
    cand = model.store.candidates
    G = Z @ dI.T
    fd_G = np.zeros_like(G)
    W = model.store.weights
    for u, v in zip(*np.nonzero(cand)):
        if edges[u, v]:
            def f(w, u=u, v=v):
                saved = W[u, v]
                W[u, v] = w[0]
                try:
                    return _loss(model, edges, X, y)
                finally:
                    W[u, v] = saved
            fd_G[u, v] = finite_diff(f, np.array([W[u, v]]), H)[0]
        else:
            fd_G[u, v] = finite_diff(lambda e, u=u, v=v: _loss(model, edges, X, y, {v: e[0] * Z[u]}),
                                     np.zeros(1), H)[0]
    out["edges"] = rel_err(G[cand], fd_G[cand])
    return out


def mlp_forward(Ws, in_w, in_b, out_w, out_b, gammas, betas, act, X, batchnorm, eps=1e-5):
    """Plain layer-by-layer MLP with train-mode batch norm; hidden layers only get the node op."""
    h = in_w @ X + in_b[:, None]
    for i, W in enumerate(Ws):
        a = W @ h
        if i == len(Ws) - 1:
            h = a
            break
        if batchnorm:
            mu = a.mean(axis=1, keepdims=True)
            var = ((a - mu) ** 2).mean(axis=1, keepdims=True)
            a = (a - mu) / np.sqrt(var + eps)
        y = gammas[i][:, None] * a + betas[i][:, None]
        h = act(y)
    return out_w @ h + out_b[:, None]


ACCEPTANCE_LINES = []


def verdict(n, title, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
