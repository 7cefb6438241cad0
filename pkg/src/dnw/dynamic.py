"""Discrete- and continuous-time neural graphs.

State is an (N, B) matrix. The weighted adjacency A has A[v, u] = w_uv for
real edges, so one step sends information along the edges with ``A @ Z``:

    discrete:    Z(l+1) = f(A Z(l), l)
    continuous:  dZ/dt  = f(A Z(t), t)

Inputs enter only at time 0 (``Z_v(0) = g(X)`` on input nodes, 0 elsewhere).
Gradients are exact reverse accumulation through the unrolled steps or
through every RK4 stage; the edge signal is the time sum of <Z_u, dL/dI_v>.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import nodeops
from .engine import Grads, IoMaps, sgd_momentum, update_params
from .errors import ContractError, NumericError
from .graph import HIDDEN, GraphSpec, build_graph, seed_streams
from .numerics import softmax_ce
from .training import DNWPolicy, fit


def adjacency(weights, edges):
    """A[v, u] = w_uv on real edges, 0 elsewhere."""
    return np.where(edges, weights, 0.0).T.copy()


def step_discrete(Z, A, node_fn, ell):
    """One synchronous step Z(l+1) = f(A Z(l), l)."""
    out = node_fn(A @ Z, ell)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite state after step {ell}")
    return out


def embed_mlp(W_list):
    """Adjacency of the dynamic graph that runs an MLP, one layer per step.

    ``W_list[i]`` maps layer i to layer i+1 (shape (d_{i+1}, d_i), x_{i+1} =
    W_i x_i). The result G satisfies G @ xhat_i = xhat_{i+1} for stacked
    one-layer-occupied states, and G**(len(W_list) + 1) == 0.
    """
    if not W_list:
        raise ContractError("need at least one layer matrix")
    W_list = [np.asarray(W, dtype=np.float64) for W in W_list]
    dims = [W_list[0].shape[1]]
    for i, W in enumerate(W_list):
        if W.ndim != 2 or W.shape[1] != dims[-1]:
            raise ContractError(f"layer {i} expects input dim {dims[-1]}, got shape {W.shape}")
        dims.append(W.shape[0])
    offs = np.concatenate([[0], np.cumsum(dims)])
    G = np.zeros((offs[-1], offs[-1]))
    for i, W in enumerate(W_list):
        G[offs[i + 1]:offs[i + 2], offs[i]:offs[i + 1]] = W
    return G


def stack_state(parts, dims):
    """Stacked state with the given blocks filled (others zero)."""
    offs = np.concatenate([[0], np.cumsum(dims)])
    x = np.zeros(offs[-1])
    for i, p in parts.items():
        x[offs[i]:offs[i + 1]] = p
    return x


def rk4(rhs, z0, t0, t1, h):
    """Classical fixed-step RK4. Returns the final state and the list of (t, z)."""
    if not h > 0 or not t1 > t0:
        raise ContractError("need h > 0 and t1 > t0")
    n = int(round((t1 - t0) / h))
    if n < 1 or abs(n * h - (t1 - t0)) > 1e-9 * max(1.0, abs(t1 - t0)):
        raise ContractError(f"step {h} does not divide [{t0}, {t1}]")
    z = np.array(z0, dtype=np.float64, copy=True)
    traj = [(t0, z.copy())]
    for i in range(n):
        t = t0 + i * h
        k1 = rhs(z, t)
        k2 = rhs(z + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(z + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(z + h * k3, t + h)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite state at t={t + h:.6g}")
        traj.append((t0 + (i + 1) * h, z.copy()))
    return z, traj


def integrate(state0, adjacency_matrix, node_fn, t0, t1, h):
    """RK4 solution of dZ/dt = f(A Z, t)."""
    A = adjacency_matrix
    return rk4(lambda z, t: node_fn(A @ z, t), state0, t0, t1, h)


@dataclass
class _Eval:
    """Cache of one node-function evaluation f(A Y)."""

    Y: np.ndarray
    out: np.ndarray
    cache: nodeops.NodeCache
    step: int


class DynamicGraph:
    """A neural graph whose node states evolve in discrete or continuous time.

    Batch-norm statistics are kept per (step, node) in discrete mode;
    continuous mode uses the plain node op act(gamma * x + beta).
    """

    def __init__(self, topology, store, nodes, io, mode="discrete", steps=None, t1=1.0, h=0.25,
                 normalize=True):
        if mode not in ("discrete", "continuous"):
            raise ContractError(f"unknown dynamic mode {mode!r}")
        if mode == "discrete" and (steps is None or steps < 1):
            raise ContractError("discrete mode needs steps >= 1")
        if mode == "continuous" and normalize:
            raise ContractError("continuous mode does not support batch normalization")
        self.topology, self.store, self.nodes, self.io = topology, store, nodes, io
        self.mode, self.steps, self.t1, self.h = mode, steps, float(t1), float(h)
        self.normalize = bool(normalize) and mode == "discrete"
        n_t = steps if mode == "discrete" else 1
        self.run_mean = np.zeros((n_t, topology.n_nodes))
        self.run_var = np.ones((n_t, topology.n_nodes))

    @classmethod
    def build(cls, spec, n_features, n_classes, mode="discrete", steps=None, t1=1.0, h=0.25):
        if isinstance(spec, dict):
            spec = GraphSpec.from_dict(spec)
        topo, store, nodes = build_graph(spec)
        io = IoMaps.init(topo, n_features, n_classes, seed_streams(spec.seed, 2)[1])
        return cls(topo, store, nodes, io, mode, steps, t1, h, normalize=spec.batchnorm)

    def copy(self):
        other = DynamicGraph(self.topology, self.store.copy(), self.nodes.copy(), self.io.copy(),
                             self.mode, self.steps, self.t1, self.h, self.normalize)
        other.run_mean, other.run_var = self.run_mean.copy(), self.run_var.copy()
        return other

    def node_fn(self, I, step, train):
        nodes = self.nodes
        t = min(step, self.run_mean.shape[0] - 1)
        return nodeops.forward(I, nodes.gamma, nodes.beta, nodes.act, nodes.kind, self.normalize,
                               train, self.run_mean[t], self.run_var[t])


@dataclass
class DynamicState:
    X: np.ndarray
    Z0: np.ndarray
    ZT: np.ndarray
    evals: list
    A: np.ndarray
    edges: np.ndarray
    train: bool


def dynamic_forward(model, edges, X, train=True):
    topo, io = model.topology, model.io
    X = np.asarray(X, dtype=np.float64)
    N, B = topo.n_nodes, X.shape[1]
    ins = list(topo.input_nodes)
    Z = np.zeros((N, B))
    Z[ins] = io.in_w @ X + io.in_b[:, None]
    Z0 = Z.copy()
    A = adjacency(model.store.weights, edges)
    evals = []

    def F(Y, step, t=None):
        with np.errstate(over="ignore", invalid="ignore"):
            out, cache = model.node_fn(A @ Y, step, train)
        if not np.all(np.isfinite(out)):
            where = f"step {step}" if t is None else f"t={t:.6g}"
            raise NumericError(f"non-finite state at {where}")
        evals.append(_Eval(Y, out, cache, step))
        return out

    if model.mode == "discrete":
        for ell in range(model.steps):
            Z = F(Z, ell)
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            Z, _ = rk4(lambda z, t: F(z, 0, t), Z, 0.0, model.t1, model.h)
    outs = list(topo.output_nodes)
    with np.errstate(over="ignore", invalid="ignore"):
        logits = io.out_w @ Z[outs] + io.out_b[:, None]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    return DynamicState(X, Z0, Z, evals, A, np.asarray(edges, dtype=bool), train), logits


def dynamic_backward(model, state, dlogits):
    """Gradients of all parameters and the time-summed edge signal for every candidate."""
    topo, io = model.topology, model.io
    N = topo.n_nodes
    outs, ins = list(topo.output_nodes), list(topo.input_nodes)
    AT = state.A.T
    G = np.zeros((N, N))
    dgamma, dbeta = np.zeros(N), np.zeros(N)
    nodes = model.nodes

    def back(ev, dout):
        dI, dg, db = nodeops.backward(dout, ev.out, ev.cache, nodes.gamma, nodes.act, nodes.kind,
                                      model.normalize, state.train)
        dgamma[:] += dg
        dbeta[:] += db
        G[:] += ev.Y @ dI.T
        return AT @ dI

    dZ = np.zeros_like(state.ZT)
    dZ[outs] = io.out_w.T @ dlogits
    evals = state.evals
    if model.mode == "discrete":
        for ev in reversed(evals):
            dZ = back(ev, dZ)
    else:
        h = model.h
        for s in range(len(evals) // 4 - 1, -1, -1):
            e1, e2, e3, e4 = evals[4 * s:4 * s + 4]
            dk1, dk2, dk3, dk4 = (h / 6.0) * dZ, (h / 3.0) * dZ, (h / 3.0) * dZ, (h / 6.0) * dZ
            dY = back(e4, dk4)
            dZ = dZ + dY
            dk3 = dk3 + h * dY
            dY = back(e3, dk3)
            dZ = dZ + dY
            dk2 = dk2 + 0.5 * h * dY
            dY = back(e2, dk2)
            dZ = dZ + dY
            dk1 = dk1 + 0.5 * h * dY
            dZ = dZ + back(e1, dk1)
    G[~model.store.candidates] = 0.0
    hidden = nodes.kind == HIDDEN
    grads = Grads(loss=0.0, in_w=dZ[ins] @ state.X.T, in_b=dZ[ins].sum(axis=1),
                  out_w=dlogits @ state.ZT[outs].T, out_b=dlogits.sum(axis=1),
                  gamma=np.where(hidden, dgamma, 0.0), beta=np.where(hidden, dbeta, 0.0), dI=None)
    return grads, G


def dynamic_loss_and_accuracy(model, edges, X, y, skip_dead=False):
    _, logits = dynamic_forward(model, edges, X, train=False)
    loss, _ = softmax_ce(logits, y)
    return loss, float(np.mean(np.argmax(logits, axis=0) == y))


def dynamic_step(model, policy, Xb, yb, config, lr):
    store = model.store
    edges = policy.edges(store)
    state, logits = dynamic_forward(model, edges, Xb, train=True)
    loss, dlogits = softmax_ce(logits, yb)
    grads, G = dynamic_backward(model, state, dlogits)
    grads.loss = loss
    if model.normalize:
        rows = model.nodes.kind == HIDDEN
        for ev in state.evals:
            nodeops.update_running(model.run_mean[ev.step], model.run_var[ev.step],
                                   ev.cache.mean, ev.cache.var, rows)
    update_params(model, grads, config, lr)
    where = store.candidates
    allowed = policy.allowed(store, edges)
    if allowed is not None:
        where = where & allowed
    extra = policy.extra_grad(store)
    if extra is not None:
        G = G + extra
    sgd_momentum(store.weights, store.velocity, G, lr, config.momentum, config.weight_decay, where)
    if allowed is not None:
        store.velocity[~where] = 0.0
    return edges


def train_dynamic(model, data, config, policy=None, method=None, **kw):
    """DNW-Train on a dynamic graph, with BPTT or backprop through RK4 (in place)."""
    policy = DNWPolicy() if policy is None else policy
    if method is None:
        method = f"dynamic_{model.mode}" if policy.name == "dnw" else f"dynamic_{model.mode}_{policy.name}"
    records = fit(model, data, config, policy=policy, step=dynamic_step, method=method,
                  scorer=dynamic_loss_and_accuracy, **kw)
    return model, records


def steps_for(total_time, h):
    return int(math.floor(total_time / h + 0.5))
