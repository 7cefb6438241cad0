"""Forward and backward passes over the real edges, and the edge update rule.

The forward pass reads only real edges. The backward pass propagates through
real edges only, but dL/dI_v is produced for every node, so each candidate
pair (u, v), hallucinated or not, gets the update signal <Z_u, dL/dI_v>.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels, nodeops
from .errors import ContractError, NumericError
from .graph import HIDDEN, GraphSpec, build_graph, dead_nodes, seed_streams
from .numerics import softmax_ce


@dataclass
class IoMaps:
    """Affine input map g (features -> input nodes) and output map h (output nodes -> logits)."""

    in_w: np.ndarray
    in_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    vel: dict = field(default_factory=dict)

    PARAMS = ("in_w", "in_b", "out_w", "out_b")

    @classmethod
    def init(cls, topology, n_features, n_classes, rng):
        n_in = len(topology.input_nodes)
        n_out = len(topology.output_nodes)
        s_in = np.sqrt(1.0 / n_features)
        s_out = np.sqrt(1.0 / n_out)
        in_w = rng.uniform_array(n_in * n_features, -s_in, s_in).reshape(n_in, n_features)
        out_w = rng.uniform_array(n_classes * n_out, -s_out, s_out).reshape(n_classes, n_out)
        return cls(in_w, np.zeros(n_in), out_w, np.zeros(n_classes))

    def velocity(self, name):
        if name not in self.vel:
            self.vel[name] = np.zeros_like(getattr(self, name))
        return self.vel[name]

    def copy(self):
        return IoMaps(*(getattr(self, p).copy() for p in self.PARAMS),
                      vel={k: v.copy() for k, v in self.vel.items()})


@dataclass
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    schedule: str = "constant"
    decay_io: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0 and batch_size >= 1")
        if self.schedule not in ("constant", "cosine"):
            raise ContractError(f"unknown schedule {self.schedule!r}")

    @classmethod
    def plain(cls, **kw):
        """The bare update rule: no momentum, no weight decay."""
        return cls(momentum=0.0, weight_decay=0.0, **kw)

    def lr_at(self, it, total):
        if self.schedule == "cosine" and total > 0:
            return 0.5 * self.lr * (1.0 + np.cos(np.pi * it / total))
        return self.lr


class NeuralGraph:
    """A static neural graph with its edge store, node parameters and io maps."""

    def __init__(self, topology, store, nodes, io, normalize=True):
        self.topology = topology
        self.store = store
        self.nodes = nodes
        self.io = io
        self.normalize = bool(normalize)

    @classmethod
    def build(cls, spec, n_features, n_classes):
        if isinstance(spec, dict):
            spec = GraphSpec.from_dict(spec)
        topo, store, nodes = build_graph(spec)
        io_rng = seed_streams(spec.seed, 2)[1]
        io = IoMaps.init(topo, n_features, n_classes, io_rng)
        return cls(topo, store, nodes, io, normalize=spec.batchnorm)

    def copy(self):
        return NeuralGraph(self.topology, self.store.copy(), self.nodes.copy(), self.io.copy(), self.normalize)


@dataclass
class BatchState:
    """Per-node batch activations from one forward pass (arrays are (N, B))."""

    X: np.ndarray
    Z: np.ndarray
    I: np.ndarray
    xhat: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    inv_std: np.ndarray
    edges: np.ndarray
    skip: np.ndarray
    train: bool
    edges_read: int
    dI: np.ndarray = None
    dZ: np.ndarray = None


@dataclass
class Grads:
    loss: float
    in_w: np.ndarray
    in_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    dI: np.ndarray


def parents_csc(edges):
    """CSC parent lists of a boolean edge matrix, parents ascending per node."""
    n = edges.shape[0]
    vs, us = np.nonzero(edges.T)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(vs, minlength=n), out=indptr[1:])
    return indptr, np.ascontiguousarray(us, dtype=np.int64)


def _check_edges(model, edges):
    edges = np.asarray(edges, dtype=bool)
    if edges.shape != model.store.weights.shape:
        raise ContractError("edge set shape does not match the graph")
    if np.any(edges & ~model.store.candidates):
        raise ContractError("edge set contains non-candidate pairs")
    return edges


def forward(model, edges, X, train=True, skip_dead=False, shift=None, backend=None):
    """Evaluate the graph on a batch ``X`` of shape (F, B).

    ``shift`` optionally maps node -> (B,) vector added to that node's input
    I_v (used by gradient and swap checks). With ``skip_dead`` the node op of
    every dead node is skipped and its state is 0.
    """
    kern = kernels if backend is None else kernels.backend_module(backend)
    topo = model.topology
    if not topo.is_acyclic:
        raise ContractError("static forward needs an acyclic candidate set")
    edges = _check_edges(model, edges)
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite input batch")
    N, B = topo.n_nodes, X.shape[1]
    io, nodes = model.io, model.nodes
    Z = np.zeros((N, B))
    ins = list(topo.input_nodes)
    Z[ins] = io.in_w @ X + io.in_b[:, None]
    I = np.zeros((N, B))
    I[ins] = Z[ins]
    xhat = np.zeros((N, B))
    mean, var, inv_std = np.zeros(N), np.zeros(N), np.ones(N)
    skip = np.zeros(N, dtype=np.uint8)
    if skip_dead:
        skip[list(dead_nodes(topo, edges))] = 1
    sh = np.zeros((N, B))
    if shift:
        for v, vec in shift.items():
            sh[v] += vec
        if any(v in topo.input_nodes for v in shift):
            raise ContractError("input nodes have no input to shift")
    indptr, indices = parents_csc(edges)
    reads, bad = kern.forward_nodes(
        model.store.weights, indptr, indices, Z, I, xhat, mean, var, inv_std,
        nodes.gamma, nodes.beta, nodes.act, nodes.kind, skip,
        model.normalize, bool(train), nodes.run_mean, nodes.run_var, sh, bool(shift), nodeops.EPS,
    )
    if bad >= 0:
        raise NumericError(f"non-finite state at node {bad}")
    logits = io.out_w @ Z[list(topo.output_nodes)] + io.out_b[:, None]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    state = BatchState(X, Z, I, xhat, mean, var, inv_std, edges, skip, bool(train), int(reads))
    return state, logits


def backward_from_logits(model, state, dlogits, loss=0.0, edges=None, backend=None):
    """Reverse sweep given dL/dlogits; fills ``state.dI`` for every node."""
    kern = kernels if backend is None else kernels.backend_module(backend)
    if edges is not None and not np.array_equal(np.asarray(edges, dtype=bool), state.edges):
        raise ContractError("backward called with an edge set different from the forward pass")
    topo, io, nodes = model.topology, model.io, model.nodes
    N, B = state.Z.shape
    outs = list(topo.output_nodes)
    ins = list(topo.input_nodes)
    dZ = np.zeros((N, B))
    dZ[outs] = io.out_w.T @ dlogits
    dI = np.zeros((N, B))
    dgamma, dbeta = np.zeros(N), np.zeros(N)
    indptr, indices = parents_csc(state.edges)
    kern.backward_nodes(
        model.store.weights, indptr, indices, state.Z, state.xhat, state.inv_std,
        nodes.gamma, nodes.act, nodes.kind, state.skip, model.normalize, state.train,
        dZ, dI, dgamma, dbeta,
    )
    state.dI, state.dZ = dI, dZ
    return Grads(
        loss=loss,
        in_w=dZ[ins] @ state.X.T,
        in_b=dZ[ins].sum(axis=1),
        out_w=dlogits @ state.Z[outs].T,
        out_b=dlogits.sum(axis=1),
        gamma=dgamma,
        beta=dbeta,
        dI=dI,
    )


def backward(model, state, labels, edges=None, backend=None):
    """Softmax cross-entropy backward. Returns :class:`Grads`."""
    logits = model.io.out_w @ state.Z[list(model.topology.output_nodes)] + model.io.out_b[:, None]
    loss, dlogits = softmax_ce(logits, labels)
    return backward_from_logits(model, state, dlogits, loss, edges=edges, backend=backend)


def edge_grads(model, state, backend=None):
    """<Z_u, dL/dI_v> for every candidate pair (zero elsewhere)."""
    if state.dI is None:
        raise ContractError("backward has not populated dL/dI")
    kern = kernels if backend is None else kernels.backend_module(backend)
    G = np.zeros_like(model.store.weights)
    cand = np.ascontiguousarray(model.store.candidates, dtype=np.uint8)
    kern.edge_grad(np.ascontiguousarray(state.Z), np.ascontiguousarray(state.dI), cand, G)
    return G


def sgd_momentum(param, vel, grad, lr, momentum, weight_decay, where=None):
    """velocity <- mu*velocity + grad + wd*param; param <- param - lr*velocity (in place)."""
    g = grad + weight_decay * param if weight_decay else grad
    if where is None:
        vel *= momentum
        vel += g
        param -= lr * vel
    else:
        vel[where] = momentum * vel[where] + g[where]
        param[where] -= lr * vel[where]


def update_edges(store, state, config, lr=None, allowed=None, grad=None, model=None, extra=None):
    """Edge update for every candidate pair (or those in ``allowed``).

    raw gradient g = <Z_u, dL/dI_v> + wd * w_uv, then the momentum step. With
    momentum = weight decay = 0 this is w_uv <- w_uv - lr * <Z_u, dL/dI_v>.
    Pairs outside ``allowed`` keep their weight and have their velocity zeroed.
    """
    lr = config.lr if lr is None else lr
    if grad is None:
        if model is None:
            raise ContractError("update_edges needs the model or a precomputed gradient")
        grad = edge_grads(model, state)
    if extra is not None:
        grad = grad + extra
    where = store.candidates if allowed is None else (np.asarray(allowed, dtype=bool) & store.candidates)
    sgd_momentum(store.weights, store.velocity, grad, lr, config.momentum, config.weight_decay, where)
    if allowed is not None:
        store.velocity[~where] = 0.0


def update_params(model, grads, config, lr=None):
    """SGD with momentum on node scales/biases and the io maps."""
    lr = config.lr if lr is None else lr
    nodes = model.nodes
    hidden = nodes.kind == HIDDEN
    sgd_momentum(nodes.gamma, nodes.vel_gamma, grads.gamma, lr, config.momentum, 0.0, hidden)
    sgd_momentum(nodes.beta, nodes.vel_beta, grads.beta, lr, config.momentum, 0.0, hidden)
    wd_io = config.weight_decay if config.decay_io else 0.0
    for name in IoMaps.PARAMS:
        wd = wd_io if name.endswith("_w") else 0.0
        sgd_momentum(getattr(model.io, name), model.io.velocity(name), getattr(grads, name),
                     lr, config.momentum, wd)


def update_running_stats(model, state):
    if not (model.normalize and state.train):
        return
    rows = (model.nodes.kind == HIDDEN) & (state.skip == 0)
    nodeops.update_running(model.nodes.run_mean, model.nodes.run_var, state.mean, state.var, rows)


def loss_and_accuracy(model, edges, X, y, train=False, skip_dead=False):
    state, logits = forward(model, edges, X, train=train, skip_dead=skip_dead)
    loss, _ = softmax_ce(logits, y)
    acc = float(np.mean(np.argmax(logits, axis=0) == y))
    return loss, acc
