"""DNW-Train and the shared minibatch loop.

Each iteration: sample a minibatch, choose the real edges, forward over them,
backprop, SGD on node/io parameters, then update the candidate edge weights.
What counts as "real" and which pairs may move is decided by an edge policy;
DNW re-selects the top-k every iteration and moves every candidate.
"""

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .engine import (backward, edge_grads, forward, loss_and_accuracy, update_edges,
                     update_params, update_running_stats)
from .errors import ContractError, NumericError
from .graph import dead_nodes, seed_streams, select_edges


@dataclass
class MetricsRecord:
    epoch: int
    method: str
    seed: int
    train_loss: float
    train_acc: float
    test_acc: float
    active_edges: int
    k: int
    live_nodes: int
    wall_ms: float = None

    def to_dict(self):
        return asdict(self)


class DNWPolicy:
    """Top-k by magnitude every iteration; all candidates receive the update."""

    name = "dnw"

    def edges(self, store):
        return select_edges(store)

    def allowed(self, store, edges):
        return None

    def extra_grad(self, store):
        return None

    def end_epoch(self, store, epoch, epochs):
        pass


class FrozenPolicy(DNWPolicy):
    """A fixed edge set; only its own weights train."""

    name = "frozen"

    def __init__(self, mask):
        self.mask = np.asarray(mask, dtype=bool).copy()

    def edges(self, store):
        return self.mask

    def allowed(self, store, edges):
        return self.mask


class NoUpdatePolicy(DNWPolicy):
    """Top-k every iteration but hallucinated edges are never updated."""

    name = "no_update_rule"

    def allowed(self, store, edges):
        return edges


class L1AnnealPolicy(DNWPolicy):
    """Start complete and prune permanently by magnitude down to k, with an L1 term.

    After epoch t of T the survivor count is round(full - (full - k) * t / T),
    T = ``anneal_epochs``.
    """

    name = "l1_anneal"

    def __init__(self, store, l1=1e-4, anneal_epochs=None):
        self.alive = store.candidates.copy()
        self.full = int(self.alive.sum())
        self.k = store.k
        self.l1 = l1
        self.anneal_epochs = anneal_epochs

    def target(self, epoch, epochs):
        T = epochs if self.anneal_epochs is None else self.anneal_epochs
        if T <= 0:
            return self.k
        frac = min(epoch, T) / T
        return int(math.floor(self.full - (self.full - self.k) * frac + 0.5))

    def edges(self, store):
        return self.alive

    def allowed(self, store, edges):
        return self.alive

    def extra_grad(self, store):
        return self.l1 * np.sign(store.weights) * self.alive

    def end_epoch(self, store, epoch, epochs):
        target = self.target(epoch, epochs)
        n_alive = int(self.alive.sum())
        if target < self.k:
            raise ContractError("anneal schedule prunes below k")
        if target >= n_alive:
            return
        keep = select_edges(_masked_store(store, self.alive), target)
        pruned = self.alive & ~keep
        self.alive = keep
        store.weights[pruned] = 0.0
        store.velocity[pruned] = 0.0


class _masked_store:
    """Read-only view of a store restricted to a subset of its candidates."""

    def __init__(self, store, mask):
        self.weights = store.weights
        self.candidates = mask
        self.k = int(mask.sum())


def explicit_step(model, policy, Xb, yb, config, lr):
    """One DNW-Train iteration with the node-by-node engine. Returns the real edges."""
    store = model.store
    edges = policy.edges(store)
    state, _ = forward(model, edges, Xb, train=True)
    grads = backward(model, state, yb)
    update_running_stats(model, state)
    update_params(model, grads, config, lr)
    G = edge_grads(model, state)
    update_edges(store, state, config, lr=lr, allowed=policy.allowed(store, edges),
                 grad=G, extra=policy.extra_grad(store))
    return edges


def evaluate(model, data, edges, epoch, method, seed, skip_dead=False, scorer=loss_and_accuracy):
    tr_loss, tr_acc = scorer(model, edges, data.X_train, data.y_train, skip_dead=skip_dead)
    _, te_acc = scorer(model, edges, data.X_test, data.y_test, skip_dead=skip_dead)
    live = model.topology.n_nodes - len(dead_nodes(model.topology, edges))
    return MetricsRecord(epoch=epoch, method=method, seed=seed, train_loss=tr_loss,
                         train_acc=tr_acc, test_acc=te_acc, active_edges=int(edges.sum()),
                         k=int(model.store.k), live_nodes=live)


def fit(model, data, config, policy=None, step=explicit_step, method=None, on_step=None,
        skip_dead=False, record_time=False, scorer=loss_and_accuracy):
    """Run the minibatch loop; returns one MetricsRecord per epoch (epoch 0 = initial).

    ``step(model, policy, Xb, yb, config, lr)`` performs one iteration and
    returns the real edges it used; ``scorer`` evaluates (loss, accuracy).
    """
    policy = DNWPolicy() if policy is None else policy
    method = policy.name if method is None else method
    if len(data.train_idx) == 0:
        raise ContractError("empty training set")
    batch_rng = seed_streams(config.seed, 3)[2]
    t0 = time.perf_counter()

    def record(epoch):
        try:
            rec = evaluate(model, data, policy.edges(model.store), epoch, method, config.seed,
                           skip_dead, scorer)
        except NumericError as e:
            raise NumericError(f"evaluation after epoch {epoch}: {e}") from e
        if record_time:
            rec.wall_ms = round((time.perf_counter() - t0) * 1000.0, 3)
        return rec

    records = [record(0)]
    n = len(data.train_idx)
    B = config.batch_size
    total = config.epochs * math.ceil(n / B)
    it = 0
    for epoch in range(1, config.epochs + 1):
        perm = batch_rng.permutation(n)
        for start in range(0, n, B):
            idx = data.train_idx[perm[start:start + B]]
            lr = config.lr_at(it, total)
            try:
                edges = step(model, policy, data.features[:, idx], data.labels[idx], config, lr)
            except NumericError as e:
                raise NumericError(f"iteration {it}: {e}") from e
            if on_step is not None:
                on_step(it, model, edges)
            it += 1
        policy.end_epoch(model.store, epoch, config.epochs)
        records.append(record(epoch))
    return records


def train(model, data, config, **kw):
    """DNW-Train: jointly learn the k-edge wiring and the parameters (in place)."""
    records = fit(model, data, config, policy=DNWPolicy(), **kw)
    return model, records
