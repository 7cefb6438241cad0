"""Sparse training of fully connected layers with per-layer top-k% masks.

Every iteration the mask of each layer is recomputed from the current weight
magnitudes. The forward pass uses the masked weights; the backward pass treats
the mask as the identity so every weight, kept or not, gets a dense gradient
and the SGD step. Biases and batch-norm parameters stay dense.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nodeops
from .errors import ContractError, NumericError
from .graph import HIDDEN, seed_streams
from .numerics import ACTIVATIONS, softmax_ce
from .training import MetricsRecord


def keep_count(n, fraction):
    """ceil(fraction * n), ignoring float noise such as 0.1 * 30 = 3.0000000000000004."""
    return min(n, int(math.ceil(fraction * n - 1e-9)))


def mask_topk_fraction(weights, fraction):
    """True for the ceil(fraction * n) largest |w|; ties go to the lower flat index."""
    if not 0 < fraction <= 1:
        raise ContractError(f"keep fraction must lie in (0, 1], got {fraction}")
    w = np.asarray(weights, dtype=np.float64)
    keep = keep_count(w.size, fraction)
    order = np.argsort(-np.abs(w).ravel(), kind="stable")
    mask = np.zeros(w.size, dtype=bool)
    mask[order[:keep]] = True
    return mask.reshape(w.shape)


@dataclass
class MaskedLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    keep_fraction: float
    vel_w: np.ndarray = None
    vel_b: np.ndarray = None

    def __post_init__(self):
        if not 0 < self.keep_fraction <= 1:
            raise ContractError(f"keep fraction must lie in (0, 1], got {self.keep_fraction}")
        if self.vel_w is None:
            self.vel_w = np.zeros_like(self.weight)
        if self.vel_b is None:
            self.vel_b = np.zeros_like(self.bias)

    def mask(self):
        return mask_topk_fraction(self.weight, self.keep_fraction)

    def copy(self):
        return MaskedLayer(self.weight.copy(), self.bias.copy(), self.keep_fraction,
                           self.vel_w.copy(), self.vel_b.copy())


class SparseMLP:
    """A stack of masked fully connected layers; hidden units use batch norm then act."""

    def __init__(self, layers, activation="relu", batchnorm=True):
        self.layers = layers
        self.act = ACTIVATIONS[activation]
        self.batchnorm = bool(batchnorm)
        self.bn = []
        for layer in layers[:-1]:
            n = layer.weight.shape[0]
            self.bn.append({"gamma": np.ones(n), "beta": np.zeros(n), "vel_gamma": np.zeros(n),
                            "vel_beta": np.zeros(n), "run_mean": np.zeros(n), "run_var": np.ones(n)})

    @classmethod
    def build(cls, sizes, keep_fraction, seed=0, dense_first_layer=False, activation="relu",
              batchnorm=True):
        """Uniform(+-sqrt(1/fan_in)) weights, zero biases."""
        if len(sizes) < 2:
            raise ContractError("need at least input and output sizes")
        rng = seed_streams(seed, 3)[0]
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            s = math.sqrt(1.0 / n_in)
            W = rng.uniform_array(n_out * n_in, -s, s).reshape(n_out, n_in)
            frac = 1.0 if (dense_first_layer and i == 0) else keep_fraction
            layers.append(MaskedLayer(W, np.zeros(n_out), frac))
        return cls(layers, activation, batchnorm)

    def copy(self):
        other = SparseMLP([layer.copy() for layer in self.layers], "relu", self.batchnorm)
        other.act = self.act
        other.bn = [{k: v.copy() for k, v in d.items()} for d in self.bn]
        return other

    def masks(self):
        return [layer.mask() for layer in self.layers]


class RandomMaskPolicy:
    """Frozen random masks of the same per-layer sizes; only kept weights train."""

    name = "sparse_random_mask"

    def __init__(self, model, seed):
        rng = seed_streams(seed, 4)[3]
        self.fixed = []
        for layer in model.layers:
            n = layer.weight.size
            perm = rng.permutation(n)
            m = np.zeros(n, dtype=bool)
            m[perm[:keep_count(n, layer.keep_fraction)]] = True
            self.fixed.append(m.reshape(layer.weight.shape))

    def masks(self, model):
        return self.fixed

    def trainable(self, masks):
        return masks


class TopKPolicy:
    name = "sparse"

    def masks(self, model):
        return model.masks()

    def trainable(self, masks):
        return None


def sparse_forward(model, masks, X, train=True):
    h = np.asarray(X, dtype=np.float64)
    acts = [h]
    caches = []
    L = len(model.layers)
    for i, (layer, m) in enumerate(zip(model.layers, masks)):
        pre = np.where(m, layer.weight, 0.0) @ h + layer.bias[:, None]
        if i == L - 1:
            h = pre
        else:
            bn = model.bn[i]
            n = pre.shape[0]
            h, cache = nodeops.forward(pre, bn["gamma"], bn["beta"], np.full(n, model.act, np.int8),
                                       np.full(n, HIDDEN, np.int8), model.batchnorm, train,
                                       bn["run_mean"], bn["run_var"])
            caches.append(cache)
        acts.append(h)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite logits")
    return acts, caches, h


def sparse_backward(model, masks, acts, caches, dlogits, train=True):
    """Dense straight-through gradients for every weight."""
    L = len(model.layers)
    gW, gb, ggamma, gbeta = [None] * L, [None] * L, [None] * (L - 1), [None] * (L - 1)
    d = dlogits
    for i in range(L - 1, -1, -1):
        layer = model.layers[i]
        gW[i] = d @ acts[i].T
        gb[i] = d.sum(axis=1)
        if i == 0:
            break
        d = np.where(masks[i], layer.weight, 0.0).T @ d
        bn = model.bn[i - 1]
        n = d.shape[0]
        d, ggamma[i - 1], gbeta[i - 1] = nodeops.backward(
            d, acts[i], caches[i - 1], bn["gamma"], np.full(n, model.act, np.int8),
            np.full(n, HIDDEN, np.int8), model.batchnorm, train)
    return gW, gb, ggamma, gbeta


def _sgd(param, vel, grad, lr, mu, wd, where=None):
    g = grad + wd * param if wd else grad
    if where is None:
        vel *= mu
        vel += g
        param -= lr * vel
    else:
        vel[where] = mu * vel[where] + g[where]
        param[where] -= lr * vel[where]
        vel[~where] = 0.0


def sparse_step(model, Xb, yb, config, lr=None, policy=None):
    """One iteration: recompute masks, masked forward, dense backward, dense SGD. Returns masks."""
    lr = config.lr if lr is None else lr
    policy = TopKPolicy() if policy is None else policy
    masks = policy.masks(model)
    acts, caches, logits = sparse_forward(model, masks, Xb, train=True)
    loss, dlogits = softmax_ce(logits, yb)
    gW, gb, ggamma, gbeta = sparse_backward(model, masks, acts, caches, dlogits)
    trainable = policy.trainable(masks)
    mu, wd = config.momentum, config.weight_decay
    for i, layer in enumerate(model.layers):
        _sgd(layer.weight, layer.vel_w, gW[i], lr, mu, wd, None if trainable is None else trainable[i])
        _sgd(layer.bias, layer.vel_b, gb[i], lr, mu, 0.0)
    for i, bn in enumerate(model.bn):
        _sgd(bn["gamma"], bn["vel_gamma"], ggamma[i], lr, mu, 0.0)
        _sgd(bn["beta"], bn["vel_beta"], gbeta[i], lr, mu, 0.0)
        if model.batchnorm:
            rows = np.ones(bn["gamma"].size, dtype=bool)
            nodeops.update_running(bn["run_mean"], bn["run_var"], caches[i].mean, caches[i].var, rows)
    return masks


def sparse_score(model, masks, X, y):
    _, _, logits = sparse_forward(model, masks, X, train=False)
    loss, _ = softmax_ce(logits, y)
    return loss, float(np.mean(np.argmax(logits, axis=0) == y))


@dataclass
class SparseRun:
    model: SparseMLP
    records: list
    active_per_step: list = field(default_factory=list)


def train_sparse(model, data, config, policy=None, record_time=False):
    """Minibatch training of a sparse MLP (in place); one record per epoch, epoch 0 first."""
    policy = TopKPolicy() if policy is None else policy
    if len(data.train_idx) == 0:
        raise ContractError("empty training set")
    batch_rng = seed_streams(config.seed, 3)[2]
    n_units = model.layers[0].weight.shape[1] + sum(layer.weight.shape[0] for layer in model.layers)
    t0 = time.perf_counter()
    run = SparseRun(model, [])

    def record(epoch):
        masks = policy.masks(model)
        try:
            tr_loss, tr_acc = sparse_score(model, masks, data.X_train, data.y_train)
            _, te_acc = sparse_score(model, masks, data.X_test, data.y_test)
        except NumericError as e:
            raise NumericError(f"evaluation after epoch {epoch}: {e}") from e
        active = int(sum(m.sum() for m in masks))
        rec = MetricsRecord(epoch=epoch, method=policy.name, seed=config.seed, train_loss=tr_loss,
                            train_acc=tr_acc, test_acc=te_acc, active_edges=active, k=active,
                            live_nodes=n_units)
        if record_time:
            rec.wall_ms = round((time.perf_counter() - t0) * 1000.0, 3)
        return rec

    run.records.append(record(0))
    n, B = len(data.train_idx), config.batch_size
    total = config.epochs * math.ceil(n / B)
    it = 0
    for epoch in range(1, config.epochs + 1):
        perm = batch_rng.permutation(n)
        for start in range(0, n, B):
            idx = data.train_idx[perm[start:start + B]]
            try:
                masks = sparse_step(model, data.features[:, idx], data.labels[idx], config,
                                    config.lr_at(it, total), policy)
            except NumericError as e:
                raise NumericError(f"iteration {it}: {e}") from e
            run.active_per_step.append([int(m.sum()) for m in masks])
            it += 1
        run.records.append(record(epoch))
    return run
