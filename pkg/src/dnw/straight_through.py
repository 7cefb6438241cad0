"""DNW as a straight-through estimator over masked weights.

Forward uses h(w) = w * 1{|w| >= tau} block by block with dense matrix
products; backward treats h as the identity, so dL/dw_uv = <Z_u, dL/dI_v> for
every candidate. This is a separate code path from the node-by-node engine and
must follow the same weight trajectory.
"""

import numpy as np

from . import nodeops
from .engine import Grads, sgd_momentum, update_params
from .errors import NumericError
from .graph import HIDDEN
from .numerics import softmax_ce
from .training import DNWPolicy, fit


def st_mask(store):
    """Mask and threshold tau with exactly k pairs at |w| >= tau.

    Pairs strictly above tau are kept; the remaining slots go to pairs equal to
    tau in ascending lexicographic order.
    """
    k = store.k
    cand = store.candidates
    mask = np.zeros_like(cand)
    if k == 0:
        return mask, np.inf
    mags = np.abs(store.weights)
    vals = mags[cand]
    tau = float(np.partition(vals, vals.size - k)[vals.size - k])
    mask = cand & (mags > tau)
    need = k - int(mask.sum())
    ties = np.flatnonzero(cand & (mags == tau))[:need]
    mask.flat[ties] = True
    return mask, tau


class STPolicy(DNWPolicy):
    name = "dnw_st"

    def __init__(self):
        self.tau = None

    def edges(self, store):
        mask, self.tau = st_mask(store)
        return mask


def st_forward(model, mask, X, train=True):
    topo, nodes, io = model.topology, model.nodes, model.io
    hW = np.where(mask, model.store.weights, 0.0)
    N, B = topo.n_nodes, X.shape[1]
    Z = np.zeros((N, B))
    ins = slice(topo.input_nodes.start, topo.input_nodes.stop)
    Z[ins] = io.in_w @ X + io.in_b[:, None]
    caches = []
    for r in topo.block_ranges[1:]:
        s = slice(r.start, r.stop)
        I_j = hW[:r.start, s].T @ Z[:r.start]
        Z[s], cache = nodeops.forward(I_j, nodes.gamma[s], nodes.beta[s], nodes.act[s], nodes.kind[s],
                                      model.normalize, train, nodes.run_mean[s], nodes.run_var[s])
        caches.append(cache)
    outs = slice(topo.output_nodes.start, topo.output_nodes.stop)
    logits = io.out_w @ Z[outs] + io.out_b[:, None]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    return hW, Z, caches, logits


def st_backward(model, hW, Z, caches, X, dlogits, train=True):
    """Parameter gradients and the straight-through weight gradient."""
    topo, nodes, io = model.topology, model.nodes, model.io
    N = topo.n_nodes
    dZ = np.zeros_like(Z)
    outs = slice(topo.output_nodes.start, topo.output_nodes.stop)
    ins = slice(topo.input_nodes.start, topo.input_nodes.stop)
    dZ[outs] = io.out_w.T @ dlogits
    dI = np.zeros_like(Z)
    GW = np.zeros((N, N))
    dgamma, dbeta = np.zeros(N), np.zeros(N)
    for r, cache in zip(reversed(topo.block_ranges[1:]), reversed(caches)):
        s = slice(r.start, r.stop)
        dI[s], dgamma[s], dbeta[s] = nodeops.backward(dZ[s], Z[s], cache, nodes.gamma[s], nodes.act[s],
                                                      nodes.kind[s], model.normalize, train)
        dZ[:r.start] += hW[:r.start, s] @ dI[s]
        GW[:r.start, s] = Z[:r.start] @ dI[s].T
    GW[~model.store.candidates] = 0.0
    dI[ins] = dZ[ins]
    grads = Grads(loss=0.0, in_w=dZ[ins] @ X.T, in_b=dZ[ins].sum(axis=1),
                  out_w=dlogits @ Z[outs].T, out_b=dlogits.sum(axis=1),
                  gamma=dgamma, beta=dbeta, dI=dI)
    return grads, GW


def st_step(model, policy, Xb, yb, config, lr):
    store = model.store
    mask = policy.edges(store)
    hW, Z, caches, logits = st_forward(model, mask, Xb, train=True)
    loss, dlogits = softmax_ce(logits, yb)
    grads, GW = st_backward(model, hW, Z, caches, Xb, dlogits)
    grads.loss = loss
    if model.normalize:
        rows = model.nodes.kind == HIDDEN
        mean = np.zeros(model.topology.n_nodes)
        var = np.zeros(model.topology.n_nodes)
        for r, c in zip(model.topology.block_ranges[1:], caches):
            mean[r.start:r.stop], var[r.start:r.stop] = c.mean, c.var
        nodeops.update_running(model.nodes.run_mean, model.nodes.run_var, mean, var, rows)
    update_params(model, grads, config, lr)
    sgd_momentum(store.weights, store.velocity, GW, lr, config.momentum, config.weight_decay,
                 store.candidates)
    return mask


def st_train(model, data, config, policy=None, **kw):
    """DNW-Train implemented with straight-through masked weights (in place)."""
    policy = STPolicy() if policy is None else policy
    records = fit(model, data, config, policy=policy, step=st_step, method="dnw_st", **kw)
    return model, records
