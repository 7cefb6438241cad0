"""Comparison methods for finding a k-edge subgraph."""

from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, ContractError
from .graph import select_edges
from .numerics import Rng
from .training import DNWPolicy, FrozenPolicy, L1AnnealPolicy, NoUpdatePolicy, fit

BASELINES = ("random_graph", "no_update_rule", "l1_anneal", "one_shot_prune_reinit",
             "one_shot_prune_finetune")


class _Scores:
    def __init__(self, weights, candidates, k):
        self.weights, self.candidates, self.k = weights, candidates, k


def random_graph(store, k, seed):
    """k edges of largest magnitude under i.i.d. Uniform(-1, 1) scores.

    The scores are drawn fresh from ``seed`` with one scale for every pair, so
    the result is a uniformly random k-subset of the candidates.
    """
    n_cand = int(store.candidates.sum())
    if not 0 <= k <= n_cand:
        raise BudgetError(f"k={k} outside [0, {n_cand}]")
    scores = np.zeros_like(store.weights)
    scores[store.candidates] = Rng(seed).uniform_array(n_cand, -1.0, 1.0)
    return select_edges(_Scores(scores, store.candidates, k))


def train_random_graph(model, data, config, seed=None, **kw):
    seed = config.seed if seed is None else seed
    mask = random_graph(model.store, model.store.k, seed)
    return model, fit(model, data, config, policy=FrozenPolicy(mask), method="random_graph", **kw)


def train_no_update_rule(model, data, config, **kw):
    return model, fit(model, data, config, policy=NoUpdatePolicy(), method="no_update_rule", **kw)


def l1_anneal(model, data, config, l1=1e-4, anneal_epochs=None, **kw):
    """Prune from the complete graph to k edges over ``anneal_epochs`` (default: all epochs)."""
    T = config.epochs if anneal_epochs is None else anneal_epochs
    if T > config.epochs:
        raise ContractError(f"anneal over {T} epochs cannot finish within {config.epochs}")
    if T == 0 and model.store.k != int(model.store.candidates.sum()):
        raise ContractError("zero anneal epochs require k = all candidate pairs")
    policy = L1AnnealPolicy(model.store, l1=l1, anneal_epochs=T)
    records = fit(model, data, config, policy=policy, method="l1_anneal", **kw)
    return model, records, policy.alive


@dataclass
class FullRun:
    """A complete-graph training run with its stored initialization."""

    init: object
    trained: object
    records: list


def train_full(model, data, config, **kw):
    """Train every candidate edge (k = all pairs) keeping a copy of the initial model."""
    init = model.copy()
    full = model.copy()
    full.store.k = int(full.store.candidates.sum())
    init.store.k = full.store.k
    records = fit(full, data, config, policy=DNWPolicy(), method="full", **kw)
    return FullRun(init=init, trained=full, records=records)


def one_shot_prune(run, k, mode, data, config, **kw):
    """Keep the top-k trained weights and retrain that fixed subgraph at ``config.lr``.

    ``reinit`` restores every parameter to the stored initialization,
    ``finetune`` continues from the trained values.
    """
    if run is None or run.init is None:
        raise ContractError("one-shot pruning needs a full run with stored initialization")
    if mode not in ("reinit", "finetune"):
        raise ContractError(f"unknown mode {mode!r}")
    mask = select_edges(run.trained.store, k)
    model = (run.init if mode == "reinit" else run.trained).copy()
    model.store.k = int(k)
    model.store.velocity[:] = 0.0
    model.store.weights[~mask] = 0.0
    model.nodes.vel_gamma[:] = 0.0
    model.nodes.vel_beta[:] = 0.0
    model.io.vel.clear()
    records = fit(model, data, config, policy=FrozenPolicy(mask),
                  method=f"one_shot_prune_{mode}", **kw)
    return model, records, mask
