"""Experiment orchestration: single runs, paired multi-seed comparisons, edge budgets."""

import json
import os
import statistics
import tempfile

from .. import baselines
from ..dynamic import DynamicGraph, train_dynamic
from ..engine import NeuralGraph, TrainConfig
from ..errors import ConfigError, ContractError
from ..graph import edge_budget, edge_list, select_edges
from ..sparse import RandomMaskPolicy, SparseMLP, train_sparse
from ..straight_through import st_train
from ..training import FrozenPolicy, NoUpdatePolicy, train
from .data import gen_spirals, load_csv

COMPARE_BASELINES = {
    "dnw": baselines.BASELINES,
    "dnw_st": baselines.BASELINES,
    "dynamic_discrete": ("random_graph", "no_update_rule"),
    "dynamic_continuous": ("random_graph", "no_update_rule"),
    "sparse": ("random_mask",),
}


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temp file in the same directory and a rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_jsonl(records):
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def load_dataset(cfg):
    d = cfg.data
    seed = cfg.seed if d.seed is None else d.seed
    if d.kind == "spirals":
        return gen_spirals(d.n_per_class, d.classes, d.noise_sd, seed=seed, test_fraction=d.test_fraction)
    return load_csv(d.path, test_fraction=d.test_fraction, seed=seed)


def _graph_checkpoint(model):
    topo, store, nodes, io = model.topology, model.store, model.nodes, model.io
    pairs = topo.candidate_pairs()
    out = {
        "topology": topo.to_dict(),
        "k": int(store.k),
        "candidate_weights": [float(store.weights[u, v]) for u, v in pairs],
        "gamma": nodes.gamma.tolist(),
        "beta": nodes.beta.tolist(),
        "io": {p: getattr(io, p).tolist() for p in io.PARAMS},
    }
    if isinstance(model, DynamicGraph):
        out.update(mode=model.mode, steps=model.steps, t1=model.t1, h=model.h,
                   run_mean=model.run_mean.tolist(), run_var=model.run_var.tolist())
    else:
        out.update(run_mean=nodes.run_mean.tolist(), run_var=nodes.run_var.tolist())
    return out


def _sparse_checkpoint(model, masks):
    return {"layers": [{"weight": layer.weight.tolist(), "bias": layer.bias.tolist(),
                        "keep_fraction": layer.keep_fraction, "mask": m.tolist()}
                       for layer, m in zip(model.layers, masks)],
            "bn": [{k: v.tolist() for k, v in d.items() if not k.startswith("vel")} for d in model.bn]}


def _build_graph_model(cfg, data):
    spec = cfg.graph_spec()
    if cfg.method.startswith("dynamic_"):
        dyn = cfg.dynamic
        mode = cfg.method.split("_", 1)[1]
        return DynamicGraph.build(spec, data.n_features, data.n_classes, mode=mode,
                                  steps=dyn.steps, t1=dyn.t1, h=dyn.h)
    return NeuralGraph.build(spec, data.n_features, data.n_classes)


def run_method(cfg, data=None, baseline=None, record_time=False):
    """Train ``cfg.method`` (or ``baseline`` on the same model and data).

    Returns (records, checkpoint dict). ``baseline`` names a comparison method
    valid for ``cfg.method`` (see COMPARE_BASELINES).
    """
    data = load_dataset(cfg) if data is None else data
    tc, kw = cfg.train, {"record_time": record_time}
    method = cfg.method
    if method.startswith("baseline:"):
        method, baseline = "dnw", method.split(":", 1)[1]

    if method == "sparse":
        sp = cfg.sparse
        model = SparseMLP.build(sp.layers, sp.keep_fraction, seed=cfg.seed,
                                dense_first_layer=sp.dense_first_layer, activation=sp.activation,
                                batchnorm=sp.batchnorm)
        if baseline not in (None, "random_mask"):
            raise ContractError(f"baseline {baseline!r} does not apply to sparse training")
        policy = RandomMaskPolicy(model, cfg.seed) if baseline else None
        run = train_sparse(model, data, tc, policy=policy, record_time=record_time)
        masks = policy.masks(model) if policy else model.masks()
        return run.records, _sparse_checkpoint(model, masks)

    model = _build_graph_model(cfg, data)
    dynamic = isinstance(model, DynamicGraph)
    edges = None  # final real edge set when it is not the top-k of the store
    if baseline is None:
        if dynamic:
            model, records = train_dynamic(model, data, tc, **kw)
        elif method == "dnw_st":
            model, records = st_train(model, data, tc, **kw)
        else:
            model, records = train(model, data, tc, **kw)
    elif baseline == "random_graph":
        edges = baselines.random_graph(model.store, model.store.k, cfg.seed)
        if dynamic:
            model, records = train_dynamic(model, data, tc, policy=FrozenPolicy(edges),
                                           method="random_graph", **kw)
        else:
            model, records = baselines.train_random_graph(model, data, tc, seed=cfg.seed, **kw)
    elif baseline == "no_update_rule":
        if dynamic:
            model, records = train_dynamic(model, data, tc, policy=NoUpdatePolicy(),
                                           method="no_update_rule", **kw)
        else:
            model, records = baselines.train_no_update_rule(model, data, tc, **kw)
    elif dynamic:
        raise ContractError(f"baseline {baseline!r} is not available for dynamic graphs")
    elif baseline == "l1_anneal":
        b = cfg.baseline
        model, records, edges = baselines.l1_anneal(model, data, tc, l1=b.l1,
                                                    anneal_epochs=b.anneal_epochs, **kw)
    elif baseline in ("one_shot_prune_reinit", "one_shot_prune_finetune"):
        mode = baseline.rsplit("_", 1)[1]
        k = model.store.k
        full = baselines.train_full(model, data, tc, **kw)
        lr = cfg.baseline.retrain_lr
        if lr is None:
            lr = tc.lr if mode == "reinit" else 0.1 * tc.lr
        rc = TrainConfig(**{**tc.__dict__, "lr": lr})
        model, pruned, edges = baselines.one_shot_prune(full, k, mode, data, rc, **kw)
        records = full.records + pruned
    else:
        raise ContractError(f"unknown baseline {baseline!r}")
    if edges is None:
        edges = select_edges(model.store)
    ckpt = _graph_checkpoint(model)
    ckpt["edges"] = [list(e) for e in edge_list(edges)]
    return records, ckpt


def cmd_run(cfg, output=None, record_time=False):
    """Run one experiment; writes metrics.jsonl and checkpoint.json under the output directory."""
    out = cfg.output if output is None else output
    records, ckpt = run_method(cfg, record_time=record_time)
    ckpt = {"config": cfg.to_dict(), "method": records[-1].method, "state": ckpt}
    atomic_write(os.path.join(out, "metrics.jsonl"), metrics_jsonl(records))
    atomic_write(os.path.join(out, "checkpoint.json"), json.dumps(ckpt, sort_keys=True))
    return records


def summarize(values):
    vals = [float(v) for v in values]
    sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return {"mean": statistics.fmean(vals), "sd": sd, "per_seed": vals}


def cmd_compare(cfg, baseline, n_seeds, output=None):
    """Paired runs: seed s = cfg.seed + i for both the method and the baseline.

    Both arms of a pair share the dataset realization and the initial model.
    """
    allowed = COMPARE_BASELINES.get(cfg.method)
    if allowed is None:
        raise ConfigError("method", f"compare needs a primary method, not {cfg.method}")
    if baseline not in allowed:
        raise ConfigError("baseline", f"{baseline!r} is not comparable with {cfg.method}; "
                          f"choose from {', '.join(allowed)}")
    if n_seeds < 1:
        raise ConfigError("seeds", "need at least one seed")
    out = cfg.output if output is None else output
    ours, theirs = [], []
    for i in range(n_seeds):
        sc = cfg.with_seed(cfg.seed + i)
        data = load_dataset(sc)
        rec_a, _ = run_method(sc, data)
        rec_b, _ = run_method(sc, data, baseline=baseline)
        atomic_write(os.path.join(out, f"{cfg.method}_seed{sc.seed}.jsonl"), metrics_jsonl(rec_a))
        atomic_write(os.path.join(out, f"{baseline}_seed{sc.seed}.jsonl"), metrics_jsonl(rec_b))
        ours.append(rec_a[-1].test_acc)
        theirs.append(rec_b[-1].test_acc)
    diffs = [a - b for a, b in zip(ours, theirs)]
    summary = {"method": cfg.method, "baseline": baseline,
               "seeds": [cfg.seed + i for i in range(n_seeds)],
               "test_acc": {cfg.method: summarize(ours), baseline: summarize(theirs)},
               "paired_diff": summarize(diffs), "n_positive": sum(d > 0 for d in diffs)}
    atomic_write(os.path.join(out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True))
    return summary


def budget_from_table(table):
    """Per-stage edge budgets of a channel plan.

    ``table`` = {"width_mult": d, "stages": [{"name": ..., "layers": [[c_in, c_out], ...],
    "scale_out": bool}]}; a stage may give "c_in"/"c_out" instead of "layers".
    """
    if not isinstance(table, dict):
        raise ConfigError("$", "budget table must be a JSON object")
    d = table.get("width_mult", 1.0)
    stages = table.get("stages", [])
    if not isinstance(stages, list):
        raise ConfigError("stages", "must be a list")
    rows, total = [], 0
    for n, st in enumerate(stages):
        path = f"stages[{n}]"
        if "layers" in st:
            layers = st["layers"]
        elif "c_in" in st and "c_out" in st:
            layers = [[st["c_in"], st["c_out"]]]
        else:
            raise ConfigError(path, "needs 'layers' or 'c_in' and 'c_out'")
        scale_out = st.get("scale_out", True)
        try:
            edges = sum(edge_budget(a, b, st.get("width_mult", d), scale_out) for a, b in layers)
        except (ContractError, TypeError, ValueError) as e:
            raise ConfigError(path, str(e)) from None
        rows.append({"name": st.get("name", f"stage{n}"), "edges": edges})
        total += edges
    return {"width_mult": d, "stages": rows, "total": total}


def cmd_budget(table):
    return budget_from_table(table)

