"""Experiment configuration: parsing, validation with key paths, and serialization.

A config is a JSON object::

    {"method": "dnw", "seed": 0,
     "graph": {"blocks": [8, 8, 8, 8, 4], "k": 80},
     "train": {"epochs": 60, "lr": 0.1, "schedule": "cosine"},
     "data": {"kind": "spirals", "n_per_class": 500},
     "output": "runs/dnw"}

``to_dict`` emits every key with defaults filled in, so parse -> serialize ->
parse is the identity.
"""

import json
from dataclasses import asdict, dataclass, field, fields

from ..engine import TrainConfig
from ..errors import ConfigError, ContractError
from ..graph import ACTIVATIONS, CANDIDATE_KINDS

BASELINE_NAMES = ("random_graph", "no_update_rule", "l1_anneal", "one_shot_prune_reinit",
                  "one_shot_prune_finetune")
METHODS = ("dnw", "dnw_st", "dynamic_discrete", "dynamic_continuous", "sparse") + tuple(
    "baseline:" + b for b in BASELINE_NAMES)
GRAPH_METHODS = ("dnw", "dnw_st", "dynamic_discrete", "dynamic_continuous") + tuple(
    "baseline:" + b for b in BASELINE_NAMES)


@dataclass
class GraphSection:
    blocks: list
    k: int
    activation: str = "relu"
    batchnorm: bool = True
    candidates: str = "dag"


@dataclass
class SparseSection:
    layers: list
    keep_fraction: float
    dense_first_layer: bool = False
    activation: str = "relu"
    batchnorm: bool = True


@dataclass
class DynamicSection:
    steps: int = None
    t1: float = 1.0
    h: float = 0.25


@dataclass
class BaselineSection:
    l1: float = 1e-4
    anneal_epochs: int = None
    retrain_lr: float = None


@dataclass
class DataSection:
    kind: str = "spirals"
    n_per_class: int = 500
    classes: int = 2
    noise_sd: float = 0.1
    test_fraction: float = 0.2
    path: str = None
    seed: int = None  # None: use the run seed


@dataclass
class ExperimentConfig:
    method: str
    seed: int
    train: TrainConfig
    data: DataSection
    graph: GraphSection = None
    sparse: SparseSection = None
    dynamic: DynamicSection = None
    baseline: BaselineSection = field(default_factory=BaselineSection)
    output: str = "runs/out"

    def to_dict(self):
        d = {"method": self.method, "seed": self.seed, "output": self.output,
             "train": {k: v for k, v in asdict(self.train).items() if k != "seed"},
             "data": asdict(self.data), "baseline": asdict(self.baseline)}
        for name in ("graph", "sparse", "dynamic"):
            sec = getattr(self, name)
            if sec is not None:
                d[name] = asdict(sec)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_seed(self, seed):
        d = self.to_dict()
        d["seed"] = seed
        return parse_config(d)

    def graph_spec(self):
        g = self.graph
        return {"blocks": list(g.blocks), "k": g.k, "activation": g.activation, "seed": self.seed,
                "batchnorm": g.batchnorm, "candidates": g.candidates}


def _fail(path, msg):
    raise ConfigError(path, msg)


def _section(cls, raw, path, required=()):
    if not isinstance(raw, dict):
        _fail(path, "must be an object")
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            _fail(f"{path}.{key}", "unknown key")
    for key in required:
        if key not in raw:
            _fail(f"{path}.{key}", "required key missing")
    return cls(**raw)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check_type(value, check, path, what):
    if not check(value):
        _fail(path, f"must be {what}, got {value!r}")


def parse_config(raw):
    """Validate a config mapping; raises ConfigError naming the offending key path."""
    if not isinstance(raw, dict):
        _fail("$", "config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            _fail(key, "unknown key")
    for key in ("method", "seed"):
        if key not in raw:
            _fail(key, "required key missing")
    method = raw["method"]
    if method not in METHODS:
        _fail("method", f"must be one of {', '.join(METHODS)}")
    seed = raw["seed"]
    _check_type(seed, lambda s: _is_int(s) and s >= 0, "seed", "a non-negative integer")

    train_raw = dict(raw.get("train", {}))
    if not isinstance(train_raw, dict):
        _fail("train", "must be an object")
    if "seed" in train_raw:
        _fail("train.seed", "set the seed at top level")
    tfields = {f.name for f in fields(TrainConfig)} - {"seed"}
    for key in train_raw:
        if key not in tfields:
            _fail(f"train.{key}", "unknown key")
    for key in ("lr", "momentum", "weight_decay"):
        if key in train_raw:
            _check_type(train_raw[key], _is_num, f"train.{key}", "a number")
    for key in ("epochs", "batch_size"):
        if key in train_raw:
            _check_type(train_raw[key], _is_int, f"train.{key}", "an integer")
    try:
        train = TrainConfig(seed=seed, **train_raw)
    except ContractError as e:
        _fail("train", str(e))

    data = _section(DataSection, raw.get("data", {}), "data")
    if data.kind not in ("spirals", "csv"):
        _fail("data.kind", "must be 'spirals' or 'csv'")
    if data.kind == "csv" and not data.path:
        _fail("data.path", "required for csv data")
    if data.kind == "spirals":
        _check_type(data.n_per_class, lambda n: _is_int(n) and n >= 1, "data.n_per_class",
                    "an integer >= 1")
        _check_type(data.classes, lambda n: _is_int(n) and n >= 2, "data.classes", "an integer >= 2")
        _check_type(data.noise_sd, lambda x: _is_num(x) and x >= 0, "data.noise_sd", "a number >= 0")
    _check_type(data.test_fraction, lambda x: _is_num(x) and 0 <= x < 1, "data.test_fraction",
                "a number in [0, 1)")
    if data.seed is not None:
        _check_type(data.seed, lambda s: _is_int(s) and s >= 0, "data.seed", "a non-negative integer")

    graph = sparse = dynamic = None
    if method in GRAPH_METHODS:
        if "graph" not in raw:
            _fail("graph", f"required for method {method}")
        graph = _section(GraphSection, raw["graph"], "graph", required=("blocks", "k"))
        _check_type(graph.blocks, lambda b: isinstance(b, list) and len(b) >= 2
                    and all(_is_int(x) and x >= 1 for x in b), "graph.blocks",
                    "a list of at least two positive integers")
        _check_type(graph.k, lambda k: _is_int(k) and k >= 0, "graph.k", "a non-negative integer")
        if graph.activation not in ACTIVATIONS:
            _fail("graph.activation", f"must be one of {', '.join(ACTIVATIONS)}")
        if graph.candidates not in CANDIDATE_KINDS:
            _fail("graph.candidates", f"must be one of {', '.join(CANDIDATE_KINDS)}")
        graph.blocks = list(graph.blocks)
    elif "graph" in raw:
        _fail("graph", f"not used by method {method}")

    if method == "sparse":
        if "sparse" not in raw:
            _fail("sparse", "required for method sparse")
        sparse = _section(SparseSection, raw["sparse"], "sparse", required=("layers", "keep_fraction"))
        _check_type(sparse.layers, lambda b: isinstance(b, list) and len(b) >= 2
                    and all(_is_int(x) and x >= 1 for x in b), "sparse.layers",
                    "a list of at least two positive integers")
        _check_type(sparse.keep_fraction, lambda f: _is_num(f) and 0 < f <= 1, "sparse.keep_fraction",
                    "a number in (0, 1]")
        if sparse.activation not in ACTIVATIONS:
            _fail("sparse.activation", f"must be one of {', '.join(ACTIVATIONS)}")
        sparse.layers = list(sparse.layers)
    elif "sparse" in raw:
        _fail("sparse", f"not used by method {method}")

    if method.startswith("dynamic_"):
        dynamic = _section(DynamicSection, raw.get("dynamic", {}), "dynamic")
        if method == "dynamic_discrete":
            if dynamic.steps is None:
                dynamic.steps = len(graph.blocks) - 1
            _check_type(dynamic.steps, lambda s: _is_int(s) and s >= 1, "dynamic.steps",
                        "an integer >= 1")
        else:
            _check_type(dynamic.h, lambda h: _is_num(h) and h > 0, "dynamic.h", "a number > 0")
            _check_type(dynamic.t1, lambda t: _is_num(t) and t > 0, "dynamic.t1", "a number > 0")
            n = round(dynamic.t1 / dynamic.h)
            if n < 1 or abs(n * dynamic.h - dynamic.t1) > 1e-9 * max(1.0, dynamic.t1):
                _fail("dynamic.h", "must divide dynamic.t1 into whole steps")
            if graph.batchnorm:
                _fail("graph.batchnorm", "continuous mode needs batchnorm false")
    elif "dynamic" in raw:
        _fail("dynamic", f"not used by method {method}")

    baseline = _section(BaselineSection, raw.get("baseline", {}), "baseline")
    _check_type(baseline.l1, lambda x: _is_num(x) and x >= 0, "baseline.l1", "a number >= 0")
    if baseline.anneal_epochs is not None:
        _check_type(baseline.anneal_epochs, lambda n: _is_int(n) and 0 <= n <= train.epochs,
                    "baseline.anneal_epochs", "an integer in [0, train.epochs]")
    if baseline.retrain_lr is not None:
        _check_type(baseline.retrain_lr, lambda x: _is_num(x) and x > 0, "baseline.retrain_lr",
                    "a number > 0")

    output = raw.get("output", "runs/out")
    _check_type(output, lambda s: isinstance(s, str) and s, "output", "a non-empty string")
    return ExperimentConfig(method, seed, train, data, graph, sparse, dynamic, baseline, output)


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"invalid JSON at line {e.lineno}: {e.msg}") from None
    except OSError as e:
        raise ConfigError("$", f"cannot read {path}: {e.strerror}") from None
    return parse_config(raw)
