"""Static neural graph: blocks, candidate edges, k-edge selection and structure.

Nodes are numbered block by block, so ``u < v`` implies ``block(u) <= block(v)``
and node index order is a topological order for block-DAG candidate sets.
Edge sets are boolean ``(N, N)`` matrices indexed ``[u, v]`` for edge u -> v.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BudgetError, ContractError
from .numerics import ACTIVATIONS, IDENTITY, Rng

INPUT, HIDDEN, OUTPUT = 0, 1, 2
CANDIDATE_KINDS = ("dag", "adjacent", "recurrent")


@dataclass
class GraphSpec:
    blocks: list
    k: int
    activation: str = "relu"
    seed: int = 0
    batchnorm: bool = True
    candidates: str = "dag"

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ContractError(f"unknown graph spec keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        d = asdict(self)
        d["blocks"] = list(self.blocks)
        return d


class GraphTopology:
    """Block partition of the node set plus the candidate-edge universe.

    ``candidates`` selects the universe: ``"dag"`` allows u -> v whenever
    block(u) < block(v); ``"adjacent"`` only between consecutive blocks (an
    MLP); ``"recurrent"`` allows any u != v except edges into inputs or out of
    outputs, for dynamic graphs.
    """

    def __init__(self, blocks, candidates="dag"):
        blocks = [int(b) for b in blocks]
        if len(blocks) < 2:
            raise ContractError("a neural graph needs at least two blocks")
        if any(b < 1 for b in blocks):
            raise ContractError("every block must be nonempty")
        if candidates not in CANDIDATE_KINDS:
            raise ContractError(f"unknown candidate kind {candidates!r}")
        self.blocks = tuple(blocks)
        self.candidates = candidates
        self.n_nodes = sum(blocks)
        self.block_of = np.repeat(np.arange(len(blocks)), blocks)
        starts = np.concatenate([[0], np.cumsum(blocks)])
        self.block_ranges = [range(int(starts[i]), int(starts[i + 1])) for i in range(len(blocks))]
        self.input_nodes = self.block_ranges[0]
        self.output_nodes = self.block_ranges[-1]

        bu = self.block_of[:, None]
        bv = self.block_of[None, :]
        if candidates == "dag":
            cand = bu < bv
        elif candidates == "adjacent":
            cand = bv == bu + 1
        else:
            n = self.n_nodes
            cand = ~np.eye(n, dtype=bool)
            cand[:, list(self.input_nodes)] = False
            cand[list(self.output_nodes), :] = False
        self.candidate_mask = cand
        self.kind = np.full(self.n_nodes, HIDDEN, dtype=np.int8)
        self.kind[list(self.input_nodes)] = INPUT
        self.kind[list(self.output_nodes)] = OUTPUT

    @property
    def n_candidates(self):
        return int(self.candidate_mask.sum())

    @property
    def is_acyclic(self):
        return self.candidates != "recurrent"

    def candidate_pairs(self):
        """Candidate pairs in ascending lexicographic order."""
        us, vs = np.nonzero(self.candidate_mask)
        return list(zip(us.tolist(), vs.tolist()))

    def fan_in(self):
        return self.candidate_mask.sum(axis=0)

    def to_dict(self):
        return {"blocks": list(self.blocks), "candidates": self.candidates}


class EdgeStore:
    """Weights and momentum state for every candidate pair, plus the budget k."""

    def __init__(self, topology, weights, k, velocity=None):
        n = topology.n_nodes
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (n, n):
            raise ContractError(f"weights must be {n}x{n}")
        if not 0 <= k <= topology.n_candidates:
            raise BudgetError(f"k={k} outside [0, {topology.n_candidates}] candidate pairs")
        self.topology = topology
        self.candidates = topology.candidate_mask
        self.weights = np.where(self.candidates, weights, 0.0)
        self.velocity = np.zeros((n, n)) if velocity is None else np.array(velocity, dtype=np.float64)
        self.k = int(k)

    def copy(self):
        return EdgeStore(self.topology, self.weights.copy(), self.k, self.velocity.copy())

    def candidate_weights(self):
        return self.weights[self.candidates]


@dataclass
class NodeParams:
    """Per-node scale, bias, activation and running batch statistics.

    Entries for input and output nodes are carried but never used: inputs take
    their state from the input map and outputs apply no operation.
    """

    gamma: np.ndarray
    beta: np.ndarray
    act: np.ndarray
    kind: np.ndarray
    run_mean: np.ndarray
    run_var: np.ndarray
    vel_gamma: np.ndarray = field(default=None)
    vel_beta: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.vel_gamma is None:
            self.vel_gamma = np.zeros_like(self.gamma)
        if self.vel_beta is None:
            self.vel_beta = np.zeros_like(self.beta)

    @classmethod
    def default(cls, topology, activation="relu"):
        n = topology.n_nodes
        if activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        act = np.full(n, ACTIVATIONS[activation], dtype=np.int8)
        act[topology.kind != HIDDEN] = IDENTITY
        return cls(
            gamma=np.ones(n), beta=np.zeros(n), act=act, kind=topology.kind.copy(),
            run_mean=np.zeros(n), run_var=np.ones(n),
        )

    def copy(self):
        return NodeParams(*(np.array(getattr(self, f)) for f in self.__dataclass_fields__))


def seed_streams(seed, n):
    """``n`` independent generators derived from one seed."""
    root = Rng(seed)
    return [root.spawn() for _ in range(n)]


def init_weights(topology, rng):
    """Uniform(-s, s) per candidate with s = sqrt(1 / candidate fan-in of v)."""
    n = topology.n_nodes
    fan = np.maximum(topology.fan_in(), 1)
    us, vs = np.nonzero(topology.candidate_mask)
    u01 = rng.uniform_array(len(us))
    sigma = np.sqrt(1.0 / fan[vs])
    w = np.zeros((n, n))
    w[us, vs] = -sigma + 2.0 * sigma * u01
    return w


def build_graph(spec):
    """Topology, initialised edge store and default node parameters for ``spec``."""
    if isinstance(spec, dict):
        spec = GraphSpec.from_dict(spec)
    topo = GraphTopology(spec.blocks, spec.candidates)
    if spec.k > topo.n_candidates:
        raise BudgetError(f"k={spec.k} exceeds {topo.n_candidates} candidate pairs")
    edge_rng = seed_streams(spec.seed, 1)[0]
    store = EdgeStore(topo, init_weights(topo, edge_rng), spec.k)
    nodes = NodeParams.default(topo, spec.activation)
    return topo, store, nodes


def _topk_flat(weights, cand_flat, k):
    mags = np.abs(weights.reshape(-1)[cand_flat])
    # stable sort keeps ascending flat index (= lexicographic (u, v)) among ties
    order = np.argsort(-mags, kind="stable")
    return cand_flat[order[:k]]


def select_edges(store, k=None):
    """The k candidate pairs of largest |w| as a boolean (N, N) mask.

    Ties at the threshold go to the lexicographically smaller pair.
    """
    k = store.k if k is None else k
    cand_flat = np.flatnonzero(store.candidates)
    chosen = _topk_flat(store.weights, cand_flat, k)
    mask = np.zeros(store.weights.size, dtype=bool)
    mask[chosen] = True
    return mask.reshape(store.weights.shape)


def edge_threshold(store, edges):
    """tau: the smallest selected magnitude (inf for an empty set)."""
    if not edges.any():
        return math.inf
    return float(np.abs(store.weights[edges]).min())


def edge_list(edges):
    us, vs = np.nonzero(edges)
    return list(zip(us.tolist(), vs.tolist()))


def topo_order(topology):
    """Nodes sorted by (block, index); every candidate edge points forward."""
    if not topology.is_acyclic:
        raise ContractError("recurrent candidate sets have no topological order")
    return sorted(range(topology.n_nodes), key=lambda v: (int(topology.block_of[v]), v))


def _closure(adj, seeds):
    reach = np.zeros(adj.shape[0], dtype=bool)
    reach[list(seeds)] = True
    frontier = reach.copy()
    while frontier.any():
        nxt = adj[frontier].any(axis=0) & ~reach
        reach |= nxt
        frontier = nxt
    return reach


def dead_nodes(topology, edges):
    """Hidden nodes with no path from the inputs or no path to the outputs."""
    edges = np.asarray(edges, dtype=bool)
    if np.any(edges & ~topology.candidate_mask):
        raise ContractError("edge set contains non-candidate pairs")
    from_in = _closure(edges, topology.input_nodes)
    to_out = _closure(edges.T, topology.output_nodes)
    dead = (topology.kind == HIDDEN) & ~(from_in & to_out)
    return set(np.flatnonzero(dead).tolist())


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def edge_budget(channels_in, channels_out, width_mult=1.0, scale_out=True):
    """Edges of a complete bipartite pointwise layer at width multiplier d.

    ``scale_out=False`` leaves the output width unscaled (classifier layers).
    """
    if channels_in <= 0 or channels_out <= 0:
        raise ContractError("channel counts must be positive")
    if not width_mult > 0:
        raise ContractError("width multiplier must be positive")
    c1 = _round_half_up(channels_in * width_mult)
    c2 = _round_half_up(channels_out * width_mult) if scale_out else int(channels_out)
    return c1 * c2
