"""Empirical checks of the swap claim, its two-node generalisation and the descent lemma.

A swap scenario is a small graph, a real edge set, a minibatch and designated
pairs: (i, k) hallucinated and (j, k) real, or (i, l) hallucinated and (j, k)
real in the general form. Node states Z come from one forward pass and stay
fixed; the loss is then re-evaluated with only the affected node inputs
overridden (I_k, and I_l in the general form), everything downstream
recomputed. A scenario is accepted only if its preconditions hold:

    (j, k) real, (i, .) hallucinated, |w_i.| < |w_jk|, |w~_i.| > |w~_jk|,
    sign(w~) = sign(w) on both pairs, and no candidate path from i to j,

with w~ = w - alpha * <Z_u, dL/dI_v> and alpha the largest value of the grid
0.1 * 2**-m for which they hold.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nodeops
from .engine import NeuralGraph, backward, forward
from .errors import ContractError, ScenarioRejected
from .graph import GraphSpec
from .numerics import Rng, finite_diff, softmax_ce

ALPHA0 = 0.1
GRID_STEPS = 60
TOL = 1e-12


def alpha_grid(alpha0=ALPHA0, steps=GRID_STEPS):
    return [alpha0 * 2.0 ** -m for m in range(steps + 1)]


@dataclass
class SwapScenario:
    model: NeuralGraph
    edges: np.ndarray
    X: np.ndarray
    y: np.ndarray
    i: int
    j: int
    k: int
    l: int = None  # target of the hallucinated pair; None means l = k

    @property
    def target(self):
        return self.k if self.l is None else self.l


@dataclass
class SwapReport:
    accepted: bool
    reason: str = ""
    alpha: float = None
    loss_swap: float = None
    loss_noswap: float = None
    lhs: float = None
    rhs: float = None
    passed: bool = None
    agree: bool = None

    def to_dict(self):
        return asdict(self)


def reachable(candidates, src):
    """Nodes reachable from ``src`` along candidate pairs (excluding src unless on a cycle)."""
    n = candidates.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = list(np.flatnonzero(candidates[src]))
    while stack:
        v = stack.pop()
        if seen[v]:
            continue
        seen[v] = True
        stack.extend(np.flatnonzero(candidates[v] & ~seen))
    return seen


def loss_with_inputs(model, edges, X, y, override):
    """Minibatch loss with I_v replaced by ``override[v]`` for the given nodes.

    Written node by node in index order, independent of the engine kernels.
    Batch statistics are those of the overridden inputs (train mode).
    """
    topo, nodes, io = model.topology, model.nodes, model.io
    N, B = topo.n_nodes, X.shape[1]
    Z = np.zeros((N, B))
    ins = list(topo.input_nodes)
    Z[ins] = io.in_w @ X + io.in_b[:, None]
    W = np.where(edges, model.store.weights, 0.0)
    for v in range(len(ins), N):
        I_v = override[v] if v in override else W[:, v] @ Z
        z, _ = nodeops.forward(I_v[None, :], nodes.gamma[v:v + 1], nodes.beta[v:v + 1],
                               nodes.act[v:v + 1], nodes.kind[v:v + 1], model.normalize, True)
        Z[v] = z[0]
    logits = io.out_w @ Z[list(topo.output_nodes)] + io.out_b[:, None]
    return softmax_ce(logits, y)[0]


def _state(scn):
    state, _ = forward(scn.model, scn.edges, scn.X, train=True)
    backward(scn.model, state, scn.y)
    return state


def _preconditions(w_i, w_j, g_i, g_j, alpha):
    wt_i, wt_j = w_i - alpha * g_i, w_j - alpha * g_j
    return (abs(w_i) < abs(w_j) and abs(wt_i) > abs(wt_j)
            and np.sign(wt_i) == np.sign(w_i) and np.sign(wt_j) == np.sign(w_j) and w_i != 0.0)


def _structure(scn):
    store = scn.model.store
    i, j, k, l = scn.i, scn.j, scn.k, scn.target
    if not (store.candidates[i, l] and store.candidates[j, k]):
        return "designated pairs are not candidates"
    if not scn.edges[j, k]:
        return "(j, k) is not a real edge"
    if scn.edges[i, l]:
        return "(i, l) is not hallucinated"
    if (i, l) == (j, k):
        return "pairs coincide"
    if i == j or reachable(store.candidates, i)[j]:
        return "path from i to j"
    return ""


def _evaluate(scn):
    reason = _structure(scn)
    if reason:
        return SwapReport(False, reason)
    model, edges = scn.model, scn.edges
    i, j, k, l = scn.i, scn.j, scn.k, scn.target
    W = model.store.weights
    state = _state(scn)
    Z, dI = state.Z, state.dI
    G = Z @ dI.T  # G[u, v] = <Z_u, dL/dI_v>
    w_i, w_j = W[i, l], W[j, k]
    alpha = next((a for a in alpha_grid() if _preconditions(w_i, w_j, G[i, l], G[j, k], a)), None)
    if alpha is None:
        return SwapReport(False, "preconditions fail for every alpha in the grid")
    Wt = W - alpha * G
    # inputs after the update, summed over real edges, with the designated pairs handled apart
    base = {v: sum((Wt[u, v] * Z[u] for u in np.flatnonzero(edges[:, v]) if (u, v) != (j, k)),
                   np.zeros(Z.shape[1])) for v in {k, l}}
    if l == k:
        A = {k: base[k] + Wt[i, k] * Z[i]}
        B = {k: base[k] + Wt[j, k] * Z[j]}
    else:
        A = {k: base[k], l: base[l] + Wt[i, l] * Z[i]}
        B = {k: base[k] + Wt[j, k] * Z[j], l: base[l]}
    loss_a = loss_with_inputs(model, edges, scn.X, scn.y, A)
    loss_b = loss_with_inputs(model, edges, scn.X, scn.y, B)
    lhs = Wt[i, l] * (Wt[i, l] - w_i)
    rhs = Wt[j, k] * (Wt[j, k] - w_j)
    passed = bool(loss_a <= loss_b + TOL)
    agree = bool((lhs >= rhs) == (loss_a <= loss_b + TOL))
    return SwapReport(True, "", alpha, float(loss_a), float(loss_b), float(lhs), float(rhs),
                      passed, agree)


def check_swap(scenario):
    """Swap (i, k) in for (j, k) with node states fixed; compare the two losses."""
    if scenario.l not in (None, scenario.k):
        raise ContractError("check_swap needs a shared target node; use check_swap_general")
    return _evaluate(scenario)


def check_swap_general(scenario):
    """Swap (i, l) in for (j, k); requires no candidate path from i to j."""
    return _evaluate(scenario)


def random_scenario(rng, general=False, max_nodes=8):
    """A random small graph with designated pairs; the hallucinated weight is set just
    below the real one in magnitude, pointing in its descent direction."""
    n_blocks = 3 + rng.randbelow(2)
    while True:
        blocks = [1 + rng.randbelow(3) for _ in range(n_blocks)]
        if sum(blocks) <= max_nodes:
            break
    seed = int(rng.next_u64() >> 1)
    spec = GraphSpec(blocks=blocks, k=0, activation=("relu", "tanh")[rng.randbelow(2)],
                     seed=seed, batchnorm=bool(rng.randbelow(2)))
    n_feat, n_cls, B = 2, 2, 2 + rng.randbelow(7)
    model = NeuralGraph.build(spec, n_feat, n_cls)
    cand = model.store.candidates
    edges = cand & (rng.uniform_array(cand.size).reshape(cand.shape) < 0.6)
    model.store.k = int(edges.sum())
    X = rng.normal_array(n_feat * B).reshape(n_feat, B)
    y = np.array([rng.randbelow(n_cls) for _ in range(B)], dtype=np.int64)
    real = np.argwhere(edges)
    hal = np.argwhere(cand & ~edges)
    if len(real) == 0 or len(hal) == 0:
        raise ScenarioRejected("no real or no hallucinated pair")
    j, k = real[rng.randbelow(len(real))]
    if general:
        i, l = hal[rng.randbelow(len(hal))]
    else:
        opts = np.flatnonzero(cand[:, k] & ~edges[:, k])
        if opts.size == 0:
            raise ScenarioRejected("target has no hallucinated in-pair")
        i, l = opts[rng.randbelow(opts.size)], k
    scn = SwapScenario(model, edges, X, y, int(i), int(j), int(k), None if l == k else int(l))
    # place w_il just under |w_jk|, on the side the update rule pushes it
    state = _state(scn)
    g_i = float(state.Z[i] @ state.dI[l])
    gap = 10.0 ** (-1.0 - 5.0 * rng.next_double())
    sign = -1.0 if g_i > 0 else 1.0
    model.store.weights[i, l] = sign * abs(model.store.weights[j, k]) * (1.0 - gap)
    return scn


@dataclass
class CheckCounts:
    accepted: int = 0
    rejected: int = 0
    passed: int = 0
    failed: int = 0
    agree: int = 0
    disagree: int = 0
    failures: list = field(default_factory=list)

    def add(self, rep, keep=5):
        if not rep.accepted:
            self.rejected += 1
            return
        self.accepted += 1
        if rep.passed:
            self.passed += 1
        else:
            self.failed += 1
            if len(self.failures) < keep:
                self.failures.append(rep.to_dict())
        if rep.agree:
            self.agree += 1
        else:
            self.disagree += 1


def run_swap_checks(n_accepted, general=False, seed=0, max_tries=None):
    """Draw scenarios until ``n_accepted`` are accepted (or ``max_tries`` draws)."""
    rng = Rng(seed)
    counts = CheckCounts()
    max_tries = 50 * n_accepted if max_tries is None else max_tries
    for _ in range(max_tries):
        if counts.accepted >= n_accepted:
            break
        try:
            scn = random_scenario(rng, general=general)
        except ScenarioRejected:
            counts.rejected += 1
            continue
        counts.add(check_swap_general(scn) if general else check_swap(scn))
    return counts


def check_lemma1(loss_fn, I_v, gamma1, gamma2, alpha0=ALPHA0, grad=None, bisect_steps=60):
    """Largest alpha* <= alpha0 with L(I + a g1) < L(I + a g2) for every tested a <= alpha*.

    Requires <g1, -dL/dI> > <g2, -dL/dI>. The search walks up the grid
    alpha0 * 2**-m from its small end to the first failure, then bisects
    between the last success and that failure. Values of alpha so small that
    the loss difference is below rounding (see ``alpha_floor``) are not tested.
    """
    I_v = np.asarray(I_v, dtype=np.float64)
    g1, g2 = np.asarray(gamma1, dtype=np.float64), np.asarray(gamma2, dtype=np.float64)
    grad = finite_diff(loss_fn, I_v) if grad is None else np.asarray(grad, dtype=np.float64)
    margin = float(np.sum((g1 - g2) * -grad))
    if not margin > 0:
        raise ScenarioRejected("hypothesis <g1, -grad> > <g2, -grad> fails")
    floor = alpha_floor(loss_fn(I_v), margin)

    def holds(a):
        return loss_fn(I_v + a * g1) < loss_fn(I_v + a * g2)

    grid = [a for a in reversed(alpha_grid(alpha0)) if a >= floor]
    if not grid or not holds(grid[0]):
        return 0.0
    lo, hi = grid[0], None
    for a in grid[1:]:
        if holds(a):
            lo = a
        else:
            hi = a
            break
    if hi is None:
        return lo
    for _ in range(bisect_steps):
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return lo


def alpha_floor(loss_value, margin):
    """Smallest alpha at which a first-order loss gap alpha*margin is resolvable."""
    return 1e4 * np.finfo(float).eps * max(1.0, abs(loss_value)) / margin


def random_lemma1_trial(rng, C=3, B=4):
    """Softmax cross-entropy of random logits with a random (g1, g2) pair ordered to
    satisfy the hypothesis."""
    logits = 2.0 * rng.normal_array(C * B).reshape(C, B)
    y = np.array([rng.randbelow(C) for _ in range(B)], dtype=np.int64)

    def loss(flat):
        return softmax_ce(flat.reshape(C, B), y)[0]

    I = logits.ravel()
    grad = softmax_ce(logits, y)[1].ravel()
    g1 = rng.normal_array(I.size)
    g2 = rng.normal_array(I.size)
    if np.sum((g1 - g2) * -grad) < 0:
        g1, g2 = g2, g1
    return loss, I, g1, g2, grad


def lemma1_holds_below(loss_fn, I_v, g1, g2, alpha_star, margin, n=200):
    """Check the implication on a geometric and a linear grid in [floor, alpha*]."""
    if alpha_star <= 0:
        return True
    floor = alpha_floor(loss_fn(I_v), margin)
    geo = alpha_star * np.logspace(0, -12, n)
    lin = alpha_star * np.linspace(1.0, 0.0, n, endpoint=False)
    for a in np.concatenate([geo, lin]):
        if a < floor:
            continue
        if not loss_fn(I_v + a * g1) < loss_fn(I_v + a * g2):
            return False
    return True


def run_lemma1_checks(n_trials, seed=0):
    rng = Rng(seed)
    out = {"trials": 0, "rejected": 0, "held": 0, "failed": 0, "zero_alpha": 0}
    while out["trials"] < n_trials:
        loss, I, g1, g2, grad = random_lemma1_trial(rng)
        try:
            a = check_lemma1(loss, I, g1, g2, grad=grad)
        except ScenarioRejected:
            out["rejected"] += 1
            continue
        out["trials"] += 1
        out["zero_alpha"] += int(a == 0.0)
        margin = float(np.sum((g1 - g2) * -grad))
        ok = lemma1_holds_below(loss, I, g1, g2, a, margin)
        out["held" if ok else "failed"] += 1
    return out


def verify_report(n_scenarios=1000, n_general=None, n_lemma=None, seed=0):
    """JSON-ready counts for all three checks."""
    n_general = n_scenarios // 2 if n_general is None else n_general
    n_lemma = n_scenarios if n_lemma is None else n_lemma
    simple = run_swap_checks(n_scenarios, general=False, seed=seed)
    general = run_swap_checks(n_general, general=True, seed=seed + 1)
    lemma = run_lemma1_checks(n_lemma, seed=seed + 2)
    return {"swap": asdict(simple), "swap_general": asdict(general), "lemma1": lemma,
            "tolerance": TOL, "alpha_grid": {"alpha0": ALPHA0, "steps": GRID_STEPS}}


def linear_agreement(scn):
    """First-order predicted loss gap <A - B, dL/dI> next to the measured one (diagnostic)."""
    rep = check_swap_general(scn) if scn.l is not None else check_swap(scn)
    if not rep.accepted:
        return None
    return (rep.rhs - rep.lhs) / rep.alpha, rep.loss_swap - rep.loss_noswap


__all__ = ["SwapScenario", "SwapReport", "check_swap", "check_swap_general", "check_lemma1",
           "random_scenario", "run_swap_checks", "run_lemma1_checks", "verify_report",
           "loss_with_inputs", "reachable", "alpha_grid"]
