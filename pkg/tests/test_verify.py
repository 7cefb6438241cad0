import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnw.engine import NeuralGraph, backward
from dnw.errors import ContractError, ScenarioRejected
from dnw.graph import GraphSpec
from dnw.numerics import Rng
from dnw.verify import (SwapScenario, _state, alpha_grid, check_lemma1, check_swap,
                        check_swap_general, lemma1_holds_below, loss_with_inputs, random_scenario,
                        reachable, run_lemma1_checks, run_swap_checks)


def two_input_scenario(w_ik=0.4, w_jk=0.5):
    """Inputs 0 (i) and 1 (j) feed hidden node 2 (k), which feeds output 3.

    Identity ops, no batch norm, Z_0 = 1, Z_1 = -1, logits (I_3, -I_3), label 0.
    """
    m = NeuralGraph.build(GraphSpec(blocks=[2, 1, 1], k=2, activation="identity", batchnorm=False), 2, 2)
    m.io.in_w[:] = np.eye(2)
    m.io.in_b[:] = 0.0
    m.io.out_w[:] = np.array([[1.0], [-1.0]])
    m.io.out_b[:] = 0.0
    W = m.store.weights
    W[:] = 0.0
    W[0, 2], W[1, 2], W[2, 3] = w_ik, w_jk, 1.0
    edges = np.zeros_like(m.store.candidates)
    edges[1, 2] = edges[2, 3] = True
    return SwapScenario(m, edges, np.array([[1.0], [-1.0]]), np.array([0]), i=0, j=1, k=2)


def test_constructed_sign_case_scenario():
    scn = two_input_scenario()
    rep = check_swap(scn)
    assert rep.accepted and rep.alpha == 0.1
    # hand oracle: L(I) = log(1 + exp(-2 I)), dL/dI_2 at I_2 = -0.5
    d = -2.0 / (1.0 + math.exp(-1.0))
    wt_i, wt_j = 0.4 - 0.1 * d, 0.5 + 0.1 * d
    assert rep.loss_swap == pytest.approx(math.log1p(math.exp(-2.0 * wt_i)), rel=1e-12)
    assert rep.loss_noswap == pytest.approx(math.log1p(math.exp(2.0 * wt_j)), rel=1e-12)
    assert rep.lhs == pytest.approx(wt_i * (wt_i - 0.4)) and rep.lhs >= 0 >= rep.rhs
    assert rep.passed and rep.agree


def test_degenerate_equal_weights_rejected():
    rep = check_swap(two_input_scenario(w_ik=0.5, w_jk=0.5))
    assert not rep.accepted
    rep = check_swap(two_input_scenario(w_ik=-0.5, w_jk=0.5))
    assert not rep.accepted


def test_structural_rejections():
    scn = two_input_scenario()
    scn.edges[0, 2] = True
    assert check_swap(scn).reason == "(i, l) is not hallucinated"
    scn = two_input_scenario()
    scn.edges[1, 2] = False
    assert not check_swap(scn).accepted


def test_path_from_i_to_j_rejected():
    m = NeuralGraph.build(GraphSpec(blocks=[1, 1, 1, 1], k=2), 2, 2)
    edges = np.zeros_like(m.store.candidates)
    edges[1, 2] = edges[2, 3] = True
    scn = SwapScenario(m, edges, np.ones((2, 3)), np.array([0, 1, 0]), i=0, j=1, k=2, l=3)
    assert reachable(m.store.candidates, 0)[1]
    rep = check_swap_general(scn)
    assert not rep.accepted and rep.reason == "path from i to j"


def test_check_swap_needs_shared_target():
    scn = two_input_scenario()
    scn.l = 3
    with pytest.raises(ContractError):
        check_swap(scn)


@pytest.mark.parametrize("seed", range(10))
def test_general_form_with_l_equal_k_is_the_simple_check(seed):
    rng = Rng(seed)
    while True:
        try:
            scn = random_scenario(rng)
            break
        except ScenarioRejected:
            continue
    a = check_swap(scn)
    scn.l = scn.k
    b = check_swap_general(scn)
    assert a == b


def test_override_evaluator_matches_engine_state():
    scn = random_scenario(Rng(4))
    state = _state(scn)
    loss = loss_with_inputs(scn.model, scn.edges, scn.X, scn.y, {})
    assert loss == pytest.approx(backward(scn.model, state, scn.y).loss, abs=1e-15)


@given(st.integers(0, 2**32))
@settings(max_examples=80, deadline=None)
def test_accepted_scenarios_meet_preconditions_and_algebra(seed):
    try:
        scn = random_scenario(Rng(seed), general=bool(seed % 2))
    except ScenarioRejected:
        return
    rep = check_swap_general(scn) if scn.l is not None else check_swap(scn)
    if not rep.accepted:
        return
    assert rep.alpha in alpha_grid()
    W = scn.model.store.weights
    state = _state(scn)
    G = state.Z @ state.dI.T
    l = scn.target
    w_i, w_j = W[scn.i, l], W[scn.j, scn.k]
    wt_i, wt_j = w_i - rep.alpha * G[scn.i, l], w_j - rep.alpha * G[scn.j, scn.k]
    assert abs(w_i) < abs(w_j) and abs(wt_i) > abs(wt_j)
    assert np.sign(wt_i) == np.sign(w_i) and np.sign(wt_j) == np.sign(w_j)
    # the algebraic inequality follows from the preconditions alone
    assert rep.lhs >= rep.rhs


def test_swap_check_counts():
    c = run_swap_checks(30, seed=3)
    assert c.accepted == 30 and c.passed + c.failed == 30
    assert c.agree + c.disagree == 30


def quadratic(a=2.0, c=None):
    c = np.array([0.3, -1.0, 0.5]) if c is None else c
    return lambda x: 0.5 * a * float(np.sum((x - c) ** 2))


def test_lemma1_quadratic_holds_up_to_alpha0():
    f = quadratic()
    I = np.array([1.0, 1.0, 1.0])
    grad = 2.0 * (I - np.array([0.3, -1.0, 0.5]))
    assert check_lemma1(f, I, -grad, grad) == pytest.approx(0.1)
    assert check_lemma1(f, I, -grad, grad, alpha0=5.0) == pytest.approx(5.0)


def test_lemma1_bisection_finds_crossing():
    # cubic with a small linear term: the implication fails beyond a = 0.1
    def f(x):
        return float(x[0] ** 3 - 0.01 * x[0])

    I = np.array([0.0])
    # <g1, -grad> = 0.01 > <g2, -grad> = -0.01; L(a) < L(-a) iff a^3 - 0.01a < -a^3 + 0.01a
    a = check_lemma1(f, I, np.array([1.0]), np.array([-1.0]), alpha0=1.0)
    assert a == pytest.approx(0.1, rel=1e-9)
    assert lemma1_holds_below(f, I, np.array([1.0]), np.array([-1.0]), a, 0.02)


def test_lemma1_rejects_equal_directions():
    f = quadratic()
    g = np.array([0.1, 0.2, 0.3])
    with pytest.raises(ScenarioRejected):
        check_lemma1(f, np.zeros(3), g, g)


def test_lemma1_random_softmax_trials():
    out = run_lemma1_checks(100, seed=9)
    assert out["trials"] == 100 and out["held"] == 100 and out["failed"] == 0
