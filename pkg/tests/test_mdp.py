import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import chain_mdp
from tabrl.envs import RngStream, random_episodic, random_mdp
from tabrl.errors import DimensionError
from tabrl.mdp import (
    DiscountedMdp, EpisodicMdp, Policy, backward_induction, bellman_optimality,
    evaluate_episodic, evaluate_policy, greedy_policy, iterations_for_tolerance, load_mdp,
    occupancy, optimal_q, policy_iteration, policy_iteration_trace, save_mdp,
    solve_value_iteration, value_iteration, value_iteration_trace, variance)

seeds = st.integers(0, 2**32 - 1)


def one_state(gamma=0.9):
    return DiscountedMdp(np.ones((1, 1)), np.ones((1, 1)), gamma)


# --- model validation ---------------------------------------------------------

def test_rejects_bad_rows():
    with pytest.raises(ValueError):
        DiscountedMdp(np.array([[0.5, 0.4], [0.0, 1.0]]), np.zeros((2, 1)), 0.9)
    with pytest.raises(ValueError):
        DiscountedMdp(np.array([[1.5, -0.5], [0.0, 1.0]]), np.zeros((2, 1)), 0.9)


def test_rejects_bad_reward_and_discount():
    P = np.ones((1, 1))
    with pytest.raises(ValueError):
        DiscountedMdp(P, np.array([[1.5]]), 0.9)
    with pytest.raises(ValueError):
        DiscountedMdp(P, np.array([[0.5]]), 1.0)
    with pytest.raises(ValueError):
        DiscountedMdp(P, np.array([[0.5]]), -0.1)


def test_rejects_shape_mismatch():
    with pytest.raises(DimensionError):
        DiscountedMdp(np.ones((2, 1)), np.zeros((1, 1)), 0.5)


def test_policy_validation():
    with pytest.raises(ValueError):
        Policy.stochastic([[0.5, 0.6]])
    with pytest.raises(ValueError):
        Policy.deterministic([2], 2)
    pi = Policy.deterministic([1, 0], 2)
    assert pi.kind == "deterministic"
    assert np.array_equal(pi.probs, [[0, 1], [1, 0]])
    assert Policy.uniform(2, 4).kind == "stochastic"


def test_episodic_validation():
    with pytest.raises(ValueError):
        EpisodicMdp(np.ones((1, 1, 1)), np.ones((1, 1, 1)), np.array([0.5]))


def test_serialization_roundtrip(tmp_path):
    mdp = random_mdp(4, 2, 0.8, 0.5, RngStream(1))
    save_mdp(mdp, tmp_path / "m.json")
    back = load_mdp(tmp_path / "m.json")
    assert np.array_equal(back.transition, mdp.transition)
    assert np.array_equal(back.reward, mdp.reward)
    assert back.discount == mdp.discount
    doc = json.loads((tmp_path / "m.json").read_text())
    assert {"S", "A", "gamma", "rewards", "transitions"} <= set(doc)

    ep = random_episodic(3, 2, 4, RngStream(2))
    save_mdp(ep, tmp_path / "e.json")
    back = load_mdp(tmp_path / "e.json")
    assert isinstance(back, EpisodicMdp)
    assert np.array_equal(back.transition, ep.transition)
    assert np.array_equal(back.initial, ep.initial)


# --- variance -----------------------------------------------------------------

def test_variance_examples():
    assert variance([0.5, 0.5], [0, 1]) == 0.25
    assert variance([1, 0], [3, 7]) == 0
    # oracle: E[(v - mean)^2] computed in the centred form
    q, v = np.array([0.2, 0.3, 0.5]), np.array([1.0, 2.0, 3.0])
    centred = float(q @ (v - q @ v) ** 2)
    assert variance(q, v) == pytest.approx(centred, abs=1e-14)
    assert variance(q, v) == pytest.approx(0.61, abs=1e-12)


def test_variance_length_mismatch():
    with pytest.raises(DimensionError):
        variance([0.5, 0.5], [1, 2, 3])


@given(seeds)
def test_variance_nonnegative(seed):
    g = np.random.default_rng(seed)
    q = g.dirichlet(np.ones(5))
    v = g.uniform(-3, 3, 5)
    assert variance(q, v) >= 0


# --- Bellman operator and value iteration -------------------------------------

def test_bellman_single_state():
    mdp = one_state()
    assert bellman_optimality(mdp, np.zeros((1, 1)))[0, 0] == 1.0
    assert bellman_optimality(mdp, np.full((1, 1), 10.0))[0, 0] == pytest.approx(10.0, abs=1e-12)


def test_bellman_shape_error():
    with pytest.raises(DimensionError):
        bellman_optimality(one_state(), np.zeros((2, 1)))


def test_bellman_matches_loop_oracle(small_mdp):
    q = np.random.default_rng(0).uniform(0, 5, (5, 3))
    S, A = q.shape
    expect = np.zeros_like(q)
    for s in range(S):
        for a in range(A):
            expect[s, a] = small_mdp.reward[s, a] + small_mdp.discount * sum(
                small_mdp.transition[s * A + a, t] * max(q[t]) for t in range(S))
    assert np.allclose(bellman_optimality(small_mdp, q), expect, atol=1e-12)


@given(seeds, st.floats(0.0, 0.99))
def test_bellman_contraction(seed, gamma):
    rng = RngStream(seed)
    mdp = random_mdp(4, 3, gamma, 1.0, rng)
    g = np.random.default_rng(seed)
    q1, q2 = g.uniform(-5, 5, (2, 4, 3))
    lhs = np.max(np.abs(bellman_optimality(mdp, q1) - bellman_optimality(mdp, q2)))
    assert lhs <= gamma * np.max(np.abs(q1 - q2)) + 1e-12


def test_value_iteration_geometric_series():
    mdp = one_state(0.9)
    for k in (0, 1, 5, 20):
        got = value_iteration(mdp, np.zeros((1, 1)), k)[0, 0]
        assert got == pytest.approx((1 - 0.9 ** k) / 0.1, abs=1e-12)


def test_value_iteration_zero_iters_identity(small_mdp):
    q0 = np.random.default_rng(3).uniform(0, 1, (5, 3))
    assert np.array_equal(value_iteration(small_mdp, q0, 0), q0)
    with pytest.raises(ValueError):
        value_iteration(small_mdp, q0, -1)


def test_value_iteration_linear_rate():
    mdp = random_mdp(8, 3, 0.9, 1.0, RngStream(11))
    q_star = optimal_q(mdp)
    trace = value_iteration_trace(mdp, np.zeros((8, 3)), 60)
    e0 = np.max(np.abs(trace[0] - q_star))
    for k, q in enumerate(trace):
        assert np.max(np.abs(q - q_star)) <= 0.9 ** k * e0 + 1e-12


def test_fixed_point_residual(small_mdp):
    k = iterations_for_tolerance(small_mdp.discount, 1e-10)
    assert k == int(np.ceil(np.log(1e-10) / np.log(0.9)))
    q = value_iteration(small_mdp, np.zeros((5, 3)), k)
    assert np.max(np.abs(bellman_optimality(small_mdp, q) - q)) <= 1e-8


def test_solve_value_iteration_matches_exact(small_mdp):
    q, k = solve_value_iteration(small_mdp)
    assert k > 1
    assert np.max(np.abs(q - optimal_q(small_mdp))) <= 1e-8
    assert q.min() >= 0 and q.max() <= 1 / (1 - 0.9)


# --- evaluation, greedy, policy iteration -------------------------------------

def test_evaluate_examples():
    v, _ = evaluate_policy(one_state(), Policy.deterministic([0], 1))
    assert v[0] == pytest.approx(10.0, abs=1e-12)
    v, q = evaluate_policy(chain_mdp(0.5), Policy.deterministic([0, 0], 1))
    assert np.allclose(v, [1.0, 2.0], atol=1e-12)
    assert np.allclose(q[:, 0], v)


@given(seeds, st.floats(0.0, 0.99))
def test_evaluate_residual_and_range(seed, gamma):
    mdp = random_mdp(5, 2, gamma, 0.6, RngStream(seed))
    probs = np.random.default_rng(seed).dirichlet(np.ones(2), size=5)
    v, q = evaluate_policy(mdp, Policy.stochastic(probs))
    P_pi = np.einsum("sa,sat->st", probs, mdp.kernel())
    r_pi = (probs * mdp.reward).sum(axis=1)
    assert np.max(np.abs(v - r_pi - gamma * P_pi @ v)) <= 1e-9
    assert v.min() >= -1e-12 and v.max() <= 1 / (1 - gamma) + 1e-9
    assert np.allclose((q * probs).sum(axis=1), v, atol=1e-9)


def test_greedy_examples():
    assert greedy_policy(np.array([[0.0, 1.0]])).actions[0] == 1
    assert greedy_policy(np.array([[1.0, 1.0]])).actions[0] == 0
    assert greedy_policy(np.array([[1.0, 3.0, 3.0]])).actions[0] == 1


@given(seeds, st.floats(0.01, 100.0), st.integers(-5, 5))
def test_greedy_invariance(seed, c, shift):
    # integer-valued tables keep c*q + b free of rounding ties
    q = np.random.default_rng(seed).integers(0, 4, (6, 3)).astype(float)
    b = np.arange(6)[:, None] * shift
    c = float(2 ** round(np.log2(c)))
    assert np.array_equal(greedy_policy(c * q + b).actions, greedy_policy(q).actions)


def brute_force_v_star(mdp):
    """Maximum over all deterministic policies of exact V^pi (state-wise)."""
    S, A = mdp.reward.shape
    best = np.full(S, -np.inf)
    for acts in itertools.product(range(A), repeat=S):
        v, _ = evaluate_policy(mdp, Policy.deterministic(acts, A))
        best = np.maximum(best, v)
    return best


@pytest.mark.parametrize("seed", range(5))
def test_greedy_of_q_star_is_optimal(seed):
    mdp = random_mdp(4, 3, 0.85, 0.5, RngStream(seed))
    q_star, _ = solve_value_iteration(mdp)
    v, _ = evaluate_policy(mdp, greedy_policy(q_star))
    assert np.max(np.abs(v - brute_force_v_star(mdp))) <= 1e-8


def test_policy_iteration_examples():
    # gamma = 0 with a strictly dominant action in each state
    P = np.full((6, 3), 1 / 3)
    r = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.4]])
    mdp = DiscountedMdp(P, r, 0.0)
    pi, _ = policy_iteration(mdp, Policy.deterministic([0, 1, 0], 2), 1)
    assert list(pi.actions) == [1, 0, 1]
    pi0 = Policy.uniform(3, 2)
    pi, q = policy_iteration(mdp, pi0, 0)
    assert pi is pi0
    assert np.allclose(q, evaluate_policy(mdp, pi0)[1])


def test_policy_iteration_monotone_and_linear():
    mdp = random_mdp(8, 3, 0.9, 1.0, RngStream(5))
    q_star = optimal_q(mdp)
    pis, qs = policy_iteration_trace(mdp, Policy.uniform(8, 3), 15)
    e0 = np.max(np.abs(qs[0] - q_star))
    prev = None
    for k, (pi, q) in enumerate(zip(pis, qs)):
        assert np.max(np.abs(q - q_star)) <= 0.9 ** k * e0 + 1e-10
        v, _ = evaluate_policy(mdp, pi)
        if prev is not None:
            assert np.all(v >= prev - 1e-10)
        prev = v
    assert np.max(np.abs(qs[-1] - q_star)) <= 1e-9


def test_optimal_q_matches_brute_force(small_mdp):
    assert np.allclose(optimal_q(small_mdp).max(axis=1), brute_force_v_star(small_mdp), atol=1e-10)


# --- occupancy ------------------------------------------------------------------

def test_occupancy_single_state():
    assert occupancy(one_state(), Policy.uniform(1, 1), [1.0])[0, 0] == pytest.approx(1.0)


@given(seeds, st.floats(0.0, 0.99))
def test_occupancy_identities(seed, gamma):
    mdp = random_mdp(5, 3, gamma, 0.7, RngStream(seed))
    g = np.random.default_rng(seed)
    probs = g.dirichlet(np.ones(3), size=5)
    rho = g.dirichlet(np.ones(5))
    d = occupancy(mdp, probs, rho)
    assert abs(d.sum() - 1) <= 1e-9
    assert d.min() >= 0
    v, _ = evaluate_policy(mdp, probs)
    assert abs(rho @ v - (d * mdp.reward).sum() / (1 - gamma)) <= 1e-8


def test_occupancy_gamma_zero():
    mdp = random_mdp(4, 2, 0.0, 1.0, RngStream(3))
    probs = np.random.default_rng(0).dirichlet(np.ones(2), size=4)
    rho = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.allclose(occupancy(mdp, probs, rho), rho[:, None] * probs, atol=1e-15)


def test_occupancy_matches_rollout_sum(small_mdp):
    # oracle: truncated power series (1 - gamma) sum_t gamma^t rho P_pi^t
    probs = Policy.uniform(5, 3).probs
    rho = np.full(5, 0.2)
    P_pi = np.einsum("sa,sat->st", probs, small_mdp.kernel())
    d, x = np.zeros(5), rho.copy()
    for t in range(600):
        d += (1 - 0.9) * 0.9 ** t * x
        x = x @ P_pi
    assert np.allclose(occupancy(small_mdp, probs, rho).sum(axis=1), d, atol=1e-12)


# --- backward induction -------------------------------------------------------

def test_backward_induction_terminal_layer():
    ep = random_episodic(3, 2, 1, RngStream(0))
    Q, V, _ = backward_induction(ep)
    assert np.array_equal(Q[0], ep.reward[0])
    assert np.array_equal(V[1], np.zeros(3))


def test_backward_induction_zero_rewards():
    ep = random_episodic(3, 2, 4, RngStream(0))
    zero = EpisodicMdp(ep.transition, np.zeros_like(ep.reward), ep.initial)
    Q, V, _ = backward_induction(zero)
    assert not Q.any() and not V.any()


@pytest.mark.parametrize("seed", range(4))
def test_backward_induction_brute_force(seed):
    ep = random_episodic(2, 2, 2, RngStream(seed))
    H, S, A = ep.reward.shape
    _, V, acts = backward_induction(ep)
    best = np.full(S, -np.inf)
    for flat in itertools.product(range(A), repeat=H * S):
        _, v = evaluate_episodic(ep, np.reshape(flat, (H, S)))
        best = np.maximum(best, v[0])
    assert np.allclose(V[0], best, atol=1e-12)
    assert np.allclose(evaluate_episodic(ep, acts)[1][0], V[0], atol=1e-12)
    for h in range(H):
        assert V[h].min() >= 0 and V[h].max() <= H - h
