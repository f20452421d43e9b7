import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tabrl.envs import RngStream, collect_generative, random_mdp
from tabrl.genmodel import (
    LearningRateSchedule, PerturbationConfig, default_perturbation, learning_rate,
    learning_rates, model_based_plan, perturb_rewards, sync_q_learning, sync_td_learning)
from tabrl.mdp import (
    DiscountedMdp, Policy, evaluate_policy, optimal_q, value_iteration_trace)

seeds = st.integers(0, 2**32 - 1)


def deterministic_mdp(S=4, A=2, gamma=0.8, seed=0):
    return random_mdp(S, A, gamma, 1 / S, RngStream(seed))


# --- schedules --------------------------------------------------------------

def test_schedule_examples():
    s = LearningRateSchedule("rescaled-linear", 1.0, 1000, 0.9)
    assert learning_rate(s, 0) == 1.0
    c = LearningRateSchedule("constant", 1.0, 1000, 0.9)
    assert len({learning_rate(c, t) for t in range(0, 1001, 50)}) == 1
    expect = 1 / (1 + 0.1 * 1000 / math.log(1000) ** 3)
    assert learning_rate(c, 7) == pytest.approx(expect, rel=1e-15)


def test_schedule_errors():
    with pytest.raises(ValueError):
        LearningRateSchedule("rescaled-linear", 1.0, 1, 0.9)
    with pytest.raises(ValueError):
        LearningRateSchedule("cosine", 1.0, 10, 0.9)
    with pytest.raises(ValueError):
        learning_rate(LearningRateSchedule("constant", 1.0, 10, 0.9), 11)


@given(st.floats(0.01, 10), st.integers(2, 5000), st.floats(0.0, 0.99))
def test_schedule_sandwich(c, T, gamma):
    lin = learning_rates(LearningRateSchedule("rescaled-linear", c, T, gamma))
    const = learning_rates(LearningRateSchedule("constant", c, T, gamma))
    assert np.all((lin > 0) & (lin <= 1)) and np.all((const > 0) & (const <= 1))
    assert np.all(np.diff(lin) <= 0)
    assert np.all(const <= lin + 1e-15)


# --- perturbation and model-based planning ---------------------------------

def test_perturb_zero_is_identity(small_mdp, rng):
    assert np.array_equal(perturb_rewards(small_mdp, PerturbationConfig(0.0), rng).reward,
                          small_mdp.reward)


def test_perturb_support(small_mdp, rng):
    out = perturb_rewards(small_mdp, PerturbationConfig(0.05), rng)
    diff = out.reward - small_mdp.reward
    assert np.all(diff >= 0) and np.all(diff <= 0.05)
    assert np.array_equal(out.transition, small_mdp.transition)
    with pytest.raises(ValueError):
        PerturbationConfig(-1.0)


def test_default_perturbation_size():
    assert default_perturbation(2, 3, 0.9, 0.1) == pytest.approx(0.1 * 0.1 / (2 ** 5 * 3 ** 5))


def test_model_based_exact_recovery(rng):
    mdp = deterministic_mdp()
    ds = collect_generative(mdp, 1, rng)
    pi, q = model_based_plan(ds, mdp.reward, mdp.discount)
    v, _ = evaluate_policy(mdp, pi)
    assert np.max(np.abs(v - optimal_q(mdp).max(axis=1))) <= 1e-9
    assert np.max(np.abs(q - optimal_q(mdp))) <= 1e-8


def test_model_based_perturbed_close(small_mdp, rng):
    ds = collect_generative(small_mdp, 50, rng)
    _, q0 = model_based_plan(ds, small_mdp.reward, 0.9)
    xi = 1e-4
    _, q1 = model_based_plan(ds, small_mdp.reward, 0.9, PerturbationConfig(xi), rng)
    # the perturbed optimal values move by at most xi / (1 - gamma)
    assert np.all(q1 >= q0 - 1e-8) and np.all(q1 <= q0 + xi / 0.1 + 1e-8)
    with pytest.raises(ValueError):
        model_based_plan(ds, small_mdp.reward, 0.9, PerturbationConfig(xi))


def test_model_based_accuracy_improves_with_n():
    ns = (100, 1000, 10000)
    q_err, sub = {n: [] for n in ns}, {n: [] for n in ns}
    for seed in range(20):
        root = RngStream(seed)
        mdp = random_mdp(6, 3, 0.9, 1.0, root.substream(0))
        q_star = optimal_q(mdp)
        for n in ns:
            pi, q = model_based_plan(collect_generative(mdp, n, root.substream(1, n)),
                                     mdp.reward, 0.9)
            v, _ = evaluate_policy(mdp, pi)
            q_err[n].append(np.max(np.abs(q - q_star)))
            sub[n].append(np.max(q_star.max(axis=1) - v))
    qe = [np.mean(q_err[n]) for n in ns]
    se = [np.mean(sub[n]) for n in ns]
    assert qe[0] > qe[1] > qe[2]
    assert se[0] >= se[1] >= se[2]
    slope = np.polyfit(np.log(ns), np.log(qe), 1)[0]
    assert -0.65 <= slope <= -0.35


# --- Q-learning and TD --------------------------------------------------------

def test_q_learning_full_step_is_value_iteration():
    mdp = deterministic_mdp(5, 3, 0.9, seed=3)
    q0 = np.zeros((5, 3))
    T = 30
    trace = value_iteration_trace(mdp, q0, T)
    for t in (1, 7, T):
        q = sync_q_learning(mdp, lambda _: 1.0, t, q0, RngStream(0))
        assert np.array_equal(q, trace[t])


def test_q_learning_single_action_equals_td():
    mrp = random_mdp(5, 1, 0.8, 1.0, RngStream(4))
    sched = LearningRateSchedule("rescaled-linear", 1.0, 500, 0.8)
    q = sync_q_learning(mrp, sched, 500, np.zeros((5, 1)), RngStream(9))
    v = sync_td_learning(mrp, sched, 500, np.zeros(5), RngStream(9))
    assert np.array_equal(q[:, 0], v)


def test_q_learning_bounds_and_errors(small_mdp):
    with pytest.raises(ValueError):
        sync_q_learning(small_mdp, lambda _: 0.5, 10, np.full((5, 3), 11.0), RngStream(0))
    with pytest.raises(ValueError):
        sync_q_learning(small_mdp, lambda _: 1.5, 10, np.zeros((5, 3)), RngStream(0))
    with pytest.raises(ValueError):
        sync_td_learning(small_mdp, lambda _: 0.5, 10, np.zeros(5), RngStream(0))


@given(seeds, st.floats(0.0, 0.99), st.floats(0.01, 1.0))
def test_q_learning_stays_in_range(seed, gamma, eta):
    rng = RngStream(seed)
    mdp = random_mdp(3, 2, gamma, 1.0, rng.substream(0))
    q0 = np.random.default_rng(seed).uniform(0, 1 / (1 - gamma), (3, 2))
    q = q0
    for t in range(20):
        q = sync_q_learning(mdp, lambda _: eta, 1, q, rng.substream(1, t))
        assert q.min() >= 0 and q.max() <= 1 / (1 - gamma) * (1 + 1e-12)


def test_q_learning_trace(small_mdp):
    q_star = optimal_q(small_mdp)
    sched = LearningRateSchedule("rescaled-linear", 1.0, 50, 0.9)
    q, trace = sync_q_learning(small_mdp, sched, 50, np.zeros((5, 3)), RngStream(1),
                               q_star=q_star, return_trace=True)
    assert [t for t, _ in trace] == list(range(1, 51))
    assert trace[-1][1] == pytest.approx(np.max(np.abs(q - q_star)))


def test_q_learning_accuracy():
    T, ok = 200_000, 0
    for seed in range(20):
        root = RngStream(seed)
        mdp = random_mdp(5, 3, 0.8, 1.0, root.substream(0))
        sched = LearningRateSchedule("rescaled-linear", 1.0, T, 0.8)
        q = sync_q_learning(mdp, sched, T, np.zeros((5, 3)), root.substream(1))
        ok += np.max(np.abs(q - optimal_q(mdp))) <= 0.1
    assert ok >= 18


def test_td_examples():
    # deterministic chain with full steps reproduces the evaluation recursion
    P = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    mrp = DiscountedMdp(P, np.array([[0.2], [0.5], [1.0]]), 0.5)
    v = np.zeros(3)
    for _ in range(12):
        v = mrp.reward[:, 0] + 0.5 * P @ v
    assert np.allclose(sync_td_learning(mrp, lambda _: 1.0, 12, np.zeros(3), RngStream(0)), v,
                       atol=1e-15)
    zero = mrp.with_reward(np.zeros((3, 1)))
    assert not sync_td_learning(zero, lambda _: 0.3, 50, np.zeros(3), RngStream(0)).any()


def test_td_accuracy():
    T, ok = 100_000, 0
    for seed in range(20):
        root = RngStream(seed)
        mrp = random_mdp(5, 1, 0.8, 1.0, root.substream(0))
        sched = LearningRateSchedule("rescaled-linear", 1.0, T, 0.8, log_power=2)
        v = sync_td_learning(mrp, sched, T, np.zeros(5), root.substream(1))
        v_true, _ = evaluate_policy(mrp, Policy.uniform(5, 1))
        ok += np.max(np.abs(v - v_true)) <= 0.1
    assert ok >= 18
