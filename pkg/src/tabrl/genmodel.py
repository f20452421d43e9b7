"""Learners that query a generative model: plug-in model-based planning
(optionally with random reward perturbation) and synchronous Q-learning /
TD learning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import RngStream, TransitionDataset, cumulative, empirical_kernel
from .mdp import DiscountedMdp, Policy, greedy_policy, solve_value_iteration


@dataclass(frozen=True)
class LearningRateSchedule:
    """Rescaled-linear or iteration-invariant step sizes.

    ``log_power`` is the exponent on ``log T`` in the denominator (3 for
    Q-learning; TD learning's guarantee is stated with 2).
    """

    kind: str
    c: float
    horizon_T: int
    discount: float
    log_power: int = 3

    def __post_init__(self):
        if self.kind not in ("rescaled-linear", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.c <= 0:
            raise ValueError("schedule coefficient c must be positive")
        if self.horizon_T < 2:
            raise ValueError("schedules need T >= 2 so that log T > 0")


def learning_rate(sched: LearningRateSchedule, t: int) -> float:
    if not 0 <= t <= sched.horizon_T:
        raise ValueError(f"t={t} outside [0, {sched.horizon_T}]")
    scale = sched.c * (1.0 - sched.discount) / math.log(sched.horizon_T) ** sched.log_power
    step = t if sched.kind == "rescaled-linear" else sched.horizon_T
    return 1.0 / (1.0 + scale * step)


def learning_rates(sched: LearningRateSchedule) -> np.ndarray:
    """``eta_1, ..., eta_T`` as an array."""
    return np.array([learning_rate(sched, t) for t in range(1, sched.horizon_T + 1)])


@dataclass(frozen=True)
class PerturbationConfig:
    xi: float = 0.0

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("perturbation size must be nonnegative")


def default_perturbation(S: int, A: int, gamma: float, eps: float, c1: float = 1.0) -> float:
    """Perturbation magnitude ``c1 (1 - gamma) eps / (S^5 A^5)``."""
    return c1 * (1.0 - gamma) * eps / (S ** 5 * A ** 5)


def perturb_rewards(mdp: DiscountedMdp, cfg: PerturbationConfig, rng: RngStream) -> DiscountedMdp:
    """Add i.i.d. ``Unif(0, xi)`` noise to every reward entry."""
    if cfg.xi == 0.0:
        return mdp
    zeta = rng.uniform(0.0, cfg.xi, size=mdp.reward.shape)
    return mdp.with_reward(mdp.reward + zeta, strict=False)


def model_based_plan(ds: TransitionDataset, reward, gamma: float,
                     cfg: PerturbationConfig = PerturbationConfig(),
                     rng: RngStream | None = None) -> tuple[Policy, np.ndarray]:
    """Plan in the empirical MDP built from ``ds`` (optionally reward-perturbed)."""
    emp = DiscountedMdp(empirical_kernel(ds), reward, gamma)
    if cfg.xi > 0:
        if rng is None:
            raise ValueError("a random stream is required when xi > 0")
        emp = perturb_rewards(emp, cfg, rng)
    q, _ = solve_value_iteration(emp)
    return greedy_policy(q), q


def _sync_updates(transition, reward, gamma, etas, q0, rng, q_star=None, block=1024):
    """Shared synchronous stochastic-approximation loop.

    Each iteration consumes one uniform per ``(s, a)`` row in row-major order
    from ``rng``; variates are drawn in blocks, which leaves the consumed
    sequence unchanged.
    """
    S, A = reward.shape
    cdf = cumulative(transition)
    q = np.array(q0, dtype=float)
    trace = []
    T = len(etas)
    for start in range(0, T, block):
        n = min(block, T - start)
        nxt_block = np.sum(cdf[None] <= rng.random((n, S * A))[:, :, None], axis=2)
        for i in range(n):
            v = q.max(axis=1)
            target = reward + gamma * v[nxt_block[i]].reshape(S, A)
            eta = etas[start + i]
            q = (1.0 - eta) * q + eta * target
            if q_star is not None:
                trace.append((start + i + 1, float(np.max(np.abs(q - q_star)))))
    return q, trace


def sync_q_learning(mdp: DiscountedMdp, sched, T: int, q0, rng: RngStream,
                    q_star=None, return_trace: bool = False):
    """Synchronous Q-learning with a generative model.

    ``sched`` is a :class:`LearningRateSchedule` or any callable ``t -> eta``.
    With ``q_star`` and ``return_trace`` the per-iteration sup-norm error is
    also returned as a list of ``(t, linf_error)``.
    """
    q0 = np.asarray(q0, dtype=float)
    if q0.shape != mdp.reward.shape:
        raise ValueError(f"q0 has shape {q0.shape}, expected {mdp.reward.shape}")
    if q0.min() < 0 or q0.max() > mdp.horizon:
        raise ValueError("q0 must lie in [0, 1/(1-gamma)]")
    etas = _etas(sched, T)
    q, trace = _sync_updates(mdp.transition, mdp.reward, mdp.discount, etas, q0, rng, q_star)
    return (q, trace) if return_trace else q


def sync_td_learning(mrp: DiscountedMdp, sched, T: int, v0, rng: RngStream):
    """Synchronous TD(0) on a Markov reward process (an MDP with ``A = 1``)."""
    if mrp.num_actions != 1:
        raise ValueError("TD learning needs a single-action model")
    v0 = np.asarray(v0, dtype=float).reshape(-1)
    if v0.min() < 0 or v0.max() > mrp.horizon:
        raise ValueError("v0 must lie in [0, 1/(1-gamma)]")
    etas = _etas(sched, T)
    q, _ = _sync_updates(mrp.transition, mrp.reward, mrp.discount, etas, v0[:, None], rng)
    return q[:, 0]


def _etas(sched, T: int) -> np.ndarray:
    if isinstance(sched, LearningRateSchedule):
        if sched.horizon_T != T:
            raise ValueError("schedule horizon does not match T")
        etas = learning_rates(sched)
    else:
        etas = np.array([float(sched(t)) for t in range(1, T + 1)])
    if np.any(etas <= 0) or np.any(etas > 1):
        raise ValueError("learning rates must lie in (0, 1]")
    return etas
