"""Pessimistic offline learning: VI-LCB with a Bernstein-style penalty, and
single-policy concentrability diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import TransitionDataset, empirical_kernel
from .mdp import (DiscountedMdp, Policy, evaluate_policy, greedy_policy, occupancy,
                  optimal_q, variance)


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty knobs. ``N`` is the total number of samples in the dataset."""

    N: int
    gamma: float
    delta: float = 0.1
    c_b: float = 144.0

    def __post_init__(self):
        if self.c_b <= 0:
            raise ValueError("c_b must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def log_term(self) -> float:
        return math.log(self.N / ((1.0 - self.gamma) * self.delta))


def bernstein_penalty(cfg: PenaltyConfig, n_sa: int, p_hat_row, v) -> float:
    """Penalty for one pair visited ``n_sa`` times; unvisited pairs get the clamp."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("value vector must be nonnegative")
    cap = 1.0 / (1.0 - cfg.gamma)
    if n_sa == 0:
        return cap + 5.0 / cfg.N
    L = cfg.log_term
    inner = max(math.sqrt(cfg.c_b * L / n_sa * variance(p_hat_row, v)),
                2.0 * cfg.c_b * L / ((1.0 - cfg.gamma) * n_sa))
    return min(inner, cap) + 5.0 / cfg.N


def penalty_table(cfg: PenaltyConfig, p_hat: np.ndarray, visits: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorised :func:`bernstein_penalty` over all ``(s, a)`` rows, shape ``(S*A,)``."""
    p_hat = np.asarray(p_hat, dtype=float)
    ev = p_hat @ v
    var = np.maximum(p_hat @ (v * v) - ev * ev, 0.0)
    n = np.asarray(visits, dtype=float)
    L = cfg.log_term
    cap = 1.0 / (1.0 - cfg.gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = np.maximum(np.sqrt(cfg.c_b * L * var / n), 2.0 * cfg.c_b * L / ((1.0 - cfg.gamma) * n))
    inner = np.where(n == 0, np.inf, inner)
    return np.minimum(inner, cap) + 5.0 / cfg.N


def pessimistic_bellman(q, p_hat, reward, gamma: float, cfg: PenaltyConfig, visits,
                        penalty: np.ndarray | None = None) -> np.ndarray:
    """``max{r + gamma P_hat v - b(v), 0}`` with ``v = max_a q``.

    Penalties are recomputed from ``v`` unless a fixed ``(S*A,)`` ``penalty``
    is passed.
    """
    q = np.asarray(q, dtype=float)
    S, A = q.shape
    v = q.max(axis=1)
    b = penalty_table(cfg, p_hat, visits, v) if penalty is None else np.asarray(penalty, dtype=float)
    out = np.asarray(reward, dtype=float) + (gamma * (p_hat @ v) - b).reshape(S, A)
    return np.maximum(out, 0.0)


def default_tau_max(N: int, gamma: float) -> int:
    """``ceil(log(N/(1-gamma)) / log(1/gamma))``."""
    return max(1, math.ceil(math.log(N / (1.0 - gamma)) / math.log(1.0 / gamma)))


def vi_lcb(ds: TransitionDataset, reward, gamma: float, cfg: PenaltyConfig,
           tau_max: int | None = None, return_trace: bool = False):
    """Offline value iteration with lower confidence bounds, started from zero.

    Returns ``(policy, q)``, plus the list of iterates ``Q_0..Q_tau_max`` when
    ``return_trace`` is set.
    """
    tau_max = default_tau_max(cfg.N, gamma) if tau_max is None else int(tau_max)
    if tau_max < 1:
        raise ValueError("tau_max must be at least 1")
    p_hat = empirical_kernel(ds)
    visits = ds.visits
    q = np.zeros((ds.num_states, ds.num_actions))
    trace = [q]
    for _ in range(tau_max):
        q = pessimistic_bellman(q, p_hat, reward, gamma, cfg, visits)
        if return_trace:
            trace.append(q)
    pi = greedy_policy(q)
    return (pi, q, trace) if return_trace else (pi, q)


def concentrability(mdp: DiscountedMdp, pi_star, rho, behavior, clipped: bool = False) -> float:
    """Single-policy concentrability ``max d*(s,a) / d_b(s,a)``.

    The clipped variant caps the numerator at ``1/S``. Returns ``inf`` when
    the behavior distribution misses a pair that ``d*`` charges.
    """
    d_star = occupancy(mdp, pi_star, rho)
    d_b = np.asarray(behavior, dtype=float).reshape(d_star.shape)
    num = np.minimum(d_star, 1.0 / mdp.num_states) if clipped else d_star
    charged = num > 0
    if np.any(charged & (d_b <= 0)):
        return math.inf
    if not np.any(charged):
        return 0.0
    return float(np.max(num[charged] / d_b[charged]))


def suboptimality(mdp: DiscountedMdp, pi: Policy, rho, v_star=None) -> float:
    """``V*(rho) - V^pi(rho)``."""
    rho = np.asarray(rho, dtype=float)
    if v_star is None:
        v_star = optimal_q(mdp).max(axis=1)
    return float(rho @ v_star - rho @ evaluate_policy(mdp, pi)[0])
