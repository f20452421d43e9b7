"""Exact-gradient policy optimisation on tabular MDPs.

Projected policy gradient (direct parameterisation), softmax policy
gradient, natural policy gradient, and entropy-regularised NPG, together
with soft policy evaluation and soft value iteration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .mdp import (DiscountedMdp, Policy, _as_probs, _policy_matrices, check_distribution,
                  evaluate_policy, state_occupancy)


@dataclass(frozen=True)
class LogitPolicy:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 2:
            raise ValueError("logits must be an (S, A) array")
        if not np.all(np.isfinite(theta)):
            raise ValueError("logits must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.theta, axis=1)

    def policy(self) -> Policy:
        return Policy.stochastic(self.probs)

    @classmethod
    def from_probs(cls, probs) -> "LogitPolicy":
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise ValueError("logits exist only for strictly positive policies")
        return cls(np.log(probs))


@dataclass(frozen=True)
class SoftValues:
    v_tau: np.ndarray
    q_tau: np.ndarray
    tau: float


def value_at(mdp: DiscountedMdp, pi, rho) -> float:
    return float(np.asarray(rho, dtype=float) @ evaluate_policy(mdp, pi)[0])


def direct_gradient(mdp: DiscountedMdp, pi, rho) -> np.ndarray:
    """``dV(rho)/dpi(a|s) = d_rho^pi(s) Q^pi(s, a) / (1 - gamma)``."""
    _, q = evaluate_policy(mdp, pi)
    d = state_occupancy(mdp, pi, rho)
    return d[:, None] * q / (1.0 - mdp.discount)


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project non-finite vectors")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def projected_pg_step(mdp: DiscountedMdp, pi, rho, eta: float) -> Policy:
    if eta <= 0:
        raise ValueError("eta must be positive")
    probs = _as_probs(pi)
    raw = probs + eta * direct_gradient(mdp, probs, rho)
    return Policy.stochastic(np.stack([simplex_project(row) for row in raw]))


def softmax_gradient(mdp: DiscountedMdp, lp: LogitPolicy, rho) -> np.ndarray:
    """``dV(rho)/dtheta(s,a) = d_rho(s) pi(a|s) A(s, a) / (1 - gamma)``."""
    probs = lp.probs
    v, q = evaluate_policy(mdp, probs)
    d = state_occupancy(mdp, probs, rho)
    return d[:, None] * probs * (q - v[:, None]) / (1.0 - mdp.discount)


def softmax_pg_step(mdp: DiscountedMdp, lp: LogitPolicy, rho, eta: float) -> LogitPolicy:
    if eta <= 0:
        raise ValueError("eta must be positive")
    return LogitPolicy(lp.theta + eta * softmax_gradient(mdp, lp, rho))


def _interior(pi) -> np.ndarray:
    probs = _as_probs(pi)
    if np.any(probs <= 0):
        raise ValueError("policy must be strictly positive")
    return probs


def _mirror_step(log_weights: np.ndarray) -> Policy:
    return Policy.stochastic(softmax(log_weights, axis=1))


def npg_step(pi, q, eta: float, gamma: float) -> Policy:
    """Multiplicative weights: ``pi'(a|s) ~ pi(a|s) exp(eta Q(s,a) / (1 - gamma))``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    probs = _interior(pi)
    return _mirror_step(np.log(probs) + eta * np.asarray(q, dtype=float) / (1.0 - gamma))


def npg_logit_step(lp: LogitPolicy, q, eta: float, gamma: float) -> LogitPolicy:
    """:func:`npg_step` in logit coordinates, ``theta += eta Q / (1 - gamma)``.

    Long runs should iterate in this form: probabilities of dominated
    actions shrink geometrically and eventually underflow to zero, while the
    logits stay finite.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    theta = lp.theta + eta * np.asarray(q, dtype=float) / (1.0 - gamma)
    return LogitPolicy(theta - theta.max(axis=1, keepdims=True))


def entropy_npg_step(pi, q_tau, eta: float, tau: float, gamma: float) -> Policy:
    """``pi'(a|s) ~ pi(a|s)^(1 - eta tau/(1-gamma)) exp(eta Q_tau(s,a) / (1-gamma))``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if not 0 < eta <= (1.0 - gamma) / tau * (1 + 1e-12):
        raise ValueError(f"eta must lie in (0, (1-gamma)/tau], got {eta}")
    probs = _interior(pi)
    keep = max(1.0 - eta * tau / (1.0 - gamma), 0.0)
    return _mirror_step(keep * np.log(probs) + eta * np.asarray(q_tau, dtype=float) / (1.0 - gamma))


def soft_evaluate(mdp: DiscountedMdp, pi, tau: float) -> SoftValues:
    """Entropy-regularised values by an exact linear solve."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    probs = _as_probs(pi)
    if tau == 0:
        v, q = evaluate_policy(mdp, probs)
        return SoftValues(v, q, 0.0)
    if np.any(probs <= 0):
        raise ValueError("soft evaluation needs a strictly positive policy when tau > 0")
    P_pi, r_pi = _policy_matrices(mdp, probs)
    r_pi = r_pi - tau * np.sum(probs * np.log(probs), axis=1)
    S = mdp.num_states
    v = np.linalg.solve(np.eye(S) - mdp.discount * P_pi, r_pi)
    q = mdp.reward + mdp.discount * (mdp.transition @ v).reshape(mdp.reward.shape)
    return SoftValues(v, q, float(tau))


def soft_bellman(mdp: DiscountedMdp, q, tau: float) -> np.ndarray:
    v = tau * logsumexp(np.asarray(q) / tau, axis=1)
    return mdp.reward + mdp.discount * (mdp.transition @ v).reshape(mdp.reward.shape)


def soft_optimal(mdp: DiscountedMdp, tau: float, iters: int | None = None) -> tuple[SoftValues, Policy]:
    """Soft value iteration from zero.

    Without ``iters`` the loop runs until successive iterates agree to
    ``1e-13`` relative to the value scale.
    """
    if tau <= 0:
        raise ValueError("tau must be positive; use value iteration for tau = 0")
    q = np.zeros(mdp.reward.shape)
    if iters is None:
        tol = 1e-13 * (1.0 + tau * math.log(mdp.num_actions)) / (1.0 - mdp.discount)
        for _ in range(1_000_000):
            nxt = soft_bellman(mdp, q, tau)
            done = np.max(np.abs(nxt - q)) <= tol
            q = nxt
            if done:
                break
    else:
        for _ in range(iters):
            q = soft_bellman(mdp, q, tau)
    v = tau * logsumexp(q / tau, axis=1)
    pi = Policy.stochastic(softmax(q / tau, axis=1))
    return SoftValues(v, q, float(tau)), pi


def distribution_mismatch(mdp: DiscountedMdp, pi_star, rho) -> float:
    """``|| d_rho^{pi*} / rho ||_inf`` (``inf`` if ``rho`` has zeros)."""
    rho = check_distribution(rho, "rho", tol=1e-9)
    d = state_occupancy(mdp, pi_star, rho)
    if np.any(rho <= 0):
        return math.inf
    return float(np.max(d / rho))


def projected_pg_bound(S: int, gamma: float, mismatch: float, gap0: float, eta: float, T: int) -> float:
    """Right-hand side of the projected-PG convergence guarantee at horizon ``T``."""
    return 4.0 * math.sqrt(S) / (1.0 - gamma) * mismatch * math.sqrt(2.0 * gap0 / (eta * T))


def npg_bound(A: int, gamma: float, eta: float, T: int) -> float:
    return (math.log(A) / eta + 1.0 / (1.0 - gamma) ** 2) / T


def entropy_npg_bound(A: int, gamma: float, eta: float, tau: float, T: int) -> float:
    return 15.0 * (1.0 + tau * math.log(A)) / (1.0 - gamma) * (1.0 - eta * tau) ** (T - 1)


def write_trace(path, rows) -> None:
    """CSV with ``t, value_at_rho, linf_gap_to_opt`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "value_at_rho", "linf_gap_to_opt"])
        for t, val, gap in rows:
            w.writerow([int(t), repr(float(val)), repr(float(gap))])
