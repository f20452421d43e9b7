"""Distributionally robust MDPs with a total-variation uncertainty set.

The inner worst case over the TV ball is evaluated through its scalar dual,
maximised exactly by enumerating the breakpoints of a piecewise-linear
objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import TransitionDataset, empirical_kernel
from .mdp import DiscountedMdp, Policy, greedy_policy, _as_probs


@dataclass(frozen=True)
class RobustMdp:
    nominal: DiscountedMdp
    radius: float

    def __post_init__(self):
        if not 0.0 <= self.radius <= 1.0:
            raise ValueError(f"TV radius must lie in [0, 1], got {self.radius}")


def _dual_rows(P: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
    """Worst-case expectation of ``v`` for every row of ``P``.

    At ``alpha = v_j`` (``v`` sorted ascending) the dual objective equals
    ``sum_{i<=j} p_i v_i + v_j (1 - sum_{i<=j} p_i) - sigma (v_j - v_min)``;
    the answer is its maximum over ``j``.
    """
    order = np.argsort(v, kind="stable")
    vs = v[order]
    Ps = P[:, order]
    cum_p = np.cumsum(Ps, axis=1)
    cum_pv = np.cumsum(Ps * vs, axis=1)
    obj = cum_pv + vs * (1.0 - cum_p) - sigma * (vs - vs[0])
    return obj.max(axis=1)


def tv_worst_case(p, v, sigma: float) -> float:
    """``min_{q : TV(q, p) <= sigma} q.v`` for ``v >= 0``."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("value vector must be nonnegative")
    if p.shape != v.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {v.shape}")
    if sigma == 0.0:
        return float(p @ v)
    return float(_dual_rows(p[None], v, sigma)[0])


def robust_expectations(P: np.ndarray, v: np.ndarray, sigma: float) -> np.ndarray:
    """:func:`tv_worst_case` for every row of ``P`` at once."""
    if np.any(v < 0):
        raise ValueError("value vector must be nonnegative")
    if sigma == 0.0:
        return P @ v
    return _dual_rows(P, v, sigma)


def robust_bellman(rmdp: RobustMdp, q) -> np.ndarray:
    m = rmdp.nominal
    q = np.asarray(q, dtype=float)
    v = q.max(axis=1)
    return m.reward + m.discount * robust_expectations(m.transition, v, rmdp.radius).reshape(q.shape)


def drvi(rmdp: RobustMdp, iters: int) -> tuple[np.ndarray, Policy]:
    """Robust value iteration from zero; returns ``Q_T`` and its greedy policy."""
    if iters < 0:
        raise ValueError("iters must be nonnegative")
    q = np.zeros(rmdp.nominal.reward.shape)
    for _ in range(iters):
        q = robust_bellman(rmdp, q)
    return q, greedy_policy(q)


def robust_eval(rmdp: RobustMdp, pi, iters: int) -> np.ndarray:
    """Robust value of ``pi`` by fixed-point iteration from ``V = 0``."""
    m = rmdp.nominal
    probs = _as_probs(pi)
    v = np.zeros(m.num_states)
    for _ in range(iters):
        worst = robust_expectations(m.transition, v, rmdp.radius).reshape(m.reward.shape)
        v = np.sum(probs * (m.reward + m.discount * worst), axis=1)
    return v


def robust_learn(ds: TransitionDataset, reward, gamma: float, sigma: float, iters: int) -> Policy:
    """DRVI on the empirical nominal kernel built from generative samples."""
    emp = RobustMdp(DiscountedMdp(empirical_kernel(ds), reward, gamma), sigma)
    return drvi(emp, iters)[1]


def robust_suboptimality(rmdp: RobustMdp, pi, iters: int) -> float:
    """``max_s (V^{*,sigma} - V^{pi,sigma})(s)``."""
    q_star, _ = drvi(rmdp, iters)
    return float(np.max(q_star.max(axis=1) - robust_eval(rmdp, pi, iters)))
