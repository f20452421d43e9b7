"""Exact tabular MDP machinery.

Model containers for discounted and episodic MDPs, the Bellman optimality
operator, value/policy iteration, exact policy evaluation, discounted
occupancy measures and finite-horizon backward induction.

Conventions used throughout the package:

* transition kernels are stored as ``(S*A, S)`` row-stochastic arrays whose
  row ``s*A + a`` is ``P(. | s, a)``;
* Q-tables are ``(S, A)`` arrays and V-tables ``(S,)`` arrays;
* argmax ties are broken towards the lowest action index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DimensionError, NumericError

ROW_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def check_distribution(p, name: str = "distribution", tol: float = ROW_TOL) -> np.ndarray:
    """Validate a probability vector and return it as a float array."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def _check_kernel(P: np.ndarray, rows: int, S: int, name: str) -> None:
    if P.shape != (rows, S):
        raise DimensionError(f"{name} has shape {P.shape}, expected {(rows, S)}")
    if np.any(P < 0):
        raise ValueError(f"{name} has negative entries")
    dev = np.abs(P.sum(axis=1) - 1.0)
    if np.any(dev > ROW_TOL):
        bad = int(np.argmax(dev))
        raise ValueError(f"{name} row {bad} sums to {P[bad].sum()!r}")


@dataclass(frozen=True)
class DiscountedMdp:
    """Tabular discounted MDP ``(S, A, P, r, gamma)``.

    ``transition`` has shape ``(S*A, S)`` and ``reward`` shape ``(S, A)``.
    Rewards must lie in ``[0, 1]`` unless ``strict`` is False, which is used
    for internally constructed models such as reward-perturbed empirical MDPs.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    strict: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        reward = _frozen(self.reward)
        if reward.ndim != 2:
            raise DimensionError(f"reward must be (S, A), got shape {reward.shape}")
        S, A = reward.shape
        P = _frozen(self.transition)
        _check_kernel(P, S * A, S, "transition")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if not np.all(np.isfinite(reward)):
            raise ValueError("reward has non-finite entries")
        if self.strict and (reward.min() < 0.0 or reward.max() > 1.0):
            raise ValueError("rewards must lie in [0, 1]")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def horizon(self) -> float:
        """Effective horizon ``1 / (1 - gamma)``."""
        return 1.0 / (1.0 - self.discount)

    def kernel(self) -> np.ndarray:
        """Transition kernel viewed as an ``(S, A, S)`` array."""
        S, A = self.reward.shape
        return self.transition.reshape(S, A, S)

    def with_reward(self, reward, strict: bool = True) -> "DiscountedMdp":
        return DiscountedMdp(self.transition, reward, self.discount, strict=strict)

    def with_transition(self, transition) -> "DiscountedMdp":
        return DiscountedMdp(transition, self.reward, self.discount, strict=self.strict)

    def to_dict(self) -> dict:
        return {
            "S": self.num_states,
            "A": self.num_actions,
            "gamma": self.discount,
            "rewards": self.reward.tolist(),
            "transitions": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiscountedMdp":
        S, A = int(d["S"]), int(d["A"])
        reward = np.asarray(d["rewards"], dtype=float).reshape(S, A)
        P = np.asarray(d["transitions"], dtype=float).reshape(S * A, S)
        return cls(P, reward, float(d["gamma"]))


@dataclass(frozen=True)
class EpisodicMdp:
    """Non-stationary finite-horizon MDP ``(S, A, H, {P_h}, {r_h}, mu)``.

    ``transition`` has shape ``(H, S*A, S)``, ``reward`` shape ``(H, S, A)``;
    step ``h`` (1-based in the literature) is index ``h - 1`` here.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        reward = _frozen(self.reward)
        if reward.ndim != 3:
            raise DimensionError(f"reward must be (H, S, A), got shape {reward.shape}")
        H, S, A = reward.shape
        P = _frozen(self.transition)
        if P.shape != (H, S * A, S):
            raise DimensionError(f"transition has shape {P.shape}, expected {(H, S * A, S)}")
        for h in range(H):
            _check_kernel(P[h], S * A, S, f"transition[{h}]")
        if reward.min() < 0.0 or reward.max() > 1.0:
            raise ValueError("rewards must lie in [0, 1]")
        mu = check_distribution(self.initial, "initial distribution")
        if mu.shape != (S,):
            raise DimensionError(f"initial distribution has shape {mu.shape}, expected {(S,)}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "initial", _frozen(mu))

    @property
    def horizon(self) -> int:
        return self.reward.shape[0]

    @property
    def num_states(self) -> int:
        return self.reward.shape[1]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[2]

    def to_dict(self) -> dict:
        return {
            "S": self.num_states,
            "A": self.num_actions,
            "H": self.horizon,
            "rewards": self.reward.tolist(),
            "transitions": self.transition.tolist(),
            "mu": self.initial.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodicMdp":
        S, A, H = int(d["S"]), int(d["A"]), int(d["H"])
        reward = np.asarray(d["rewards"], dtype=float).reshape(H, S, A)
        P = np.asarray(d["transitions"], dtype=float).reshape(H, S * A, S)
        return cls(P, reward, np.asarray(d["mu"], dtype=float))


def save_mdp(mdp: Union[DiscountedMdp, EpisodicMdp], path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=1))


def load_mdp(path) -> Union[DiscountedMdp, EpisodicMdp]:
    """Load a model written by :func:`save_mdp`; the ``H`` key marks episodic models."""
    d = json.loads(Path(path).read_text())
    return EpisodicMdp.from_dict(d) if "H" in d else DiscountedMdp.from_dict(d)


@dataclass(frozen=True)
class Policy:
    """Stationary policy stored as an ``(S, A)`` row-stochastic matrix.

    Deterministic policies additionally keep their action vector in
    ``actions``; stochastic ones have ``actions = None``.
    """

    probs: np.ndarray
    actions: np.ndarray | None = None

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise DimensionError(f"policy must be (S, A), got shape {probs.shape}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("policy rows must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", probs)
        if self.actions is not None:
            acts = np.array(self.actions, dtype=np.int64)
            acts.setflags(write=False)
            object.__setattr__(self, "actions", acts)

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=np.int64)
        if actions.ndim != 1:
            raise DimensionError("deterministic policy needs a 1-d action vector")
        if np.any(actions < 0) or np.any(actions >= num_actions):
            raise ValueError("deterministic policy action out of range")
        probs = np.zeros((actions.size, num_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs, actions)

    @classmethod
    def stochastic(cls, probs) -> "Policy":
        return cls(np.asarray(probs, dtype=float))

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @property
    def kind(self) -> str:
        return "deterministic" if self.actions is not None else "stochastic"

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]


def _as_probs(pi) -> np.ndarray:
    return pi.probs if isinstance(pi, Policy) else np.asarray(pi, dtype=float)


def _check_q(mdp: DiscountedMdp, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != mdp.reward.shape:
        raise DimensionError(f"Q-table has shape {q.shape}, expected {mdp.reward.shape}")
    return q


def variance(q, v) -> float:
    """Variance of ``v`` under the distribution ``q``: ``q.v^2 - (q.v)^2``.

    Clipped at zero so cancellation never yields a negative result.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.shape != v.shape:
        raise DimensionError(f"length mismatch: {q.shape} vs {v.shape}")
    mean = q @ v
    return max(float(q @ (v * v) - mean * mean), 0.0)


def row_variances(P: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorised :func:`variance` for every row of a kernel."""
    mean = P @ v
    return np.maximum(P @ (v * v) - mean * mean, 0.0)


def state_values(q) -> np.ndarray:
    return np.asarray(q).max(axis=1)


def bellman_optimality(mdp: DiscountedMdp, q) -> np.ndarray:
    q = _check_q(mdp, q)
    v = q.max(axis=1)
    return mdp.reward + mdp.discount * (mdp.transition @ v).reshape(mdp.reward.shape)


def value_iteration(mdp: DiscountedMdp, q0, iters: int) -> np.ndarray:
    if iters < 0:
        raise ValueError("iters must be nonnegative")
    q = _check_q(mdp, q0).copy()
    for _ in range(iters):
        q = bellman_optimality(mdp, q)
    return q


def value_iteration_trace(mdp: DiscountedMdp, q0, iters: int) -> list[np.ndarray]:
    """All iterates ``Q_0, ..., Q_iters`` of value iteration."""
    q = _check_q(mdp, q0).copy()
    trace = [q]
    for _ in range(iters):
        q = bellman_optimality(mdp, q)
        trace.append(q)
    return trace


def stop_tolerance(discount: float) -> float:
    return (1.0 - discount) * 1e-10


def solve_value_iteration(mdp: DiscountedMdp, q0=None, max_iters: int = 1_000_000,
                          operator=None) -> tuple[np.ndarray, int]:
    """Iterate a contraction until successive iterates differ by at most
    ``(1 - gamma) * 1e-10`` in sup-norm, or ``max_iters`` is reached.

    ``operator`` defaults to the Bellman optimality operator of ``mdp``.
    Returns the final iterate and the number of iterations taken.
    """
    op = operator or (lambda q: bellman_optimality(mdp, q))
    q = np.zeros(mdp.reward.shape) if q0 is None else _check_q(mdp, q0)
    tol = stop_tolerance(mdp.discount)
    for k in range(1, max_iters + 1):
        q_next = op(q)
        if np.max(np.abs(q_next - q)) <= tol:
            return q_next, k
        q = q_next
    return q, max_iters


def greedy_policy(q) -> Policy:
    """Deterministic greedy policy; ``np.argmax`` returns the lowest maximiser."""
    q = np.asarray(q, dtype=float)
    return Policy.deterministic(np.argmax(q, axis=1), q.shape[1])


def _policy_matrices(mdp: DiscountedMdp, probs: np.ndarray):
    S, A = mdp.reward.shape
    if probs.shape != (S, A):
        raise DimensionError(f"policy has shape {probs.shape}, expected {(S, A)}")
    P_pi = np.einsum("sa,sat->st", probs, mdp.kernel())
    r_pi = np.sum(probs * mdp.reward, axis=1)
    return P_pi, r_pi


def evaluate_policy(mdp: DiscountedMdp, pi) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(V^pi, Q^pi)`` from the linear system ``(I - gamma P_pi) V = r_pi``."""
    probs = _as_probs(pi)
    P_pi, r_pi = _policy_matrices(mdp, probs)
    S = mdp.num_states
    M = np.eye(S) - mdp.discount * P_pi
    try:
        v = np.linalg.solve(M, r_pi)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"policy evaluation solve failed: {exc}") from exc
    if not np.all(np.isfinite(v)):
        raise NumericError("policy evaluation produced non-finite values")
    q = mdp.reward + mdp.discount * (mdp.transition @ v).reshape(mdp.reward.shape)
    return v, q


def policy_iteration(mdp: DiscountedMdp, pi0, iters: int) -> tuple[Policy, np.ndarray]:
    """Run ``iters`` rounds of exact policy iteration.

    Returns ``(pi_k, Q^{pi_k})``, so ``iters=0`` gives ``(pi0, Q^{pi0})``.
    """
    pi = pi0 if isinstance(pi0, Policy) else Policy.stochastic(pi0)
    _, q = evaluate_policy(mdp, pi)
    for _ in range(iters):
        pi = greedy_policy(q)
        _, q = evaluate_policy(mdp, pi)
    return pi, q


def policy_iteration_trace(mdp: DiscountedMdp, pi0, iters: int):
    """Lists of policies and Q-functions ``Q^{pi_0}, ..., Q^{pi_iters}``."""
    pi = pi0 if isinstance(pi0, Policy) else Policy.stochastic(pi0)
    _, q = evaluate_policy(mdp, pi)
    pis, qs = [pi], [q]
    for _ in range(iters):
        pi = greedy_policy(q)
        _, q = evaluate_policy(mdp, pi)
        pis.append(pi)
        qs.append(q)
    return pis, qs


def optimal_q(mdp: DiscountedMdp, max_rounds: int = 10_000) -> np.ndarray:
    """Exact ``Q*`` via policy iteration run until the greedy policy is stable."""
    pi = Policy.deterministic(np.zeros(mdp.num_states, dtype=int), mdp.num_actions)
    _, q = evaluate_policy(mdp, pi)
    for _ in range(max_rounds):
        nxt = greedy_policy(q)
        # keep the incumbent action on numerical ties to guarantee termination
        keep = q[np.arange(mdp.num_states), pi.actions] >= q.max(axis=1) - 1e-12
        acts = np.where(keep, pi.actions, nxt.actions)
        if np.array_equal(acts, pi.actions):
            return q
        pi = Policy.deterministic(acts, mdp.num_actions)
        _, q = evaluate_policy(mdp, pi)
    raise NumericError("policy iteration did not stabilise")


def occupancy(mdp: DiscountedMdp, pi, rho) -> np.ndarray:
    """Discounted state-action occupancy ``d_rho^pi`` as an ``(S, A)`` array."""
    probs = _as_probs(pi)
    rho = check_distribution(rho, "rho", tol=1e-9)
    P_pi, _ = _policy_matrices(mdp, probs)
    S = mdp.num_states
    d_state = np.linalg.solve((np.eye(S) - mdp.discount * P_pi).T, (1.0 - mdp.discount) * rho)
    d_state = np.maximum(d_state, 0.0)
    return d_state[:, None] * probs


def state_occupancy(mdp: DiscountedMdp, pi, rho) -> np.ndarray:
    return occupancy(mdp, pi, rho).sum(axis=1)


def backward_induction(mdp: EpisodicMdp):
    """Exact finite-horizon dynamic programming with ``V_{H+1} = 0``.

    Returns ``(Q, V, actions)`` with shapes ``(H, S, A)``, ``(H+1, S)`` and
    ``(H, S)``.
    """
    H, S, A = mdp.reward.shape
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    acts = np.zeros((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.reward[h] + (mdp.transition[h] @ V[h + 1]).reshape(S, A)
        acts[h] = np.argmax(Q[h], axis=1)
        V[h] = Q[h].max(axis=1)
    return Q, V, acts


def evaluate_episodic(mdp: EpisodicMdp, actions) -> tuple[np.ndarray, np.ndarray]:
    """Backward evaluation of a deterministic step-indexed policy ``actions[h, s]``."""
    H, S, A = mdp.reward.shape
    actions = np.asarray(actions, dtype=np.int64)
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    idx = np.arange(S)
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.reward[h] + (mdp.transition[h] @ V[h + 1]).reshape(S, A)
        V[h] = Q[h][idx, actions[h]]
    return Q, V


def iterations_for_tolerance(discount: float, eps: float = 1e-10) -> int:
    """``ceil(log(eps) / log(gamma))``; at least one iteration."""
    if discount == 0.0:
        return 1
    return max(1, math.ceil(math.log(eps) / math.log(discount)))
