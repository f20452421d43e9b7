"""Optimistic model-based learner for episodic MDPs.

UCB value iteration over the empirical kernels, with Hoeffding- or
Bernstein-style bonuses. Two refresh modes are supported:

* ``"every-episode"`` recomputes the optimistic tables before each episode;
* ``"doubling"`` (MVP-inspired) freezes each ``(s, a, h)`` model snapshot
  until that tuple's visit count reaches a power of two, and only then ends
  the epoch and recomputes the tables.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .envs import RngStream, cumulative
from .mdp import EpisodicMdp, backward_induction, evaluate_episodic, row_variances


def bonus(n: int, h: int, H: int, log_term: float, kind: str = "hoeffding",
          variance_estimate: float | None = None, c_b: float = 1.0) -> float:
    """Exploration bonus for a tuple visited ``n`` times at step ``h`` (1-based).

    ``log_term`` is ``log(S A H K / delta)``; unvisited tuples get ``H``.
    """
    if n < 0:
        raise ValueError("visit count must be nonnegative")
    if n == 0:
        return float(H)
    span = H - h + 1
    if kind == "hoeffding":
        return c_b * span * math.sqrt(log_term / n)
    if kind == "bernstein":
        if variance_estimate is None:
            raise ValueError("bernstein bonus needs a variance estimate")
        return c_b * (math.sqrt(max(variance_estimate, 0.0) * log_term / n) + span * log_term / n)
    raise ValueError(f"unknown bonus kind {kind!r}")


def log_term(S: int, A: int, H: int, K: int, delta: float) -> float:
    return math.log(S * A * H * max(K, 1) / delta)


def _bonus_table(n: np.ndarray, h: int, H: int, L: float, kind: str,
                 var: np.ndarray | None, c_b: float) -> np.ndarray:
    span = H - h + 1
    safe = np.maximum(n, 1)
    if kind == "hoeffding":
        b = c_b * span * np.sqrt(L / safe)
    elif kind == "bernstein":
        b = c_b * (np.sqrt(np.maximum(var, 0.0) * L / safe) + span * L / safe)
    else:
        raise ValueError(f"unknown bonus kind {kind!r}")
    return np.where(n == 0, float(H), b)


@dataclass
class OnlineState:
    """Counters, model snapshots and optimistic tables of the learner.

    ``counts``/``visits`` are live statistics; ``snap_counts``/``snap_visits``
    are what the last refresh used (identical to the live ones in
    every-episode mode).
    """

    counts: np.ndarray
    visits: np.ndarray
    snap_counts: np.ndarray
    snap_visits: np.ndarray
    q: np.ndarray
    v: np.ndarray
    policy: np.ndarray
    episode: int = 0
    epoch: int = 0
    snapshot_updates: np.ndarray = field(default=None)

    @classmethod
    def fresh(cls, S: int, A: int, H: int) -> "OnlineState":
        zeros_c = np.zeros((H, S * A, S), dtype=np.int64)
        zeros_v = np.zeros((H, S * A), dtype=np.int64)
        return cls(
            counts=zeros_c.copy(), visits=zeros_v.copy(),
            snap_counts=zeros_c.copy(), snap_visits=zeros_v.copy(),
            q=np.full((H, S, A), float(H)), v=np.zeros((H + 1, S)),
            policy=np.zeros((H, S), dtype=np.int64),
            snapshot_updates=np.zeros((H, S * A), dtype=np.int64),
        )

    @property
    def horizon(self) -> int:
        return self.q.shape[0]

    def empirical_kernels(self) -> np.ndarray:
        """Snapshot kernels ``P_hat_h``; unvisited rows are uniform."""
        S = self.counts.shape[2]
        P = np.full(self.snap_counts.shape, 1.0 / S)
        seen = self.snap_visits > 0
        P[seen] = self.snap_counts[seen] / self.snap_visits[seen][:, None]
        return P


def ucb_refresh(state: OnlineState, reward: np.ndarray, delta: float, kind: str = "hoeffding",
                num_episodes: int = 1, c_b: float = 1.0, kernels: np.ndarray | None = None,
                zero_bonus: bool = False) -> OnlineState:
    """Backward optimistic value iteration on the snapshot model (in place).

    ``kernels`` substitutes a model for the empirical one and ``zero_bonus``
    disables the bonuses; together they give the exact-model reduction.
    """
    H, S, A = reward.shape
    P = state.empirical_kernels() if kernels is None else kernels
    L = log_term(S, A, H, num_episodes, delta)
    state.v[H] = 0.0
    for h in range(H - 1, -1, -1):
        v_next = state.v[h + 1]
        var = row_variances(P[h], v_next) if kind == "bernstein" else None
        b = np.zeros(S * A) if zero_bonus else _bonus_table(state.snap_visits[h], h + 1, H, L, kind, var, c_b)
        q = reward[h] + (P[h] @ v_next + b).reshape(S, A)
        state.q[h] = np.clip(q, 0.0, H)
        state.policy[h] = np.argmax(state.q[h], axis=1)
        state.v[h] = state.q[h].max(axis=1)
    return state


@dataclass
class RegretTrace:
    optimal: list = field(default_factory=list)
    achieved: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    @property
    def gaps(self) -> np.ndarray:
        return np.asarray(self.optimal) - np.asarray(self.achieved)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.gaps)

    def __len__(self):
        return len(self.optimal)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "instant_gap", "cumulative_regret", "epoch_index"])
            for k, (g, c, e) in enumerate(zip(self.gaps, self.cumulative, self.epochs), start=1):
                w.writerow([k, repr(float(g)), repr(float(c)), e])


def regret_summary(trace: RegretTrace) -> tuple[float, list]:
    gaps = trace.gaps
    return float(gaps.sum()) if len(gaps) else 0.0, gaps.tolist()


def _is_power_of_two(n: np.ndarray) -> np.ndarray:
    return (n > 0) & ((n & (n - 1)) == 0)


def run_online(mdp: EpisodicMdp, K: int, delta: float, kind: str = "hoeffding",
               refresh: str = "every-episode", rng: RngStream | None = None,
               c_b: float = 1.0, optimism_log: list | None = None):
    """Run ``K`` episodes and record regret against the true model.

    If ``optimism_log`` is a list, one boolean per refresh is appended telling
    whether ``Q_h >= Q_h*`` held entrywise.
    """
    if refresh not in ("every-episode", "doubling"):
        raise ValueError(f"unknown refresh mode {refresh!r}")
    if K < 0:
        raise ValueError("K must be nonnegative")
    rng = rng if rng is not None else RngStream(0)
    H, S, A = mdp.reward.shape
    q_star, v_star, _ = backward_induction(mdp)
    state = OnlineState.fresh(S, A, H)
    trace = RegretTrace()
    init_cdf = cumulative(mdp.initial)
    cdf = cumulative(mdp.transition)
    value_cache: dict[bytes, np.ndarray] = {}

    def do_refresh():
        ucb_refresh(state, mdp.reward, delta, kind, K, c_b)
        if optimism_log is not None:
            optimism_log.append(bool(np.all(state.q >= q_star - 1e-12)))

    do_refresh()
    for k in range(K):
        if refresh == "every-episode" and k > 0:
            state.snap_counts[...] = state.counts
            state.snap_visits[...] = state.visits
            do_refresh()
        key = state.policy.tobytes()
        if key not in value_cache:
            value_cache.clear()
            value_cache[key] = evaluate_episodic(mdp, state.policy)[1][0]
        u = rng.random(H + 1)
        s = int(np.searchsorted(init_cdf, u[0], side="right"))
        trace.optimal.append(float(v_star[0, s]))
        trace.achieved.append(float(value_cache[key][s]))
        trace.epochs.append(state.epoch)
        for h in range(H):
            a = int(state.policy[h, s])
            row = s * A + a
            nxt = int(np.searchsorted(cdf[h, row], u[h + 1], side="right"))
            state.counts[h, row, nxt] += 1
            state.visits[h, row] += 1
            s = nxt
        state.episode = k + 1
        if refresh == "doubling":
            hit = _is_power_of_two(state.visits) & (state.visits != state.snap_visits)
            if np.any(hit):
                state.snap_counts[hit] = state.counts[hit]
                state.snap_visits[hit] = state.visits[hit]
                state.snapshot_updates[hit] += 1
                state.epoch += 1
                do_refresh()
    return trace, state
