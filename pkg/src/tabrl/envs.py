"""Seeded sampling layer: generative-model queries, episodic rollouts,
offline datasets and random instance generators.

All randomness flows through :class:`RngStream`, a thin wrapper around
numpy's PCG64 bit generator keyed by a :class:`numpy.random.SeedSequence`.
PCG64 output and ``Generator.random`` doubles are stable across platforms,
so equal seeds give bitwise-equal samples everywhere.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .mdp import DiscountedMdp, EpisodicMdp, check_distribution


class RngStream:
    """Deterministic random stream identified by ``(seed, key)``.

    ``substream(*key)`` derives an independent child stream; children with
    distinct keys never overlap, which is how parallel trials stay
    reproducible regardless of execution order.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def substream(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def random(self, size=None):
        """Uniform variates on ``[0, 1)``."""
        return self.generator.random(size)

    def uniform(self, low: float, high: float, size=None):
        return low + (high - low) * self.generator.random(size)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices out of ``range(n)``."""
        return self.generator.choice(n, size=k, replace=False)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


def as_stream(rng) -> RngStream:
    return rng if isinstance(rng, RngStream) else RngStream(int(rng))


def cumulative(P: np.ndarray) -> np.ndarray:
    """Row-wise CDFs normalised so the last entry of every row is exactly 1."""
    c = np.cumsum(np.asarray(P, dtype=float), axis=-1)
    return c / c[..., -1:]


def inverse_cdf(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index of the first CDF entry exceeding ``u``, one variate per row."""
    return np.sum(cdf_rows <= u[..., None], axis=-1)


@dataclass
class TransitionDataset:
    """Counted transitions ``counts[s*A + a, s']``.

    ``samples`` optionally keeps the raw ``(s, a, s')`` triples in draw order
    (offline datasets keep them, generative datasets only keep counts).
    """

    counts: np.ndarray
    num_states: int
    num_actions: int
    samples: np.ndarray | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        SA, S = self.num_states * self.num_actions, self.num_states
        if self.counts.shape != (SA, S):
            raise ValueError(f"counts has shape {self.counts.shape}, expected {(SA, S)}")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def visits(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path) -> None:
        """Write one ``s,a,s_next`` row per sample.

        Count-only datasets are expanded in ``(s, a, s')`` order.
        """
        triples = self.samples
        if triples is None:
            rows, cols = np.nonzero(self.counts)
            reps = self.counts[rows, cols]
            rows, cols = np.repeat(rows, reps), np.repeat(cols, reps)
            triples = np.stack([rows // self.num_actions, rows % self.num_actions, cols], axis=1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "a", "s_next"])
            w.writerows(triples.tolist())

    @classmethod
    def from_csv(cls, path, num_states: int, num_actions: int) -> "TransitionDataset":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            triples = np.array([[int(r["s"]), int(r["a"]), int(r["s_next"])] for r in reader],
                               dtype=np.int64).reshape(-1, 3)
        return from_triples(triples, num_states, num_actions)

    def save_counts(self, path) -> None:
        np.savetxt(path, self.counts, fmt="%d", delimiter=",")


def from_triples(triples, num_states: int, num_actions: int) -> TransitionDataset:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    rows = triples[:, 0] * num_actions + triples[:, 1]
    flat = rows * num_states + triples[:, 2]
    counts = np.bincount(flat, minlength=num_states * num_actions * num_states)
    return TransitionDataset(counts.reshape(-1, num_states), num_states, num_actions, triples)


@dataclass(frozen=True)
class Step:
    h: int
    state: int
    action: int
    reward: float
    next_state: int


def sample_next_state(mdp: DiscountedMdp, s: int, a: int, rng: RngStream) -> int:
    """One generative-model query ``s' ~ P(. | s, a)`` by inverse CDF."""
    S, A = mdp.num_states, mdp.num_actions
    if not (0 <= s < S and 0 <= a < A):
        raise IndexError(f"state-action ({s}, {a}) out of range for S={S}, A={A}")
    cdf = cumulative(mdp.transition[s * A + a])
    return int(np.searchsorted(cdf, rng.random(), side="right"))


def collect_generative(mdp: DiscountedMdp, n_per_pair: int, rng: RngStream) -> TransitionDataset:
    """Draw ``n_per_pair`` independent next states for every ``(s, a)``,
    visiting pairs in row-major order."""
    if n_per_pair < 1:
        raise ValueError("n_per_pair must be at least 1")
    S = mdp.num_states
    cdf = cumulative(mdp.transition)
    counts = np.zeros_like(cdf, dtype=np.int64)
    for row in range(cdf.shape[0]):
        nxt = np.searchsorted(cdf[row], rng.random(n_per_pair), side="right")
        counts[row] = np.bincount(nxt, minlength=S)
    return TransitionDataset(counts, S, mdp.num_actions)


def empirical_kernel(ds: TransitionDataset) -> np.ndarray:
    """Empirical transition frequencies; unvisited rows become uniform ``1/S``."""
    visits = ds.visits
    P = np.full(ds.counts.shape, 1.0 / ds.num_states)
    seen = visits > 0
    P[seen] = ds.counts[seen] / visits[seen, None]
    return P


def rollout_episode(mdp: EpisodicMdp, actions, rng: RngStream) -> list[Step]:
    """Run the deterministic step-indexed policy ``actions[h, s]`` for one episode."""
    H, S, A = mdp.reward.shape
    actions = np.asarray(actions, dtype=np.int64)
    s = int(np.searchsorted(cumulative(mdp.initial), rng.random(), side="right"))
    trace = []
    for h in range(H):
        a = int(actions[h, s])
        nxt = int(np.searchsorted(cumulative(mdp.transition[h, s * A + a]), rng.random(), side="right"))
        trace.append(Step(h + 1, s, a, float(mdp.reward[h, s, a]), nxt))
        s = nxt
    return trace


def draw_offline_dataset(mdp: DiscountedMdp, behavior, n: int, rng: RngStream) -> TransitionDataset:
    """``n`` i.i.d. transitions with ``(s, a) ~ behavior`` and ``s' ~ P(. | s, a)``.

    ``behavior`` is an ``(S, A)`` (or flattened) distribution over pairs.
    """
    S, A = mdp.num_states, mdp.num_actions
    d_b = check_distribution(np.ravel(behavior), "behavior distribution", tol=1e-9)
    if d_b.size != S * A:
        raise ValueError(f"behavior distribution has {d_b.size} entries, expected {S * A}")
    if n < 0:
        raise ValueError("n must be nonnegative")
    u_pair, u_next = rng.random(n), rng.random(n)
    pairs = np.searchsorted(cumulative(d_b), u_pair, side="right")
    cdf = cumulative(mdp.transition)
    nxt = np.empty(n, dtype=np.int64)
    chunk = max(1, 2_000_000 // max(S, 1))
    for i in range(0, n, chunk):
        nxt[i:i + chunk] = inverse_cdf(cdf[pairs[i:i + chunk]], u_next[i:i + chunk])
    triples = np.stack([pairs // A, pairs % A, nxt], axis=1)
    return from_triples(triples, S, A)


def _random_rows(rows: int, S: int, sparsity: float, rng: RngStream) -> np.ndarray:
    if not 0.0 < sparsity <= 1.0:
        raise ValueError("sparsity must lie in (0, 1]")
    k = max(1, math.ceil(sparsity * S - 1e-9))
    P = np.zeros((rows, S))
    for i in range(rows):
        support = rng.choice(S, k)
        w = rng.random(k) + 1e-12
        P[i, support] = w / w.sum()
    return P


def random_mdp(S: int, A: int, gamma: float, sparsity: float, rng: RngStream) -> DiscountedMdp:
    """Random instance: each row has ``ceil(sparsity*S)`` supported next states
    with normalised uniform weights; rewards uniform on ``[0, 1]``."""
    if S < 1 or A < 1:
        raise ValueError("S and A must be positive")
    P = _random_rows(S * A, S, sparsity, rng)
    reward = rng.random((S, A))
    return DiscountedMdp(P, reward, gamma)


def random_episodic(S: int, A: int, H: int, rng: RngStream, sparsity: float = 1.0) -> EpisodicMdp:
    if S < 1 or A < 1 or H < 1:
        raise ValueError("S, A and H must be positive")
    P = np.stack([_random_rows(S * A, S, sparsity, rng) for _ in range(H)])
    reward = rng.random((H, S, A))
    mu = rng.random(S) + 1e-12
    return EpisodicMdp(P, reward, mu / mu.sum())

