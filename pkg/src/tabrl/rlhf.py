"""Tabular preference-optimisation sandbox.

Prompts ``x`` and answers ``y`` are indices; rewards and policies are
``(X, Y)`` tables. Policies being optimised are parameterised by softmax
logits, one row per prompt.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, log_expit, softmax

from .envs import RngStream, cumulative
from .errors import NumericError


@dataclass(frozen=True)
class PrefWorld:
    """Prompt distribution, true reward and reference/calibration/behavior policies.

    ``pi_cal`` and ``pi_b`` default to ``pi_ref``.
    """

    rho: np.ndarray
    true_reward: np.ndarray
    pi_ref: np.ndarray
    beta: float
    pi_cal: np.ndarray | None = None
    pi_b: np.ndarray | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        r = np.asarray(self.true_reward, dtype=float)
        X, Y = r.shape
        fields = {"rho": np.asarray(self.rho, dtype=float), "true_reward": r}
        for name in ("pi_ref", "pi_cal", "pi_b"):
            val = getattr(self, name)
            val = fields["pi_ref"] if val is None else np.asarray(val, dtype=float)
            if val.shape != (X, Y):
                raise ValueError(f"{name} has shape {val.shape}, expected {(X, Y)}")
            if np.any(val < 0) or np.any(np.abs(val.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError(f"{name} rows must be distributions")
            fields[name] = val
        if np.any(fields["pi_ref"] <= 0):
            raise ValueError("pi_ref must be strictly positive")
        rho = fields["rho"]
        if rho.shape != (X,) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-9:
            raise ValueError("rho must be a distribution over prompts")
        for name, val in fields.items():
            val = val.copy()
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def num_prompts(self) -> int:
        return self.true_reward.shape[0]

    @property
    def num_answers(self) -> int:
        return self.true_reward.shape[1]

    def calibration_gap(self, r=None) -> float:
        """``E_{x~rho, y~pi_cal}[r(x, y)]``; zero for calibrated rewards."""
        r = self.true_reward if r is None else np.asarray(r, dtype=float)
        return float(self.rho @ np.sum(self.pi_cal * r, axis=1))


def calibrate(r, pi_cal) -> np.ndarray:
    """Subtract the per-prompt ``pi_cal`` mean, landing in the calibrated class."""
    r = np.asarray(r, dtype=float)
    return r - np.sum(pi_cal * r, axis=1, keepdims=True)


def random_world(X: int, Y: int, rng: RngStream, beta: float = 1.0, reward_scale: float = 1.0) -> PrefWorld:
    """Uniform prompts, Dirichlet(1) reference policy, calibrated Gaussian-like rewards."""
    g = rng.generator
    pi_ref = g.dirichlet(np.ones(Y), size=X)
    pi_ref = np.maximum(pi_ref, 1e-3)
    pi_ref /= pi_ref.sum(axis=1, keepdims=True)
    r = calibrate(reward_scale * g.standard_normal((X, Y)), pi_ref)
    return PrefWorld(np.full(X, 1.0 / X), r, pi_ref, beta)


@dataclass
class PreferenceDataset:
    """Triples ``(x, y_plus, y_minus)`` stored as three integer columns."""

    x: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    y_plus: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    y_minus: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y_plus = np.asarray(self.y_plus, dtype=np.int64)
        self.y_minus = np.asarray(self.y_minus, dtype=np.int64)
        if not self.x.shape == self.y_plus.shape == self.y_minus.shape:
            raise ValueError("dataset columns must have equal length")

    def __len__(self):
        return self.x.size

    def extend(self, other: "PreferenceDataset") -> "PreferenceDataset":
        return PreferenceDataset(np.concatenate([self.x, other.x]),
                                 np.concatenate([self.y_plus, other.y_plus]),
                                 np.concatenate([self.y_minus, other.y_minus]))

    def check(self, X: int, Y: int) -> None:
        if len(self) and (self.x.min() < 0 or self.x.max() >= X
                          or min(self.y_plus.min(), self.y_minus.min()) < 0
                          or max(self.y_plus.max(), self.y_minus.max()) >= Y):
            raise IndexError("dataset index out of range")


def bt_prob(r, x: int, y1: int, y2: int) -> float:
    """Probability that ``y1`` beats ``y2`` on prompt ``x``."""
    r = np.asarray(r, dtype=float)
    return float(expit(r[x, y1] - r[x, y2]))


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.sum(cdf_rows <= u[:, None], axis=1)


def sample_preferences(world: PrefWorld, generator, n: int, rng: RngStream) -> PreferenceDataset:
    """``n`` labelled comparisons with answers drawn from ``generator``.

    Pairs with identical answers are redrawn.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    gen = np.asarray(generator, dtype=float)
    if world.num_answers < 2:
        raise ValueError("need at least two answers to compare")
    if np.any((np.count_nonzero(gen > 0, axis=1) < 2) & (world.rho > 0)):
        raise ValueError("generator must support two answers on every prompt")
    x = np.searchsorted(cumulative(world.rho), rng.random(n), side="right")
    cdf = cumulative(gen)
    y1 = _draw(cdf[x], rng.random(n))
    y2 = _draw(cdf[x], rng.random(n))
    same = np.nonzero(y1 == y2)[0]
    while same.size:
        y2[same] = _draw(cdf[x[same]], rng.random(same.size))
        same = same[y1[same] == y2[same]]
    win = rng.random(n) < expit(world.true_reward[x, y1] - world.true_reward[x, y2])
    return PreferenceDataset(x, np.where(win, y1, y2), np.where(win, y2, y1))


def mle_loss(r, ds: PreferenceDataset) -> tuple[float, np.ndarray]:
    """Negative Bradley-Terry log-likelihood and its gradient in ``r``."""
    r = np.asarray(r, dtype=float)
    d = r[ds.x, ds.y_plus] - r[ds.x, ds.y_minus]
    loss = -math.fsum(log_expit(d))
    w = expit(-d)
    grad = np.zeros_like(r)
    np.add.at(grad, (ds.x, ds.y_plus), -w)
    np.add.at(grad, (ds.x, ds.y_minus), w)
    return loss, grad


def _check_support(world: PrefWorld, pi: np.ndarray) -> None:
    if np.any((pi > 0) & (world.pi_ref <= 0)):
        raise ValueError("policy puts mass outside the reference support")


def kl_value(world: PrefWorld, r, pi) -> float:
    """``E[r] - beta E_x KL(pi(.|x) || pi_ref(.|x))``."""
    r = np.asarray(r, dtype=float)
    pi = np.asarray(pi, dtype=float)
    _check_support(world, pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(pi > 0, np.log(pi) - np.log(world.pi_ref), 0.0)
    kl = np.sum(pi * log_ratio, axis=1)
    return float(world.rho @ (np.sum(pi * r, axis=1) - world.beta * kl))


def closed_form_policy(world: PrefWorld, r) -> np.ndarray:
    """``pi_r(y|x) ~ pi_ref(y|x) exp(r(x, y) / beta)``."""
    return softmax(np.log(world.pi_ref) + np.asarray(r, dtype=float) / world.beta, axis=1)


def reward_from_policy(world: PrefWorld, pi, calibrated: bool = True) -> np.ndarray:
    """Implicit reward ``beta log(pi / pi_ref)``, optionally calibrated."""
    r = world.beta * (np.log(np.asarray(pi, dtype=float)) - np.log(world.pi_ref))
    return calibrate(r, world.pi_cal) if calibrated else r


def log_policy(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    m = theta.max(axis=1, keepdims=True)
    return theta - m - np.log(np.sum(np.exp(theta - m), axis=1, keepdims=True))


def dpo_loss(world: PrefWorld, theta, ds: PreferenceDataset) -> tuple[float, np.ndarray]:
    """DPO loss of the softmax policy with logits ``theta`` and its gradient.

    Losses are summed with :func:`math.fsum`, so ``|D|`` identical terms add
    up to exactly ``|D|`` times that term.
    """
    theta = np.asarray(theta, dtype=float)
    # the log-partition cancels inside each comparison, so work with raw logits
    shifted = theta - np.log(world.pi_ref)
    m = world.beta * (shifted[ds.x, ds.y_plus] - shifted[ds.x, ds.y_minus])
    loss = -math.fsum(log_expit(m))
    w = world.beta * expit(-m)
    grad = np.zeros_like(theta)
    np.add.at(grad, (ds.x, ds.y_plus), -w)
    np.add.at(grad, (ds.x, ds.y_minus), w)
    return loss, grad


def vpo_regularizer(world: PrefWorld, theta, alpha: float, sign: int,
                    form: str = "logprob") -> tuple[float, np.ndarray]:
    """``sign * alpha * beta * E_{x~rho, y~pi_cal}[log pi(y|x)]`` and its gradient.

    ``form="kl"`` subtracts ``log pi_cal`` inside the expectation, which
    shifts the value by a constant and leaves the gradient unchanged.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 (online) or -1 (offline)")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    logp = log_policy(theta)
    cal = world.pi_cal
    if form == "logprob":
        inner = np.sum(cal * logp, axis=1)
    elif form == "kl":
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.sum(np.where(cal > 0, cal * (logp - np.log(cal)), 0.0), axis=1)
    else:
        raise ValueError(f"unknown regularizer form {form!r}")
    scale = sign * alpha * world.beta
    value = scale * float(world.rho @ inner)
    grad = scale * world.rho[:, None] * (cal - np.exp(logp))
    return value, grad


def vpo_loss(world: PrefWorld, theta, ds: PreferenceDataset, alpha: float, sign: int,
             form: str = "logprob") -> tuple[float, np.ndarray]:
    """DPO loss plus the signed value regulariser."""
    loss, grad = dpo_loss(world, theta, ds)
    if alpha == 0:
        return loss, grad
    reg, reg_grad = vpo_regularizer(world, theta, alpha, sign, form)
    return loss + reg, grad + reg_grad


def optimize_logits(loss_fn: Callable, theta0, steps: int, lr: float):
    """Full-batch gradient descent; returns ``(theta, loss_trace)``.

    ``loss_trace[k]`` is the loss at the k-th iterate, so it has
    ``steps + 1`` entries.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if lr <= 0:
        raise ValueError("lr must be positive")
    theta = np.array(theta0, dtype=float)
    trace = []
    for k in range(steps + 1):
        loss, grad = loss_fn(theta)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite loss or gradient at step {k}: loss={loss}, "
                               f"max|theta|={np.max(np.abs(theta)):.3g}")
        trace.append(float(loss))
        if k < steps:
            theta = theta - lr * grad
    return theta, trace


@dataclass
class VpoRound:
    round: int
    true_value_J: float
    dpo_term: float
    regularizer_term: float


def online_vpo(world: PrefWorld, T: int, alpha: float, batch_per_round: int, rng: RngStream,
               steps: int = 25, lr: float = 0.5, theta0=None):
    """Online VPO: collect comparisons from the current policy, then refit.

    Each round takes ``steps`` warm-started gradient steps of size
    ``lr / |D|``, so the effective step size does not grow with the
    dataset. Returns ``(policies, dataset, rounds)`` where
    ``policies[0]`` is the initial policy.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    theta = np.log(world.pi_ref) if theta0 is None else np.array(theta0, dtype=float)
    ds = PreferenceDataset()
    policies = [softmax(theta, axis=1)]
    rounds = []
    for t in range(1, T + 1):
        batch = sample_preferences(world, policies[-1], batch_per_round, rng.substream(t))
        ds = ds.extend(batch)
        step = lr / max(len(ds), 1)
        theta, _ = optimize_logits(lambda th: vpo_loss(world, th, ds, alpha, 1), theta, steps, step)
        pi = softmax(theta, axis=1)
        policies.append(pi)
        dpo, _ = dpo_loss(world, theta, ds)
        reg = vpo_regularizer(world, theta, alpha, 1)[0] if alpha else 0.0
        rounds.append(VpoRound(t, kl_value(world, world.true_reward, pi), dpo, reg))
    return policies, ds, rounds


def write_rounds(path, rounds) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "true_value_J", "dpo_term", "regularizer_term"])
        for r in rounds:
            w.writerow([r.round, repr(r.true_value_J), repr(r.dpo_term), repr(r.regularizer_term)])
