"""Acceptance suite: each criterion is a function returning a :class:`Outcome`.

Criteria run on fixed seeds, so their measured values are reproducible;
the wall-clock budget is checked separately from the numerical verdict.
"""

from __future__ import annotations

import csv
import filecmp
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.special import softmax

from . import genmodel, offline, online, policy_opt, rlhf, robust
from .envs import (RngStream, collect_generative, draw_offline_dataset, random_episodic,
                   random_mdp)
from .harness.config import build_config
from .harness.runner import run_experiment
from .mdp import (Policy, evaluate_policy, greedy_policy, occupancy, optimal_q,
                  policy_iteration_trace, value_iteration_trace)

ROOT_SEED = 20250101


@dataclass
class Outcome:
    ident: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0
    budget: float = math.inf

    @property
    def within_budget(self) -> bool:
        return self.seconds < self.budget

    @property
    def ok(self) -> bool:
        return self.passed and self.within_budget

    def line(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        info = ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())
        return f"{verdict} [{self.ident}] {self.name} ({self.seconds:.1f}s / {self.budget:g}s) {info}"


def _short(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _stream(ident: int) -> RngStream:
    return RngStream(ROOT_SEED).substream(ident)


def contraction_and_linear_convergence() -> dict:
    """VI and PI satisfy ``||Q_k - Q*|| <= gamma^k ||Q_0 - Q*||`` for ``k <= 80``."""
    rng = _stream(1)
    gammas = (0.8, 0.9, 0.95)
    worst = -math.inf
    violations = 0
    for i in range(100):
        sub = rng.substream(i)
        S = 2 + int(sub.random() * 19)
        A = 1 + int(sub.random() * 5)
        gamma = gammas[i % 3]
        mdp = random_mdp(S, A, gamma, 1.0, sub.substream(0))
        q_star = optimal_q(mdp)
        q0 = sub.substream(1).uniform(0.0, mdp.horizon, size=(S, A))
        pi0 = Policy.deterministic((sub.substream(2).random(S) * A).astype(int), A)
        for qs in (value_iteration_trace(mdp, q0, 80), policy_iteration_trace(mdp, pi0, 80)[1]):
            err0 = np.max(np.abs(qs[0] - q_star))
            for k, q in enumerate(qs):
                excess = np.max(np.abs(q - q_star)) - gamma ** k * err0
                worst = max(worst, excess)
                violations += excess > 1e-9
    return {"passed": violations == 0, "violations": int(violations), "max_excess": float(worst)}


def tv_ball_lp(p, v, sigma) -> float:
    """``min q.v`` over ``{q in simplex : 0.5 ||q - p||_1 <= sigma}`` as a linear program.

    Variables are ``q`` and slack ``t >= |q - p|``.
    """
    S = len(p)
    c = np.concatenate([v, np.zeros(S)])
    eye = np.eye(S)
    A_ub = np.block([[eye, -eye], [-eye, -eye], [np.zeros((1, S)), np.ones((1, S))]])
    b_ub = np.concatenate([p, -p, [2.0 * sigma]])
    A_eq = np.concatenate([np.ones(S), np.zeros(S)])[None]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * (2 * S),
                  method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if not res.success:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    return float(res.fun)


def random_dual_case(rng: RngStream):
    g = rng.generator
    S = int(g.integers(1, 7))
    p = g.dirichlet(np.ones(S))
    if g.random() < 0.3:
        p[g.integers(S)] = 0.0
        p = p / p.sum() if p.sum() > 0 else np.full(S, 1.0 / S)
    v = g.random(S) * 10.0
    if S > 1 and g.random() < 0.3:
        v[g.integers(S)] = v[0]
    sigma = float(g.choice([0.0, 1.0, g.random()], p=[0.1, 0.1, 0.8]))
    return p, v, sigma


def robust_dual_exactness() -> dict:
    rng = _stream(2)
    worst = 0.0
    for i in range(500):
        p, v, sigma = random_dual_case(rng.substream(i))
        worst = max(worst, abs(robust.tv_worst_case(p, v, sigma) - tv_ball_lp(p, v, sigma)))
    return {"passed": worst <= 1e-9, "max_abs_diff": worst}


def robust_bellman_contraction() -> dict:
    rng = _stream(3)
    worst = -math.inf
    for i in range(200):
        sub = rng.substream(i)
        g = sub.generator
        S, A = int(g.integers(1, 8)), int(g.integers(1, 5))
        gamma = float(g.choice([0.5, 0.8, 0.9, 0.99]))
        rmdp = robust.RobustMdp(random_mdp(S, A, gamma, 1.0, sub.substream(0)), float(g.random()))
        q1 = g.random((S, A)) * rmdp.nominal.horizon
        q2 = g.random((S, A)) * rmdp.nominal.horizon
        lhs = np.max(np.abs(robust.robust_bellman(rmdp, q1) - robust.robust_bellman(rmdp, q2)))
        worst = max(worst, lhs - gamma * np.max(np.abs(q1 - q2)))
    return {"passed": worst <= 1e-12, "max_excess": float(worst)}


def offline_instance(seed: int, S=6, A=3, gamma=0.9, N=10_000, expert_weight=0.5):
    """Random MDP with a behavior distribution mixing ``d*`` and uniform, plus a dataset."""
    root = RngStream(seed)
    mdp = random_mdp(S, A, gamma, 1.0, root.substream(0))
    rho = np.full(S, 1.0 / S)
    q_star = optimal_q(mdp)
    d_star = occupancy(mdp, greedy_policy(q_star), rho)
    d_b = expert_weight * d_star + (1 - expert_weight) / (S * A)
    ds = draw_offline_dataset(mdp, d_b, N, root.substream(1))
    return mdp, ds, q_star


def vi_lcb_fixed_point(c_b_values=(144.0, 1.0)) -> dict:
    """Iterates from zero stay below the fixed point and reach it within ``1/N``."""
    N, gamma = 10_000, 0.9
    tau_max = offline.default_tau_max(N, gamma)
    below_fail = close_fail = 0
    worst_gap = 0.0
    max_value = {}
    for c_b in c_b_values:
        top = 0.0
        for i in range(20):
            mdp, ds, _ = offline_instance(ROOT_SEED + 400 + i, N=N, gamma=gamma)
            cfg = offline.PenaltyConfig(N, gamma, 0.1, c_b)
            _, q, trace = offline.vi_lcb(ds, mdp.reward, gamma, cfg, tau_max, return_trace=True)
            _, q_fix = offline.vi_lcb(ds, mdp.reward, gamma, cfg, 5 * tau_max)
            below_fail += any(np.any(t > q_fix) for t in trace)
            gap = float(np.max(np.abs(q - q_fix)))
            worst_gap = max(worst_gap, gap)
            close_fail += gap > 1.0 / N
            top = max(top, float(q_fix.max()))
        max_value[c_b] = top
    details = {"passed": below_fail == 0 and close_fail == 0, "tau_max": tau_max,
               "below_violations": below_fail, "gap_violations": close_fail, "max_gap": worst_gap}
    for c_b, top in max_value.items():
        details[f"max_Qpe(c_b={c_b:g})"] = top
    return details


def policy_opt_instances(n=20, S=5, A=4, gamma=0.9):
    rng = _stream(5)
    return [random_mdp(S, A, gamma, 1.0, rng.substream(i)) for i in range(n)]


def npg_sublinear() -> dict:
    eta, T_max = 1.0, 300
    worst = 0.0
    violations = 0
    for mdp in policy_opt_instances():
        S, A = mdp.reward.shape
        rho = np.full(S, 1.0 / S)
        v_star = rho @ optimal_q(mdp).max(axis=1)
        lp = policy_opt.LogitPolicy(np.zeros((S, A)))
        for T in range(1, T_max + 1):
            lp = policy_opt.npg_logit_step(lp, evaluate_policy(mdp, lp.probs)[1], eta, mdp.discount)
            gap = v_star - rho @ evaluate_policy(mdp, lp.probs)[0]
            bound = policy_opt.npg_bound(A, mdp.discount, eta, T)
            worst = max(worst, gap / bound)
            violations += gap > bound
    return {"passed": violations == 0, "violations": violations, "max_gap_over_bound": worst}


def entropy_npg_linear(tau=0.1) -> dict:
    worst = 0.0
    violations = 0
    for mdp in policy_opt_instances():
        S, A = mdp.reward.shape
        gamma = mdp.discount
        v_opt = policy_opt.soft_optimal(mdp, tau)[0].v_tau
        for eta in ((1 - gamma) / tau, 0.5 * (1 - gamma) ** 2 / tau):
            pi = Policy.uniform(S, A)
            for T in range(1, 201):
                q_tau = policy_opt.soft_evaluate(mdp, pi, tau).q_tau
                pi = policy_opt.entropy_npg_step(pi, q_tau, eta, tau, gamma)
                gap = np.max(np.abs(v_opt - policy_opt.soft_evaluate(mdp, pi, tau).v_tau))
                bound = policy_opt.entropy_npg_bound(A, gamma, eta, tau, T)
                worst = max(worst, gap / bound)
                violations += gap > bound
    return {"passed": violations == 0, "violations": violations, "max_gap_over_bound": worst}


def central_difference(f, x, h=1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_error(g, ref) -> float:
    """Sup-norm error relative to the larger sup-norm of the two gradients."""
    scale = max(np.max(np.abs(g)), np.max(np.abs(ref)), 1e-12)
    return float(np.max(np.abs(g - ref)) / scale)


def gradient_oracles(points=50) -> dict:
    rng = _stream(7)
    worst = {"direct": 0.0, "softmax": 0.0, "mle": 0.0, "dpo": 0.0, "vpo": 0.0}
    for i in range(points):
        sub = rng.substream(i)
        g = sub.generator
        S, A = int(g.integers(2, 6)), int(g.integers(2, 5))
        gamma = float(g.choice([0.5, 0.8, 0.9]))
        mdp = random_mdp(S, A, gamma, 1.0, sub.substream(0))
        rho = g.dirichlet(np.ones(S))
        probs = g.dirichlet(np.ones(A), size=S) * 0.9 + 0.1 / A
        value = lambda pi: rho @ evaluate_policy(mdp, pi)[0]
        worst["direct"] = max(worst["direct"], relative_error(
            policy_opt.direct_gradient(mdp, probs, rho), central_difference(value, probs)))
        theta = g.standard_normal((S, A))
        worst["softmax"] = max(worst["softmax"], relative_error(
            policy_opt.softmax_gradient(mdp, policy_opt.LogitPolicy(theta), rho),
            central_difference(lambda th: value(softmax(th, axis=1)), theta)))

        world = rlhf.random_world(int(g.integers(1, 4)), int(g.integers(2, 5)), sub.substream(1),
                                  beta=float(g.choice([0.5, 1.0, 2.0])))
        ds = rlhf.sample_preferences(world, world.pi_ref, 40, sub.substream(2))
        r = g.standard_normal(world.true_reward.shape)
        worst["mle"] = max(worst["mle"], relative_error(
            rlhf.mle_loss(r, ds)[1], central_difference(lambda x: rlhf.mle_loss(x, ds)[0], r)))
        th = g.standard_normal(world.true_reward.shape)
        worst["dpo"] = max(worst["dpo"], relative_error(
            rlhf.dpo_loss(world, th, ds)[1],
            central_difference(lambda x: rlhf.dpo_loss(world, x, ds)[0], th)))
        alpha, sign = float(g.random() * 2), int(g.choice([-1, 1]))
        worst["vpo"] = max(worst["vpo"], relative_error(
            rlhf.vpo_loss(world, th, ds, alpha, sign)[1],
            central_difference(lambda x: rlhf.vpo_loss(world, x, ds, alpha, sign)[0], th)))
    details = {"passed": all(v <= 1e-5 for v in worst.values())}
    details.update({f"max_rel_err_{k}": v for k, v in worst.items()})
    return details


def scaling_laws() -> dict:
    """Model-based error slope versus per-pair samples, and the Q-learning gap."""
    S, A = 6, 3
    sizes = (100, 1_000, 10_000)
    errors = {N: [] for N in sizes}
    for seed in range(20):
        root = RngStream(ROOT_SEED + 800 + seed)
        mdp = random_mdp(S, A, 0.9, 1.0, root.substream(0))
        q_star = optimal_q(mdp)
        for N in sizes:
            ds = collect_generative(mdp, N, root.substream(1, N))
            _, q = genmodel.model_based_plan(ds, mdp.reward, mdp.discount)
            errors[N].append(float(np.max(np.abs(q - q_star))))
    means = np.array([np.mean(errors[N]) for N in sizes])
    fit = float(np.polyfit(np.log(sizes), np.log(means), 1)[0])

    N = 10_000
    wins = 0
    for seed in range(20):
        root = RngStream(ROOT_SEED + 900 + seed)
        mdp = random_mdp(S, A, 0.95, 1.0, root.substream(0))
        q_star = optimal_q(mdp)
        ds = collect_generative(mdp, N, root.substream(1))
        _, q_mb = genmodel.model_based_plan(ds, mdp.reward, mdp.discount)
        sched = genmodel.LearningRateSchedule("rescaled-linear", 1.0, N, mdp.discount)
        q_ql = genmodel.sync_q_learning(mdp, sched, N, np.zeros((S, A)), root.substream(2))
        wins += np.max(np.abs(q_ql - q_star)) >= np.max(np.abs(q_mb - q_star))
    return {"passed": -0.65 <= fit <= -0.35 and wins >= 15, "slope": fit,
            "mean_err_1e2": float(means[0]), "mean_err_1e3": float(means[1]),
            "mean_err_1e4": float(means[2]), "qlearning_worse_seeds": int(wins)}


ONLINE_C_B = 0.25


def online_sublinearity(c_b: float = ONLINE_C_B) -> dict:
    mdp = random_episodic(4, 2, 5, RngStream(ROOT_SEED + 900))
    r500, r2000, log = [], [], []
    for seed in range(20):
        trace, _ = online.run_online(mdp, 2000, 0.1, "hoeffding", "every-episode",
                                     RngStream(seed), c_b, log)
        cum = trace.cumulative
        r500.append(cum[499])
        r2000.append(cum[-1])
    ratio = float(np.median(r2000) / np.median(r500))
    rate = float(np.mean(log))
    return {"passed": ratio <= 2.5 and rate >= 0.95, "regret_ratio": ratio,
            "median_regret_500": float(np.median(r500)), "median_regret_2000": float(np.median(r2000)),
            "optimism_rate": rate, "c_b": c_b}


def rlhf_identities() -> dict:
    world = rlhf.random_world(4, 5, _stream(10).substream(0))
    ds = rlhf.sample_preferences(world, world.pi_ref, 1000, _stream(10).substream(1))
    theta_ref = np.log(world.pi_ref)
    dpo_at_ref = rlhf.dpo_loss(world, theta_ref, ds)[0]
    exact = dpo_at_ref == len(ds) * math.log(2)
    theta = _stream(10).substream(2).generator.standard_normal(world.true_reward.shape)
    dpo_val, dpo_grad = rlhf.dpo_loss(world, theta, ds)
    vpo_val, vpo_grad = rlhf.vpo_loss(world, theta, ds, 0.0, 1)
    bitwise = dpo_val == vpo_val and np.array_equal(dpo_grad, vpo_grad)

    n = 100_000
    z_max = 0.0
    for i, gap in enumerate((0.0, 0.4, 1.1, 2.5)):
        w = rlhf.PrefWorld(np.ones(1), np.array([[gap / 2, -gap / 2]]), np.full((1, 2), 0.5), 1.0)
        pairs = rlhf.sample_preferences(w, w.pi_ref, n, _stream(10).substream(3, i))
        p = rlhf.bt_prob(w.true_reward, 0, 0, 1)
        freq = np.mean(pairs.y_plus == 0)
        z_max = max(z_max, abs(freq - p) / math.sqrt(p * (1 - p) / n))
    return {"passed": bool(exact and bitwise and z_max <= 6.0), "dpo_at_ref_exact": bool(exact),
            "alpha0_bitwise": bool(bitwise), "max_binomial_z": float(z_max)}


DETERMINISM_CONFIGS = [
    {"kind": "plan", "seeds": [0, 1], "algo.method": "pi", "algo.iters": 5},
    {"kind": "gen-model", "seeds": [0, 1], "sweep.param": "algo.N", "sweep.values": [10, 100]},
    {"kind": "gen-model", "seeds": [2], "algo.learner": "q-learning", "algo.N": 200},
    {"kind": "online", "seeds": [0], "algo.K": 50, "algo.refresh": "doubling"},
    {"kind": "offline", "seeds": [0, 1], "algo.N": 500, "algo.c_b": 1.0},
    {"kind": "robust", "seeds": [0], "algo.N": 50},
    {"kind": "policy-opt", "seeds": [0], "algo.method": "entropy-npg", "algo.tau": 0.1,
     "algo.eta": 1.0, "algo.T": 20},
    {"kind": "rlhf", "seeds": [0], "algo.T": 2, "algo.batch": 20},
    {"kind": "rlhf", "seeds": [0], "algo.mode": "offline-vpo", "algo.n": 200, "algo.steps": 20},
]


def determinism() -> dict:
    """Every experiment kind, run twice, writes byte-identical ``results.csv``."""
    mismatches = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, raw in enumerate(DETERMINISM_CONFIGS):
            cfg = build_config(raw)
            a, b = Path(tmp, f"{i}a"), Path(tmp, f"{i}b")
            run_experiment(cfg, a)
            run_experiment(cfg, b)
            if not filecmp.cmp(a / "results.csv", b / "results.csv", shallow=False):
                mismatches.append(raw["kind"])
    return {"passed": not mismatches, "configs": len(DETERMINISM_CONFIGS),
            "mismatched": ";".join(mismatches) or "none"}


CRITERIA = {
    1: ("contraction and linear convergence of VI/PI", contraction_and_linear_convergence, 10),
    2: ("robust dual equals LP over the TV ball", robust_dual_exactness, 30),
    3: ("robust Bellman operator is a gamma-contraction", robust_bellman_contraction, 30),
    4: ("VI-LCB monotone convergence to its fixed point", vi_lcb_fixed_point, 60),
    5: ("NPG sublinear bound", npg_sublinear, 60),
    6: ("entropy-regularised NPG linear rate", entropy_npg_linear, 60),
    7: ("gradient oracles", gradient_oracles, 60),
    8: ("sample-size scaling and Q-learning gap", scaling_laws, 300),
    9: ("online regret sublinearity and optimism", online_sublinearity, 120),
    10: ("RLHF identities", rlhf_identities, 30),
    11: ("byte-identical reruns", determinism, 120),
}


def run_criterion(ident: int) -> Outcome:
    name, fn, budget = CRITERIA[ident]
    start = time.perf_counter()
    details = fn()
    seconds = time.perf_counter() - start
    passed = bool(details.pop("passed"))
    return Outcome(ident, name, passed, details, seconds, budget)


def write_report(outcomes, out_dir) -> None:
    """``verify.csv`` (deterministic columns) and ``verify_timings.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "verify.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["criterion", "name", "numeric_pass", "details"])
        for o in outcomes:
            info = ";".join(f"{k}={v!r}" for k, v in o.details.items())
            w.writerow([o.ident, o.name, str(o.passed).lower(), info])
    with open(out / "verify_timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["criterion", "seconds", "budget_s", "within_budget"])
        for o in outcomes:
            w.writerow([o.ident, f"{o.seconds:.3f}", o.budget, str(o.within_budget).lower()])
