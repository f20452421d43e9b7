"""Seeded experiment orchestration and CSV emission.

One run per ``(sweep value, seed)``. Every run draws from
``RngStream(seed)`` substreams, so results do not depend on execution
order. ``results.csv`` holds only deterministic columns; wall-clock times
go to ``timings.csv``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import genmodel, offline, online, policy_opt, rlhf, robust
from ..envs import (RngStream, collect_generative, draw_offline_dataset, random_episodic,
                    random_mdp)
from ..mdp import (DiscountedMdp, EpisodicMdp, Policy, evaluate_policy, greedy_policy,
                   iterations_for_tolerance, load_mdp, occupancy, optimal_q, policy_iteration_trace,
                   value_iteration_trace)
from .config import ExperimentConfig

# substream keys; fixed so that adding a new consumer never shifts old ones
INSTANCE, DATA, LEARN, PERTURB = 0, 1, 2, 3


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    sweep_value: object
    metrics: dict = field(default_factory=dict)
    wall_clock: float = 0.0


def _fmt(v) -> str:
    """Shortest round-trip text for floats; plain text otherwise."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _instance_stream(p: dict, seed: int) -> RngStream:
    fixed = p.get("instance.seed")
    return RngStream(fixed) if fixed is not None else RngStream(seed).substream(INSTANCE)


def _discounted(p: dict, seed: int) -> DiscountedMdp:
    if p.get("instance.path"):
        mdp = load_mdp(p["instance.path"])
        if not isinstance(mdp, DiscountedMdp):
            raise ValueError(f"{p['instance.path']} is not a discounted model")
        return mdp
    return random_mdp(p["instance.S"], p["instance.A"], p["instance.gamma"],
                      p["instance.sparsity"], _instance_stream(p, seed))


def _uniform_rho(S: int) -> np.ndarray:
    return np.full(S, 1.0 / S)


def run_plan(p: dict, seed: int) -> dict:
    mdp = _discounted(p, seed)
    q_star = optimal_q(mdp)
    if p["algo.method"] == "vi":
        qs = value_iteration_trace(mdp, np.zeros(mdp.reward.shape), p["algo.iters"])
    else:
        pi0 = Policy.deterministic(np.zeros(mdp.num_states, dtype=int), mdp.num_actions)
        _, qs = policy_iteration_trace(mdp, pi0, p["algo.iters"])
    return {"linf_error": float(np.max(np.abs(qs[-1] - q_star))),
            "initial_error": float(np.max(np.abs(qs[0] - q_star)))}


def run_gen_model(p: dict, seed: int) -> dict:
    mdp = _discounted(p, seed)
    q_star = optimal_q(mdp)
    root = RngStream(seed)
    N = p["algo.N"]
    if p["algo.learner"] == "model-based":
        ds = collect_generative(mdp, N, root.substream(DATA))
        cfg = genmodel.PerturbationConfig(p["algo.xi"])
        pi, q = genmodel.model_based_plan(ds, mdp.reward, mdp.discount, cfg, root.substream(PERTURB))
    else:
        sched = genmodel.LearningRateSchedule(p["algo.schedule"], p["algo.c"], N, mdp.discount,
                                              p["algo.log_power"])
        q = genmodel.sync_q_learning(mdp, sched, N, np.zeros(mdp.reward.shape), root.substream(LEARN))
        pi = greedy_policy(q)
    v_star = q_star.max(axis=1)
    return {"q_linf_error": float(np.max(np.abs(q - q_star))),
            "subopt": float(np.max(v_star - evaluate_policy(mdp, pi)[0])),
            "samples": N * mdp.num_states * mdp.num_actions}


def run_online(p: dict, seed: int) -> dict:
    if p.get("instance.path"):
        mdp = load_mdp(p["instance.path"])
        if not isinstance(mdp, EpisodicMdp):
            raise ValueError(f"{p['instance.path']} is not an episodic model")
    else:
        mdp = random_episodic(p["instance.S"], p["instance.A"], p["instance.H"],
                              _instance_stream(p, seed), p["instance.sparsity"])
    log: list = []
    trace, state = online.run_online(mdp, p["algo.K"], p["algo.delta"], p["algo.bonus"],
                                     p["algo.refresh"], RngStream(seed).substream(LEARN),
                                     p["algo.c_b"], log)
    total, _ = online.regret_summary(trace)
    K = p["algo.K"]
    quarter = float(trace.cumulative[K // 4 - 1]) if K >= 4 else math.nan
    return {"regret": total, "regret_quarter": quarter, "epochs": state.epoch,
            "optimism_rate": float(np.mean(log)) if log else math.nan}


def _behavior(mdp: DiscountedMdp, p: dict, pi_star: Policy, rho) -> np.ndarray:
    d_star = occupancy(mdp, pi_star, rho)
    uniform = np.full(d_star.shape, 1.0 / d_star.size)
    kind = p["algo.behavior"]
    if kind == "expert":
        return d_star
    if kind == "uniform":
        return uniform
    w = p["algo.expert_weight"]
    return w * d_star + (1.0 - w) * uniform


def run_offline(p: dict, seed: int) -> dict:
    mdp = _discounted(p, seed)
    rho = _uniform_rho(mdp.num_states)
    q_star = optimal_q(mdp)
    pi_star = greedy_policy(q_star)
    d_b = _behavior(mdp, p, pi_star, rho)
    ds = draw_offline_dataset(mdp, d_b, p["algo.N"], RngStream(seed).substream(DATA))
    cfg = offline.PenaltyConfig(p["algo.N"], mdp.discount, p["algo.delta"], p["algo.c_b"])
    pi, _ = offline.vi_lcb(ds, mdp.reward, mdp.discount, cfg, p["algo.tau_max"])
    return {"c_star": offline.concentrability(mdp, pi_star, rho, d_b),
            "c_star_clipped": offline.concentrability(mdp, pi_star, rho, d_b, clipped=True),
            "subopt_gap": offline.suboptimality(mdp, pi, rho, q_star.max(axis=1))}


def run_robust(p: dict, seed: int) -> dict:
    mdp = _discounted(p, seed)
    sigma = p["algo.sigma"]
    iters = p["algo.iters"] or iterations_for_tolerance(mdp.discount, 1e-10)
    ds = collect_generative(mdp, p["algo.N"], RngStream(seed).substream(DATA))
    pi = robust.robust_learn(ds, mdp.reward, mdp.discount, sigma, iters)
    return {"robust_subopt": robust.robust_suboptimality(robust.RobustMdp(mdp, sigma), pi, iters)}


def policy_opt_trace(mdp: DiscountedMdp, p: dict) -> list:
    """``(t, value_at_rho, linf_gap_to_opt)`` rows for ``t = 0..T``.

    The gap is measured against the soft optimum for entropy-regularised
    NPG and against ``V*`` otherwise.
    """
    rho = _uniform_rho(mdp.num_states)
    method, eta, tau, T = p["algo.method"], p["algo.eta"], p["algo.tau"], p["algo.T"]
    S, A = mdp.reward.shape
    gamma = mdp.discount
    if method == "entropy-npg":
        target = policy_opt.soft_optimal(mdp, tau)[0].v_tau
        value = lambda pi: policy_opt.soft_evaluate(mdp, pi, tau).v_tau
    else:
        target = optimal_q(mdp).max(axis=1)
        value = lambda pi: evaluate_policy(mdp, pi)[0]
    lp = policy_opt.LogitPolicy(np.zeros((S, A)))
    probs = lp.probs
    rows = []
    for t in range(T + 1):
        v = value(probs)
        rows.append((t, float(rho @ v), float(np.max(np.abs(target - v)))))
        if t == T:
            break
        if method == "ppg":
            probs = policy_opt.projected_pg_step(mdp, probs, rho, eta).probs
        elif method == "softmax-pg":
            lp = policy_opt.softmax_pg_step(mdp, lp, rho, eta)
            probs = lp.probs
        elif method == "npg":
            lp = policy_opt.npg_logit_step(lp, evaluate_policy(mdp, probs)[1], eta, gamma)
            probs = lp.probs
        else:
            q_tau = policy_opt.soft_evaluate(mdp, probs, tau).q_tau
            probs = policy_opt.entropy_npg_step(probs, q_tau, eta, tau, gamma).probs
    return rows


def run_policy_opt(p: dict, seed: int) -> dict:
    rows = policy_opt_trace(_discounted(p, seed), p)
    t, val, gap = rows[-1]
    return {"value_at_rho": val, "linf_gap_to_opt": gap}


def run_rlhf(p: dict, seed: int) -> dict:
    world = rlhf.random_world(p["instance.X"], p["instance.Y"], _instance_stream(p, seed),
                              p["instance.beta"])
    root = RngStream(seed)
    mode = p["algo.mode"]
    if mode == "online-vpo":
        pols, ds, rounds = rlhf.online_vpo(world, p["algo.T"], p["algo.alpha"], p["algo.batch"],
                                           root.substream(LEARN), p["algo.steps"], p["algo.lr"])
        last = rounds[-1]
        return {"true_value_J": last.true_value_J, "dpo_term": last.dpo_term,
                "regularizer_term": last.regularizer_term,
                "initial_value_J": rlhf.kl_value(world, world.true_reward, pols[0])}
    ds = rlhf.sample_preferences(world, world.pi_b, p["algo.n"], root.substream(DATA))
    alpha = p["algo.alpha"] if mode == "offline-vpo" else 0.0
    loss = lambda th: rlhf.vpo_loss(world, th, ds, alpha, -1)
    theta0 = np.log(world.pi_ref)
    theta, _ = rlhf.optimize_logits(loss, theta0, p["algo.steps"], p["algo.lr"] / max(len(ds), 1))
    pi = np.exp(rlhf.log_policy(theta))
    reg = rlhf.vpo_regularizer(world, theta, alpha, -1)[0] if alpha else 0.0
    return {"true_value_J": rlhf.kl_value(world, world.true_reward, pi),
            "dpo_term": rlhf.dpo_loss(world, theta, ds)[0], "regularizer_term": reg,
            "optimal_value_J": rlhf.kl_value(world, world.true_reward,
                                             rlhf.closed_form_policy(world, world.true_reward))}


RUNNERS = {"plan": run_plan, "gen-model": run_gen_model, "online": run_online,
           "offline": run_offline, "robust": run_robust, "policy-opt": run_policy_opt,
           "rlhf": run_rlhf}


def _one(args):
    kind, params, seed, sweep_value, chash = args
    start = time.perf_counter()
    metrics = RUNNERS[kind](params, seed)
    return RunRecord(chash, seed, sweep_value, metrics, time.perf_counter() - start)


def _sort_key(rec: RunRecord):
    v = rec.sweep_value
    return (v is None, v if isinstance(v, (int, float)) else str(v), rec.seed)


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> list[RunRecord]:
    """Run every ``(sweep value, seed)`` pair and write the output files."""
    chash = cfg.hash()
    tasks = [(cfg.kind, params, seed, val, chash)
             for val, params in cfg.points() for seed in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_one, tasks))
    else:
        records = [_one(t) for t in tasks]
    records.sort(key=_sort_key)
    if out_dir is not None:
        write_outputs(cfg, records, out_dir)
    return records


def write_outputs(cfg: ExperimentConfig, records: list[RunRecord], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metric_names = sorted({k for r in records for k in r.metrics})
    sweep_col = cfg.sweep_param or "sweep"
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_hash", "seed", sweep_col, *metric_names])
        for r in records:
            w.writerow([r.config_hash, r.seed, _fmt(r.sweep_value),
                        *(_fmt(r.metrics.get(m)) for m in metric_names)])
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", sweep_col, "wall_clock_s"])
        for r in records:
            w.writerow([r.seed, _fmt(r.sweep_value), f"{r.wall_clock:.6f}"])
    manifest = {"config_hash": cfg.hash(), "resolved_config": cfg.resolved(),
                "runs": len(records)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def slope(records, x_field: str, y_field: str) -> float:
    """OLS slope of ``log y`` on ``log x`` over seed-averaged points.

    ``records`` are :class:`RunRecord` objects or plain mappings; the x field
    may be ``"sweep"`` to mean the sweep value.
    """
    groups: dict[float, list[float]] = {}
    for r in records:
        if isinstance(r, RunRecord):
            x = r.sweep_value if x_field == "sweep" else r.metrics[x_field]
            y = r.metrics[y_field]
        else:
            x, y = r[x_field], r[y_field]
        groups.setdefault(float(x), []).append(float(y))
    if len(groups) < 2:
        raise ValueError("slope needs at least two distinct x values")
    xs = np.array(sorted(groups))
    ys = np.array([np.mean(groups[x]) for x in xs])
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("slope needs positive x and y values")
    lx, ly = np.log(xs), np.log(ys)
    return float(np.polyfit(lx, ly, 1)[0])
