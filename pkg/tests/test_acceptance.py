"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.  The routing-ablation fixture trains the policy
once and shares the four mode runs across criteria 3, 5, and 11.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

from mcpsim import cli, knowledge, modules, nn, tasks
from mcpsim.config import RunConfig, dump_config
from mcpsim.controller import RewardParams, Td3Config, reward
from mcpsim.engine import Engine, EngineParams
from mcpsim.modules import default_descriptors
from mcpsim.tasks import WorkloadSpec, generate_workload
from mcpsim.toy_mdp import value_iteration
from mcpsim.training import (
    TrainParams,
    greedy_toy_actions,
    train_routing_policy,
    train_toy_policy,
)

DEFAULT_SEED = 7


def _report(criterion: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def ablation():
    """Train the routing policy once, then run all four modes on the
    default workload with the shared seed."""
    spec = WorkloadSpec(
        seed=DEFAULT_SEED, n_tasks=2000, duplicate_fraction=0.2,
        complexity_mix=(0.4, 0.4, 0.2),
    )
    t0 = time.time()
    outcome = train_routing_policy(
        spec,
        EngineParams(),
        default_descriptors(),
        RewardParams(),
        Td3Config(seed=DEFAULT_SEED),
        TrainParams(),
        seed=DEFAULT_SEED,
    )
    train_seconds = time.time() - t0
    workload = generate_workload(spec)
    summaries = {}
    engines = {}
    for mode in ("dynamic", "static", "random", "none"):
        engine = Engine(
            spec=spec,
            mode=mode,
            params=EngineParams(),
            descriptors=default_descriptors(),
            reward_params=RewardParams(),
            policy=outcome.best_actor if mode == "dynamic" else None,
            record_trace=False,
        )
        summaries[mode] = engine.run_workload(workload).summary
        engines[mode] = engine
    return {
        "summaries": summaries,
        "engines": engines,
        "train_seconds": train_seconds,
        "total_seconds": time.time() - t0,
    }


def _fd_gradient(net, x, up, h=1e-5):
    theta = nn.flatten_params(net)
    grad = np.empty_like(theta)
    probe = net.copy()
    for i in range(theta.size):
        t = theta.copy()
        t[i] += h
        nn.set_flat_params(probe, t)
        f_plus = float(np.dot(nn.forward(probe, x), up))
        t[i] -= 2 * h
        nn.set_flat_params(probe, t)
        f_minus = float(np.dot(nn.forward(probe, x), up))
        grad[i] = (f_plus - f_minus) / (2 * h)
    return grad


def test_criterion_01_gradient_correctness():
    """backward matches central differences (h=1e-5) within 1e-4 on 20 nets."""
    t0 = time.time()
    rng = np.random.Generator(np.random.PCG64(1001))
    worst = 0.0
    for trial in range(20):
        sizes = (4, 8, 5, 2) if trial % 2 else (6, 10, 1)
        net = nn.init_mlp(sizes, "tanh" if trial % 3 else "linear", seed=2000 + trial)
        x = rng.standard_normal(sizes[0])
        up = rng.standard_normal(sizes[-1])
        analytic = nn.flatten_grads(net, nn.backward(net, x, up))
        fd = _fd_gradient(net, x, up)
        rel = np.abs(analytic - fd) / np.maximum(
            1.0, np.maximum(np.abs(analytic), np.abs(fd))
        )
        worst = max(worst, float(rel.max()))
    elapsed = time.time() - t0
    _report(
        "criterion 1 (gradient correctness)",
        worst < 1e-4 and elapsed < 10.0,
        f"max rel err {worst:.2e} over 20 nets in {elapsed:.1f}s",
    )


def test_criterion_02_td3_toy_convergence():
    """Greedy actions within 0.05 of the value-iteration optimum, 3/3 seeds."""
    t0 = time.time()
    oracle, _ = value_iteration(0.95)
    worst = 0.0
    for seed in (0, 1, 2):
        cfg = Td3Config(seed=seed, exploration_noise=0.2)
        params = TrainParams(env="toy", steps=5000, warmup=300, log_every=1000)
        outcome = train_toy_policy(cfg, params, seed=seed)
        err = float(np.abs(greedy_toy_actions(outcome.best_actor) - oracle).max())
        worst = max(worst, err)
    elapsed = time.time() - t0
    _report(
        "criterion 2 (toy TD3 convergence)",
        worst <= 0.05 and elapsed < 120.0,
        f"worst action error {worst:.4f} across 3 seeds in {elapsed:.0f}s",
    )


def test_criterion_03_routing_ablation(ablation):
    """Trained dynamic vs random: quality +5%, latency -10%, energy -10%;
    vs static: latency -15%."""
    s = ablation["summaries"]
    pct = lambda a, b: 100.0 * (a - b) / b
    q_delta = pct(s["dynamic"]["mean_quality"], s["random"]["mean_quality"])
    lat_delta = pct(s["dynamic"]["mean_latency_ms"], s["random"]["mean_latency_ms"])
    energy_delta = pct(s["dynamic"]["energy_per_task_j"], s["random"]["energy_per_task_j"])
    lat_static = pct(s["dynamic"]["mean_latency_ms"], s["static"]["mean_latency_ms"])
    ok = (
        q_delta >= 5.0
        and lat_delta <= -10.0
        and energy_delta <= -10.0
        and lat_static <= -15.0
        and ablation["total_seconds"] < 600.0
    )
    _report(
        "criterion 3 (routing ablation)",
        ok,
        f"vs random: quality {q_delta:+.1f}%, latency {lat_delta:+.1f}%, "
        f"energy {energy_delta:+.1f}%; vs static latency {lat_static:+.1f}% "
        f"({ablation['total_seconds']:.0f}s incl. training)",
    )


def test_criterion_04_cache_pool():
    """duplicate_fraction 0.19: recall-recompute rate <= 0.05 cached,
    = 0.19 +/- 0.01 uncached."""
    t0 = time.time()
    spec = WorkloadSpec(seed=DEFAULT_SEED, n_tasks=2000, duplicate_fraction=0.19)
    workload = generate_workload(spec)
    cached_engine = Engine(spec=spec, mode="static", params=EngineParams(), record_trace=False)
    cached_engine.run_workload(workload)
    uncached_engine = Engine(spec=spec, mode="none", params=EngineParams(), record_trace=False)
    uncached_engine.run_workload(workload)
    r_cached = cached_engine.duplicate_recall_rate
    r_uncached = uncached_engine.duplicate_recall_rate
    elapsed = time.time() - t0
    _report(
        "criterion 4 (knowledge cache pool)",
        r_cached <= 0.05 and abs(r_uncached - 0.19) <= 0.01 and elapsed < 60.0,
        f"duplicate recall {r_cached:.3f} cached vs {r_uncached:.3f} uncached "
        f"in {elapsed:.0f}s",
    )


def test_criterion_05_invalid_flop_reduction(ablation):
    """Invalid-FLOP fraction >= 0.30 with no optimizations, <= 0.15 trained."""
    none_frac = ablation["summaries"]["none"]["invalid_flop_fraction"]
    dyn_frac = ablation["summaries"]["dynamic"]["invalid_flop_fraction"]
    _report(
        "criterion 5 (invalid-FLOP reduction)",
        none_frac >= 0.30 and dyn_frac <= 0.15,
        f"none {none_frac:.3f} >= 0.30, trained dynamic {dyn_frac:.3f} <= 0.15",
    )


def test_criterion_06_hhi_recall():
    """recall@10 >= 0.90 at n_probe=8 on a 10k-item base; exact at full probe."""
    t0 = time.time()
    kb = knowledge.generate_knowledge_base(10_000, 16, seed=DEFAULT_SEED)
    index = knowledge.build_hhi(kb, seed=DEFAULT_SEED)
    rng = np.random.Generator(np.random.PCG64(DEFAULT_SEED))
    recalls = []
    exact = True
    for _ in range(1000):
        base = kb.embeddings[int(rng.integers(0, len(kb)))]
        query = base + 0.05 * rng.standard_normal(16)
        oracle = knowledge.brute_force_topk(kb, query, 10)
        _, ids = knowledge.retrieve(query, 10, index, None, n_probe=8)
        recalls.append(knowledge.recall_at_k(ids, oracle))
        _, full_ids = knowledge.retrieve(query, 10, index, None, n_probe=128)
        exact = exact and set(full_ids) == set(oracle)
    mean_recall = float(np.mean(recalls))
    elapsed = time.time() - t0
    _report(
        "criterion 6 (retrieval recall)",
        mean_recall >= 0.90 and exact and elapsed < 60.0,
        f"recall@10 {mean_recall:.3f} at 8 probes; full probe exact={exact} "
        f"in {elapsed:.0f}s",
    )


def test_criterion_07_acyclicity():
    """prune_cycles output sorts topologically and is idempotent, 1,000 graphs."""
    t0 = time.time()
    rng = np.random.Generator(np.random.PCG64(4242))
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        edges = set()
        for u in range(n):
            for v in range(n):
                if rng.uniform() < 0.2:
                    edges.add((u, v))
        g = modules.InferenceGraph(tuple(range(n)), tuple(sorted(edges)), entry=0)
        once = modules.prune_cycles(g)
        assert modules.is_acyclic(once)
        assert modules.prune_cycles(once).edges == once.edges
    elapsed = time.time() - t0
    _report(
        "criterion 7 (cycle pruning)",
        elapsed < 10.0,
        f"1,000 random graphs acyclic and idempotent in {elapsed:.1f}s",
    )


def test_criterion_08_accounting_exactness():
    """Latency sum matches the simulated clock to 1e-9 per task; bound holds."""
    t0 = time.time()
    spec = WorkloadSpec(seed=DEFAULT_SEED, n_tasks=2000, duplicate_fraction=0.2)
    engine = Engine(spec=spec, mode="static", params=EngineParams())
    result = engine.run_workload(generate_workload(spec))
    worst = 0.0
    clock = 0.0
    for row in result.rows:
        parts = row.t_model_ms + row.t_controller_ms + row.t_presenter_ms
        worst = max(worst, abs(parts - row.t_total_ms))
        clock += row.t_total_ms
    clock_err = abs(clock - engine.clock_ms)
    holds, bound, observed = engine.space_audit()
    elapsed = time.time() - t0
    _report(
        "criterion 8 (accounting exactness)",
        worst <= 1e-9 and clock_err <= 1e-6 and holds and elapsed < 60.0,
        f"max per-task latency error {worst:.1e}, clock drift {clock_err:.1e}, "
        f"space bound holds ({observed:.0f} <= {bound:.0f}) in {elapsed:.0f}s",
    )


def test_criterion_09_case_study(tmp_path):
    """Bundled TB scenario reproduces the scripted activation schedule."""
    t0 = time.time()
    out = tmp_path / "case"
    config = RunConfig(seed=DEFAULT_SEED)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(dump_config(config), encoding="utf-8")
    code = cli.main(
        ["case-study", "--config", str(cfg_path), "--out", str(out)]
    )
    assert code == 0
    rows = (out / "case_activation.csv").read_text().splitlines()[1:]
    parsed = []
    for row in rows:
        fields = row.split(",")
        parsed.append((float(fields[3]), float(fields[2])))  # generation, reasoning
        total = float(fields[2]) + float(fields[3]) + float(fields[4])
        assert abs(total - 100.0) <= 0.01
    expected = [(70.0, 30.0), (20.0, 80.0), (55.0, 45.0), (90.0, 10.0)]
    elapsed = time.time() - t0
    _report(
        "criterion 9 (case-study replay)",
        parsed == expected and elapsed < 5.0,
        f"activation schedule {parsed} in {elapsed:.1f}s",
    )


def test_criterion_10_determinism(tmp_path):
    """Byte-identical outputs for identical config+seed; parallel == serial."""
    t0 = time.time()
    data = json.loads(dump_config(RunConfig(seed=DEFAULT_SEED, mode="static")))
    data["workload"].update({"n_tasks": 200})
    data["engine"].update({"kb_items": 512, "kb_dim": 8})
    data["episodes"] = 4
    data["train"].update(
        {"steps": 300, "warmup": 100, "episode_tasks": 60, "eval_every": 200,
         "eval_tasks": 40, "log_every": 50}
    )
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(data), encoding="utf-8")

    outs = [tmp_path / name for name in ("r1", "r2", "r4")]
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(outs[0])]) == 0
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(outs[1])]) == 0
    assert (
        cli.main(
            ["run", "--config", str(cfg_path), "--out", str(outs[2]), "--parallel", "4"]
        )
        == 0
    )
    run_identical = (
        (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()
    )
    parallel_identical = (
        (outs[0] / "metrics.csv").read_bytes() == (outs[2] / "metrics.csv").read_bytes()
    )

    t_outs = [tmp_path / name for name in ("t1", "t2")]
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(t_outs[0])]) == 0
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(t_outs[1])]) == 0
    train_identical = (
        (t_outs[0] / "training_telemetry.csv").read_bytes()
        == (t_outs[1] / "training_telemetry.csv").read_bytes()
        and (t_outs[0] / "checkpoint.npz").read_bytes()
        == (t_outs[1] / "checkpoint.npz").read_bytes()
    )
    elapsed = time.time() - t0
    _report(
        "criterion 10 (determinism)",
        run_identical and parallel_identical and train_identical and elapsed < 300.0,
        f"run identical={run_identical}, parallel==serial={parallel_identical}, "
        f"train identical={train_identical} in {elapsed:.0f}s",
    )


def test_criterion_11_reward_and_throughput(ablation):
    """Reward monotonicity over a grid; dynamic/none throughput >= 1.25."""
    t0 = time.time()
    p = RewardParams(alpha=1.0, beta=2.0, gamma_penalty=0.5)
    monotone = True
    delays = np.linspace(1.0, 25.0, 7)
    qualities = np.linspace(0.0, 1.0, 7)
    swings = np.linspace(0.0, 6.0, 7)
    for q in qualities:
        for s in swings:
            vals = [reward(d, q, s, p) for d in delays]
            monotone &= all(a > b for a, b in zip(vals, vals[1:]))
    for d in delays:
        for s in swings:
            vals = [reward(d, q, s, p) for q in qualities]
            monotone &= all(a < b for a, b in zip(vals, vals[1:]))
    for d in delays:
        for q in qualities:
            vals = [reward(d, q, s, p) for s in swings]
            monotone &= all(a > b for a, b in zip(vals, vals[1:]))
    ratio = (
        ablation["summaries"]["dynamic"]["throughput_tps"]
        / ablation["summaries"]["none"]["throughput_tps"]
    )
    elapsed = time.time() - t0
    _report(
        "criterion 11 (reward sanity and throughput)",
        monotone and ratio >= 1.25 and elapsed < 120.0,
        f"monotone grid ok={monotone}, throughput ratio {ratio:.2f} in {elapsed:.0f}s",
    )
