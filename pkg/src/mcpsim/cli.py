"""Command-line entry point: run, train, ablate, case-study, verify.

Exit codes are a stable contract: 0 success, 1 check failure, 2 config
error, 3 i/o failure, 4 missing artifact.  Every output file is written
atomically, and --seed fully determines all outputs of every command.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import controller, knowledge, modules, nn, plots, presenter, tasks, toy_mdp
from .accounting import MetricsRow, write_metrics_csv
from .config import ConfigError, RunConfig, config_from_dict, dump_config, load_config
from .engine import Engine
from .fileio import atomic_write_text
from .presenter import PresenterError, export_trace, load_case_script, render_report
from .training import (
    TrainingError,
    greedy_toy_actions,
    train_routing_policy,
    train_toy_policy,
    write_training_csv,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MISSING = 4

ABLATION_MODES = ("dynamic", "static", "random", "none")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcpsim",
        description="Deterministic routing simulator with an RL scheduler",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="json run config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, help="output directory")

    p_run = sub.add_parser("run", help="simulate a workload end-to-end")
    common(p_run)
    p_run.add_argument("--mode", choices=controller.ROUTING_MODES)
    p_run.add_argument("--checkpoint", type=Path, help="policy for dynamic mode")
    p_run.add_argument("--parallel", type=int, default=1, help="episode workers")
    p_run.add_argument("--format", choices=("json", "csv"), default="json",
                       help="trace export format")

    p_train = sub.add_parser("train", help="train the routing policy")
    common(p_train)

    p_abl = sub.add_parser("ablate", help="compare all four routing modes")
    common(p_abl)
    p_abl.add_argument("--checkpoint", type=Path, help="trained dynamic policy")
    p_abl.add_argument("--parallel", type=int, default=1)

    p_case = sub.add_parser("case-study", help="replay a scripted scenario")
    common(p_case)
    p_case.add_argument("--scenario", type=Path, help=".scenario file (bundled default)")
    p_case.add_argument("--checkpoint", type=Path,
                        help="also replay with the trained policy, no overrides")

    p_verify = sub.add_parser("verify", help="run the built-in check suite")
    common(p_verify)
    p_verify.add_argument("--checkpoint", type=Path,
                          help="also validate this checkpoint's signature")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "mode", None):
        updates["mode"] = args.mode
    if args.out is not None:
        updates["out_dir"] = str(args.out)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _policy_for(cfg: RunConfig, checkpoint: Path | None) -> nn.Mlp:
    if checkpoint is not None:
        actor, _ = nn.load_checkpoint(checkpoint)
        return actor
    td3_cfg = dataclasses.replace(cfg.td3, seed=cfg.seed + cfg.td3.seed)
    return controller.init_td3(td3_cfg).actor


def run_episode(cfg: RunConfig, episode: int, checkpoint: str | None) -> dict:
    """Simulate one self-contained episode (own engine, cache, clock)."""
    spec = cfg.workload_spec(episode)
    policy = None
    if cfg.mode == "dynamic":
        policy = _policy_for(cfg, Path(checkpoint) if checkpoint else None)
    engine = Engine(
        spec=spec,
        mode=cfg.mode,
        params=cfg.engine,
        descriptors=cfg.descriptors,
        reward_params=cfg.reward,
        policy=policy,
    )
    result = engine.run_workload(tasks.generate_workload(spec))
    offset = episode * cfg.workload.n_tasks
    rows = [
        dataclasses.replace(r, task_id=r.task_id + offset) for r in result.rows
    ]
    holds, bound, observed = engine.space_audit()
    return {
        "episode": episode,
        "rows": rows,
        "trace": result.trace,
        "cache_hits": engine.cache.hits,
        "cache_lookups": engine.cache.lookups,
        "retrieval_calls": engine.retrieval_calls,
        "duplicate_recomputes": engine.duplicate_recomputes,
        "clock_ms": engine.clock_ms,
        "space_bound_holds": holds,
        "space_bound": bound,
        "space_observed": observed,
    }


def _episode_worker(payload: tuple[str, int, str | None]) -> dict:
    config_json, episode, checkpoint = payload
    return run_episode(config_from_dict(json.loads(config_json)), episode, checkpoint)


def _merge_summary(cfg: RunConfig, episodes: list[dict]) -> tuple[list[MetricsRow], list, dict]:
    episodes = sorted(episodes, key=lambda e: e["episode"])
    rows: list[MetricsRow] = []
    trace = []
    for ep in episodes:
        rows.extend(ep["rows"])
        trace.extend(ep["trace"])
    trace = [dataclasses.replace(e, step=i) for i, e in enumerate(trace)]
    latencies = np.asarray([r.t_total_ms for r in rows])
    total_flops = sum(r.flops for r in rows)
    lookups = sum(ep["cache_lookups"] for ep in episodes)
    calls = sum(ep["retrieval_calls"] for ep in episodes)
    summary = {
        "tasks": len(rows),
        "mode": cfg.mode,
        "episodes": cfg.episodes,
        "seed": cfg.seed,
        "mean_quality": float(np.mean([r.quality for r in rows])),
        "mean_latency_ms": float(latencies.mean()),
        "p50_latency_ms": float(np.percentile(latencies, 50)),
        "p95_latency_ms": float(np.percentile(latencies, 95)),
        "energy_per_task_j": float(np.mean([r.energy_j for r in rows])),
        "invalid_flop_fraction": float(
            sum(r.invalid_flops for r in rows) / total_flops
        ),
        "throughput_tps": len(rows) / (float(latencies.sum()) / 1000.0),
        "mean_reward": float(np.mean([r.reward for r in rows])),
        "cache_hit_rate": (
            sum(ep["cache_hits"] for ep in episodes) / lookups if lookups else 0.0
        ),
        "duplicate_recall_rate": (
            sum(ep["duplicate_recomputes"] for ep in episodes) / calls if calls else 0.0
        ),
        "space_bound_holds": all(ep["space_bound_holds"] for ep in episodes),
    }
    return rows, trace, summary


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    checkpoint = str(args.checkpoint) if args.checkpoint else None
    if checkpoint and not Path(checkpoint).exists():
        print(f"error: checkpoint {checkpoint} not found", file=sys.stderr)
        return EXIT_MISSING

    payloads = [
        (dump_config(cfg), episode, checkpoint) for episode in range(cfg.episodes)
    ]
    if args.parallel > 1 and cfg.episodes > 1:
        with ProcessPoolExecutor(max_workers=min(args.parallel, cfg.episodes)) as pool:
            episodes = list(pool.map(_episode_worker, payloads))
    else:
        episodes = [_episode_worker(p) for p in payloads]

    rows, trace, summary = _merge_summary(cfg, episodes)
    out = Path(cfg.out_dir)
    try:
        write_metrics_csv(rows, out / "metrics.csv")
        atomic_write_text(out / f"trace.{args.format}", export_trace(trace, args.format))
        atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
        atomic_write_text(out / "resolved_config.json", dump_config(cfg))
        plots.render_run_summary(rows, out / "run_summary.png")
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    td3_cfg = dataclasses.replace(cfg.td3, seed=cfg.seed + cfg.td3.seed)
    if cfg.train.env == "toy":
        outcome = train_toy_policy(td3_cfg, cfg.train, cfg.seed)
        extra = {"greedy_actions": greedy_toy_actions(outcome.best_actor)}
        oracle, _ = toy_mdp.value_iteration(td3_cfg.discount)
        summary = {
            "env": "toy",
            "steps": cfg.train.steps,
            "seed": cfg.seed,
            "greedy_actions": [float(a) for a in extra["greedy_actions"]],
            "oracle_actions": [float(a) for a in oracle],
        }
    else:
        outcome = train_routing_policy(
            spec=cfg.workload_spec(),
            engine_params=cfg.engine,
            descriptors=cfg.descriptors,
            reward_params=cfg.reward,
            cfg=td3_cfg,
            params=cfg.train,
            seed=cfg.seed,
        )
        extra = {"best_eval_reward": np.array(outcome.best_eval_reward)}
        summary = {
            "env": "routing",
            "steps": cfg.train.steps,
            "seed": cfg.seed,
            "best_eval_reward": outcome.best_eval_reward,
            "logged_steps": len(outcome.telemetry),
        }
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        nn.save_checkpoint(outcome.best_actor, out / "checkpoint.npz", extra=extra)
        write_training_csv(outcome.telemetry, out / "training_telemetry.csv")
        atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
        atomic_write_text(out / "resolved_config.json", dump_config(cfg))
        plots.render_training_curves(outcome.telemetry, out / "training_curves.png")
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _delta_pct(new: float, base: float) -> float:
    return 100.0 * (new - base) / base


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    if args.checkpoint is None or not args.checkpoint.exists():
        print("error: ablation needs a trained --checkpoint", file=sys.stderr)
        return EXIT_MISSING

    summaries: dict[str, dict] = {}
    for mode in ABLATION_MODES:
        mode_cfg = dataclasses.replace(cfg, mode=mode, episodes=1)
        episode = run_episode(mode_cfg, 0, str(args.checkpoint))
        _, _, summary = _merge_summary(mode_cfg, [episode])
        summaries[mode] = summary

    dyn = summaries["dynamic"]
    deltas = {
        f"dynamic_vs_{base}": {
            "quality_delta_pct": _delta_pct(dyn["mean_quality"], summaries[base]["mean_quality"]),
            "latency_delta_pct": _delta_pct(dyn["mean_latency_ms"], summaries[base]["mean_latency_ms"]),
            "energy_delta_pct": _delta_pct(dyn["energy_per_task_j"], summaries[base]["energy_per_task_j"]),
        }
        for base in ("static", "random", "none")
    }

    header = ("mode", "mean_quality", "mean_latency_ms", "energy_per_task_j",
              "invalid_flop_fraction", "throughput_tps")
    csv_lines = [",".join(header)]
    text_lines = [" ".join(f"{h:>22}" for h in header)]
    for mode in ABLATION_MODES:
        s = summaries[mode]
        values = [mode] + [f"{s[k]:.6f}" for k in header[1:]]
        csv_lines.append(",".join(values))
        text_lines.append(" ".join(f"{v:>22}" for v in values))
    csv_lines.append("comparison,quality_delta_pct,latency_delta_pct,energy_delta_pct")
    text_lines.append("")
    for name, d in deltas.items():
        csv_lines.append(
            f"{name},{d['quality_delta_pct']:.3f},{d['latency_delta_pct']:.3f},{d['energy_delta_pct']:.3f}"
        )
        text_lines.append(
            f"{name:>22}: quality {d['quality_delta_pct']:+.1f}%  "
            f"latency {d['latency_delta_pct']:+.1f}%  energy {d['energy_delta_pct']:+.1f}%"
        )

    out = Path(cfg.out_dir)
    payload = {"modes": summaries, "deltas": deltas, "seed": cfg.seed}
    try:
        atomic_write_text(out / "ablation.csv", "\n".join(csv_lines) + "\n")
        atomic_write_text(out / "ablation.txt", "\n".join(text_lines) + "\n")
        atomic_write_text(out / "summary.json", json.dumps(payload, indent=2, sort_keys=True))
        plots.render_ablation(summaries, out / "ablation.png")
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    print("\n".join(text_lines))
    return EXIT_OK


def bundled_scenario_path() -> Path:
    return Path(str(resources.files("mcpsim").joinpath("data/case_tb.scenario")))


def cmd_case_study(args) -> int:
    cfg = _resolve_config(args)
    scenario = args.scenario or bundled_scenario_path()
    try:
        script = load_case_script(scenario)
    except OSError as exc:
        print(f"error: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except PresenterError as exc:
        print(f"error: bad scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    spec = cfg.workload_spec()
    engine = Engine(
        spec=spec,
        mode="static",
        params=cfg.engine,
        descriptors=cfg.descriptors,
        reward_params=cfg.reward,
    )
    trace, deviation = presenter.replay_case(script, engine)
    report = render_report(trace, engine.case_task(script, len(script.phases) - 1))

    summary = {
        "scenario": script.name,
        "phases": len(script.phases),
        "max_deviation_pct": deviation,
        "confidence": report.confidence,
    }
    if args.checkpoint is not None and args.checkpoint.exists():
        policy, _ = nn.load_checkpoint(args.checkpoint)
        dyn_engine = Engine(
            spec=spec, mode="dynamic", params=cfg.engine,
            descriptors=cfg.descriptors, reward_params=cfg.reward, policy=policy,
        )
        dyn_trace = dyn_engine.run_case(script, apply_overrides=False)
        dyn_dev = 0.0
        for event, phase in zip(dyn_trace, script.phases):
            for kind, pct in phase.activation_pct.items():
                dyn_dev = max(dyn_dev, abs(event.activation_pct.get(kind, 0.0) - pct))
        summary["trained_policy_deviation_pct"] = dyn_dev

    out = Path(cfg.out_dir)
    try:
        atomic_write_text(out / "case_trace.json", export_trace(trace, "json"))
        atomic_write_text(out / "case_activation.csv", export_trace(trace, "csv"))
        atomic_write_text(
            out / "case_report.json",
            json.dumps(dataclasses.asdict(report), indent=2, sort_keys=True),
        )
        atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
        plots.render_case_activation(trace, out / "case_activation.png")
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


# ----------------------------------------------------------------------
# verify: the built-in check suite


def _check_gradient() -> str:
    rng = np.random.Generator(np.random.PCG64(11))
    for trial in range(3):
        net = nn.init_mlp((4, 8, 3), "tanh" if trial % 2 else "linear", seed=trial)
        x = rng.standard_normal(4)
        up = rng.standard_normal(3)
        grads = nn.backward(net, x, up)
        flat = nn.flatten_grads(net, grads)
        theta0 = nn.flatten_params(net)
        h = 1e-5
        for i in range(0, theta0.size, 7):
            probe = net.copy()
            t = theta0.copy()
            t[i] += h
            nn.set_flat_params(probe, t)
            f_plus = float(np.dot(nn.forward(probe, x), up))
            t[i] -= 2 * h
            nn.set_flat_params(probe, t)
            f_minus = float(np.dot(nn.forward(probe, x), up))
            fd = (f_plus - f_minus) / (2 * h)
            if abs(fd - flat[i]) / max(1.0, abs(fd), abs(flat[i])) > 1e-4:
                raise AssertionError(f"gradient mismatch at parameter {i}")
    return "reverse-mode gradients match finite differences"


def _check_forward_determinism() -> str:
    net = nn.init_mlp((6, 16, 2), "tanh", seed=3)
    x = np.linspace(-1, 1, 6)
    a, b = nn.forward(net, x), nn.forward(net, x)
    if not np.array_equal(a, b):
        raise AssertionError("repeated forward passes differ")
    return "forward passes are bit-identical"


def _check_adam_zero_grad() -> str:
    net = nn.init_mlp((3, 5, 1), "linear", seed=4)
    before = [p.copy() for p in net.parameters()]
    grads = {
        "weights": [np.zeros_like(w) for w in net.weights],
        "biases": [np.zeros_like(b) for b in net.biases],
    }
    nn.adam_step(net, grads, nn.init_adam(net, lr=0.01))
    if any(not np.array_equal(a, b) for a, b in zip(before, net.parameters())):
        raise AssertionError("zero gradient moved parameters")
    return "zero gradients leave parameters untouched"


def _small_run(mode: str, n_tasks: int = 120, dup: float = 0.2):
    spec = tasks.WorkloadSpec(seed=5, n_tasks=n_tasks, duplicate_fraction=dup)
    from .engine import EngineParams

    engine = Engine(
        spec=spec, mode=mode, params=EngineParams(kb_items=512, cache_capacity=512)
    )
    result = engine.run_workload(tasks.generate_workload(spec))
    return engine, result


def _check_latency_sum() -> str:
    engine, result = _small_run("static")
    clock = 0.0
    for row in result.rows:
        parts = row.t_model_ms + row.t_controller_ms + row.t_presenter_ms
        if abs(parts - row.t_total_ms) > 1e-9:
            raise AssertionError("latency parts do not sum to the total")
        clock += row.t_total_ms
    if abs(clock - engine.clock_ms) > 1e-6:
        raise AssertionError("clock does not equal the summed breakdowns")
    return "latency decomposition matches the simulated clock"


def _check_space_bound() -> str:
    engine, _ = _small_run("static")
    holds, bound, observed = engine.space_audit()
    if not holds:
        raise AssertionError(f"space bound violated: {observed} > {bound}")
    return f"space bound holds ({observed:.0f} <= {bound:.0f} bytes)"


def _check_ledger_conservation() -> str:
    engine, result = _small_run("none")
    total = sum(r.flops for r in result.rows)
    if abs(total - engine.ledger.total_flops) > 1e-6 * max(1.0, total):
        raise AssertionError("per-task flops do not sum to the ledger total")
    for kind, (flops, invalid) in engine.ledger.per_module.items():
        if invalid > flops:
            raise AssertionError(f"{kind} ledger has invalid > total")
    return "flop ledger is conserved across tasks"


def _check_hhi_recall() -> str:
    kb = knowledge.generate_knowledge_base(1280, 16, seed=21)
    index = knowledge.build_hhi(kb, seed=22)
    rng = np.random.Generator(np.random.PCG64(23))
    recalls = []
    for _ in range(50):
        q = kb.embeddings[int(rng.integers(0, len(kb)))] + 0.05 * rng.standard_normal(16)
        _, ids = knowledge.retrieve(q, 10, index, None, n_probe=8)
        recalls.append(knowledge.recall_at_k(ids, knowledge.brute_force_topk(kb, q, 10)))
    mean = float(np.mean(recalls))
    if mean < 0.9:
        raise AssertionError(f"recall@10 {mean:.3f} < 0.9")
    return f"probed recall@10 = {mean:.3f} vs brute force"


def _check_exhaustive_probe() -> str:
    kb = knowledge.generate_knowledge_base(400, 8, seed=31)
    index = knowledge.build_hhi(kb, seed=32)
    rng = np.random.Generator(np.random.PCG64(33))
    for _ in range(20):
        q = rng.uniform(-1, 1, 8)
        _, ids = knowledge.retrieve(q, 10, index, None, n_probe=index.n_clusters)
        if set(ids) != set(knowledge.brute_force_topk(kb, q, 10)):
            raise AssertionError("full probe differs from brute force")
    return "full-probe search equals brute force"


def _random_graph(rng) -> modules.InferenceGraph:
    n = int(rng.integers(2, 50))
    edges = set()
    for u in range(n):
        for v in range(n):
            if rng.uniform() < 0.2:
                edges.add((u, v))
    return modules.InferenceGraph(tuple(range(n)), tuple(sorted(edges)), entry=0)


def _check_acyclicity() -> str:
    rng = np.random.Generator(np.random.PCG64(41))
    for _ in range(200):
        g = _random_graph(rng)
        pruned = modules.prune_cycles(g)
        if not modules.is_acyclic(pruned):
            raise AssertionError("pruned graph still has a cycle")
    return "200 random graphs acyclic after pruning"


def _check_prune_idempotent() -> str:
    rng = np.random.Generator(np.random.PCG64(42))
    for _ in range(200):
        g = _random_graph(rng)
        once = modules.prune_cycles(g)
        twice = modules.prune_cycles(once)
        if once.edges != twice.edges:
            raise AssertionError("pruning is not idempotent")
    return "pruning is idempotent on 200 random graphs"


def _check_cache_identity() -> str:
    kb = knowledge.generate_knowledge_base(256, 8, seed=51)
    index = knowledge.build_hhi(kb, seed=52)
    cache = knowledge.CachePool(64)
    q = kb.embeddings[7] * 1.0
    _, first = knowledge.retrieve(q, 5, index, cache, n_probe=4)
    _, second = knowledge.retrieve(q, 5, index, cache, n_probe=4)
    if first != second or cache.hits != 1:
        raise AssertionError("cache hit did not return the original result")
    return "cache hits return the original result"


def _check_cache_hit_rate() -> str:
    engine, _ = _small_run("static", n_tasks=400, dup=0.2)
    rate = engine.cache.hit_rate
    if abs(rate - 0.2) > 0.02:
        raise AssertionError(f"cache hit rate {rate:.3f} not near 0.2")
    return f"cache hit rate {rate:.3f} matches the duplicate fraction"


def _check_monotonicity() -> str:
    grid = np.linspace(0.0, 1.0, 9)
    last = -1
    for v in grid:
        c = tasks.ComplexityVector(v, v, v)
        n = modules.sac_gate(c, topic_id=3).n_active
        b = modules.lad_step_budget(c, 4, 64)
        if n < last:
            raise AssertionError("cluster gate is not monotone")
        last = n
        if v > 0 and b < modules.lad_step_budget(tasks.ComplexityVector(0, 0, 0), 4, 64):
            raise AssertionError("step budget is not monotone")
    return "gating and budgeting are monotone in complexity"


def _check_reward_monotone() -> str:
    p = controller.RewardParams(alpha=1.0, beta=2.0, gamma_penalty=0.5)
    for delay in (1.0, 2.0, 5.0):
        if controller.reward(delay, 0.5, 0.0, p) <= controller.reward(delay + 1.0, 0.5, 0.0, p):
            raise AssertionError("reward is not decreasing in delay")
        if controller.reward(delay, 0.6, 0.0, p) <= controller.reward(delay, 0.4, 0.0, p):
            raise AssertionError("reward is not increasing in quality")
        if controller.reward(delay, 0.5, 0.1, p) <= controller.reward(delay, 0.5, 0.9, p):
            raise AssertionError("reward is not decreasing in swing")
    return "reward is monotone in delay, quality, and swing"


def _check_entropy_oracle() -> str:
    rng = np.random.Generator(np.random.PCG64(61))
    import collections
    import math as _math

    for _ in range(50):
        toks = rng.integers(0, 32, size=int(rng.integers(1, 200))).tolist()
        counts = collections.Counter(toks)
        n = len(toks)
        direct = -sum((c / n) * _math.log(c / n) for c in counts.values())
        if abs(direct - tasks.empirical_entropy(toks)) > 1e-12 * max(1.0, direct):
            raise AssertionError("entropy differs from the direct computation")
    return "entropy matches an independent histogram computation"


def _check_workload_determinism() -> str:
    spec = tasks.WorkloadSpec(seed=71, n_tasks=64, duplicate_fraction=0.25)
    if tasks.generate_workload(spec) != tasks.generate_workload(spec):
        raise AssertionError("workload generation is not deterministic")
    return "workload generation is deterministic per seed"


def _check_trace_roundtrip() -> str:
    engine, result = _small_run("static", n_tasks=10, dup=0.0)
    serialized = export_trace(result.trace, "json")
    if presenter.import_trace(serialized) != result.trace:
        raise AssertionError("trace json does not round-trip")
    return "trace json round-trips losslessly"


def _check_toy_oracle() -> str:
    actions, _ = toy_mdp.value_iteration(0.95)
    if abs(actions[0] - 0.2) > 0.01 or abs(actions[1] - 0.8) > 0.01:
        raise AssertionError("value iteration missed the closed-form optima")
    return "value iteration recovers the closed-form optima"


def cmd_verify(args) -> int:
    checks = [
        ("gradient_check", _check_gradient),
        ("forward_determinism", _check_forward_determinism),
        ("adam_zero_grad", _check_adam_zero_grad),
        ("latency_sum_exact", _check_latency_sum),
        ("space_bound_holds", _check_space_bound),
        ("ledger_conservation", _check_ledger_conservation),
        ("hhi_recall", _check_hhi_recall),
        ("exhaustive_probe_exact", _check_exhaustive_probe),
        ("graph_acyclicity", _check_acyclicity),
        ("prune_idempotent", _check_prune_idempotent),
        ("cache_hit_identity", _check_cache_identity),
        ("cache_hit_rate", _check_cache_hit_rate),
        ("resource_monotonicity", _check_monotonicity),
        ("reward_monotonicity", _check_reward_monotone),
        ("entropy_oracle", _check_entropy_oracle),
        ("workload_determinism", _check_workload_determinism),
        ("trace_roundtrip", _check_trace_roundtrip),
        ("toy_value_iteration", _check_toy_oracle),
    ]
    if args.checkpoint is not None:
        def _check_signature() -> str:
            nn.load_checkpoint(args.checkpoint)
            return "checkpoint signature and version are valid"

        checks.append(("checkpoint_signature", _check_signature))

    failures = 0
    for name, fn in checks:
        try:
            detail = fn()
            print(f"[ ok ] {name}: {detail}")
        except Exception as exc:
            failures += 1
            print(f"[FAIL] {name}: {exc}")
    print(f"{len(checks) - failures}/{len(checks)} checks passed")
    return EXIT_OK if failures == 0 else EXIT_CHECK_FAILED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        if args.command == "case-study":
            return cmd_case_study(args)
        if args.command == "verify":
            return cmd_verify(args)
    except (ConfigError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except nn.NNError as exc:
        print(f"error: bad checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
