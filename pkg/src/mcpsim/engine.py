"""Simulation engine: runs tasks through the three modules under a routing mode.

Mode semantics:

* ``dynamic`` - the policy network picks per-task activation intensities.
* ``static``  - every module runs at full intensity; optimizations stay on.
* ``random``  - seeded uniform activations.
* ``none``    - full intensity with every optimization bypassed: the result
  cache is disabled, cluster gating is forced wide open, and inference
  graphs run un-pruned (charged as a wasted-visit surcharge on top of the
  pruned traversal, since the reasoning module itself refuses cyclic
  graphs).

The simulated clock only advances through the recorded latency breakdown,
so the per-task metrics row is exactly the clock delta.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import accounting, controller, knowledge, modules, presenter, tasks
from .accounting import (
    EnergyModel,
    FlopLedger,
    LatencyBreakdown,
    MetricsRow,
    SpaceModel,
    total_latency,
)
from .controller import ModuleTelemetry, RewardParams, RoutingAction
from .knowledge import CachePool, HHIIndex
from .modules import ModuleDescriptor, round_half_up
from .nn import Mlp
from .presenter import CasePhase, CaseScript, TraceEvent
from .tasks import Task, WorkloadSpec

KB_SEED_SALT = 0xC0FFEE
NOMINAL_GRAPH_NODES = 10
PARAM_BYTES = 8.0
TELEMETRY_WINDOW = 10


class EngineError(ValueError):
    """Raised on engine misconfiguration."""


@dataclass(frozen=True)
class EngineParams:
    """Static knobs of one simulation instance."""

    min_steps: int = 4
    max_steps: int = 64
    retrieval_k: int = 10
    cache_capacity: int = 4096
    kb_items: int = 2048
    kb_dim: int = 16
    controller_latency_ms: float = 1.4
    presenter_latency_ms: float = 0.4
    latency_budget_ms_per_task: float = 14.0
    energy_overhead_j: float = 0.5
    # task quality = weighted mean of per-module quality (skipped -> 0)
    module_weights: tuple[float, float, float] = (0.4, 0.4, 0.2)
    # probes needed for full retrieval adequacy scale with difficulty
    probe_need_scale: int = 16
    swing_window: int = 10

    def __post_init__(self) -> None:
        if not 1 <= self.min_steps <= self.max_steps:
            raise EngineError("need 1 <= min_steps <= max_steps")
        if abs(sum(self.module_weights) - 1.0) > 1e-9:
            raise EngineError("module weights must sum to 1")


@dataclass
class StepRecord:
    """Everything the trainer needs from one simulated task."""

    state: np.ndarray
    action: RoutingAction
    reward: float
    quality: float
    latency_ms: float
    energy_j: float


@dataclass
class RunResult:
    """Aggregated outcome of one workload run."""

    rows: list[MetricsRow]
    trace: list[TraceEvent]
    summary: dict
    ledger: FlopLedger
    clock_ms: float


class _Window:
    """Fixed-length trailing mean."""

    def __init__(self, size: int):
        self.size = size
        self.values: list[float] = []

    def push(self, value: float) -> None:
        self.values.append(value)
        if len(self.values) > self.size:
            self.values.pop(0)

    def mean(self, default: float = 0.0) -> float:
        return sum(self.values) / len(self.values) if self.values else default


class Engine:
    """One single-threaded, fully seeded simulation instance."""

    def __init__(
        self,
        spec: WorkloadSpec,
        mode: str,
        params: EngineParams | None = None,
        descriptors: dict[str, ModuleDescriptor] | None = None,
        reward_params: RewardParams | None = None,
        policy: Optional[Mlp] = None,
        rng: np.random.Generator | None = None,
        index: HHIIndex | None = None,
        record_trace: bool = True,
    ):
        if mode not in controller.ROUTING_MODES:
            raise EngineError(f"unknown mode {mode!r}")
        self.spec = spec
        self.mode = mode
        self.params = params or EngineParams()
        self.descriptors = descriptors or modules.default_descriptors()
        self.reward_params = reward_params or RewardParams()
        self.policy = policy
        self.rng = rng or np.random.Generator(np.random.PCG64(spec.seed))
        self.record_trace = record_trace

        if index is None:
            kb = knowledge.generate_knowledge_base(
                self.params.kb_items, self.params.kb_dim, seed=spec.seed ^ KB_SEED_SALT
            )
            index = knowledge.build_hhi(kb, seed=spec.seed ^ KB_SEED_SALT)
        self.index = index
        self.topic_means = index.kb.topic_means()
        self.cache_enabled = mode != "none"
        self.cache = CachePool(self.params.cache_capacity)
        self.energy_model = EnergyModel(
            joules_per_flop={
                kind: desc.energy_per_flop_joule
                for kind, desc in self.descriptors.items()
            },
            overhead_j=self.params.energy_overhead_j,
        )

        self.clock_ms = 0.0
        self.steps = 0
        self.prior_quality = 0.0
        self.ledger = FlopLedger()
        self.trace: list[TraceEvent] = []
        self.rows: list[MetricsRow] = []
        self.retrieval_calls = 0
        self.duplicate_recomputes = 0
        self._seen_fingerprints: set[str] = set()
        self._latency_window = _Window(self.params.swing_window)
        self._quality_windows = {k: _Window(TELEMETRY_WINDOW) for k in modules.MODULE_KINDS}
        self._activation_windows = {k: _Window(TELEMETRY_WINDOW) for k in modules.MODULE_KINDS}
        self._last_latency = {k: 0.0 for k in modules.MODULE_KINDS}
        self._last_energy = {k: 0.0 for k in modules.MODULE_KINDS}
        self._complexity_cache: dict[tuple, tasks.ComplexityVector] = {}
        self._full_energy_ref = self._full_intensity_energy()

    # ------------------------------------------------------------------
    # state construction

    def _full_intensity_energy(self) -> dict[str, float]:
        p = self.params
        d = self.descriptors
        return {
            "reasoning": d["reasoning"].flops_per_unit
            * modules.N_CLUSTERS
            * NOMINAL_GRAPH_NODES
            * d["reasoning"].energy_per_flop_joule,
            "generation": d["generation"].flops_per_unit
            * p.max_steps
            * d["generation"].energy_per_flop_joule,
            "retrieval": d["retrieval"].flops_per_unit
            * (self.index.n_clusters + len(self.index.kb))
            * d["retrieval"].energy_per_flop_joule,
        }

    def _telemetry(self, step_index: int, n_tasks: int) -> tuple[ModuleTelemetry, ...]:
        queue = max(0.0, (n_tasks - step_index) / n_tasks) if n_tasks else 0.0
        out = []
        for kind in modules.MODULE_KINDS:
            desc = self.descriptors[kind]
            energy_norm = min(
                1.0, self._last_energy[kind] / self._full_energy_ref[kind]
            )
            out.append(
                ModuleTelemetry(
                    u_p=min(1.0, self._activation_windows[kind].mean()),
                    delta_t=self._last_latency[kind] - desc.base_latency_ms,
                    recent_quality=min(1.0, self._quality_windows[kind].mean()),
                    activation_rate=min(1.0, self._activation_windows[kind].mean()),
                    cache_hit_rate=self.cache.hit_rate if kind == "retrieval" else 0.0,
                    queue_depth_norm=queue,
                    energy_rate_norm=energy_norm,
                )
            )
        return tuple(out)

    def observe(self, task: Task, step_index: int, n_tasks: int) -> np.ndarray:
        c = self._complexity(task)
        budget_total = self.params.latency_budget_ms_per_task * max(1, n_tasks)
        remaining = min(1.0, max(0.0, 1.0 - self.clock_ms / budget_total))
        step_norm = min(1.0, step_index / n_tasks) if n_tasks else 0.0
        return controller.build_state(
            c,
            self._telemetry(step_index, n_tasks),
            prior_q=self.prior_quality,
            budget_remaining_norm=remaining,
            step_norm=step_norm,
        )

    def _complexity(self, task: Task) -> tasks.ComplexityVector:
        # complexity is a pure function of (tokens, spec), so the token
        # tuple is the correct memo key (duplicates share an entry)
        cached = self._complexity_cache.get(task.tokens)
        if cached is None:
            cached = tasks.complexity(task, self.spec)
            self._complexity_cache[task.tokens] = cached
        return cached

    # ------------------------------------------------------------------
    # module execution

    def _run_retrieval(self, task: Task, intensity: float):
        n_probe = self.index.n_clusters
        if self.mode != "none":
            n_probe = max(
                1, min(self.index.n_clusters, round_half_up(self.index.n_clusters * intensity))
            )
        query = knowledge.query_for_task(self.topic_means, task.topic_id, task.tokens)
        fp = knowledge.query_fingerprint(query, self.params.retrieval_k)
        hits_before = self.cache.hits
        output, ids = knowledge.retrieve(
            query,
            self.params.retrieval_k,
            self.index,
            self.cache if self.cache_enabled else None,
            n_probe,
            desc=self.descriptors["retrieval"],
        )
        served_from_cache = self.cache.hits > hits_before
        self.retrieval_calls += 1
        recomputed = fp in self._seen_fingerprints and not served_from_cache
        if recomputed:
            self.duplicate_recomputes += 1
            # a recomputed answer is pure waste
            output = accounting_replace_invalid(output)
        self._seen_fingerprints.add(fp)
        return output, ids

    def _run_reasoning(self, task: Task, intensity: float):
        graph = modules.synth_inference_graph(task, self.spec.seed)
        pruned = modules.prune_cycles(graph)
        fraction = 1.0 if self.mode == "none" else intensity
        mask = modules.mask_for_fraction(fraction, task.topic_id)
        output = modules.reason(task, mask, pruned, self.descriptors["reasoning"])
        if self.mode == "none":
            extra_visits = modules.cycle_overhead(graph)
            if extra_visits:
                desc = self.descriptors["reasoning"]
                surcharge = desc.flops_per_unit * mask.n_active * extra_visits
                output = modules.ModuleOutput(
                    quality=output.quality,
                    latency_ms=output.latency_ms
                    + desc.base_latency_ms * extra_visits / NOMINAL_GRAPH_NODES,
                    flops=output.flops + surcharge,
                    invalid_flops=output.invalid_flops + surcharge,
                    artifacts=dict(output.artifacts, cycle_visits=extra_visits),
                )
        return output

    def _run_generation(self, task: Task, intensity: float):
        p = self.params
        fraction = 1.0 if self.mode == "none" else intensity
        budget = modules.budget_from_fraction(fraction, p.min_steps, p.max_steps)
        return modules.generate(
            task, budget, self.descriptors["generation"], p.min_steps, p.max_steps
        )

    def _task_quality(self, task: Task, action: RoutingAction, outputs) -> float:
        weights = self.params.module_weights
        total = 0.0
        for i, kind in enumerate(modules.MODULE_KINDS):
            out = outputs.get(kind)
            if out is None:
                continue
            if kind == "retrieval":
                used_probe = out.artifacts.get("n_probe", 1)
                needed = max(
                    1,
                    round_half_up(
                        self.params.probe_need_scale * task.intrinsic_difficulty
                    ),
                )
                adequacy = min(1.0, used_probe / needed) * out.quality
                q = modules.quality_score(adequacy, task.intrinsic_difficulty)
            else:
                q = out.quality
            total += weights[i] * q
        return min(1.0, max(0.0, total))

    # ------------------------------------------------------------------
    # main loops

    def run_task(
        self,
        task: Task,
        step_index: int,
        n_tasks: int,
        exploration_noise: float = 0.0,
        mode_override: str | None = None,
        action_override: RoutingAction | None = None,
        phase: str | None = None,
        activation_override: dict[str, float] | None = None,
    ) -> StepRecord:
        state = self.observe(task, step_index, n_tasks)
        mode = mode_override or self.mode
        if action_override is not None:
            action = action_override
        else:
            action = controller.select_route(
                state, self.policy, mode, exploration_noise, self.rng
            )

        outputs: dict[str, modules.ModuleOutput] = {}
        if not action.skip[2]:
            output, _ = self._run_retrieval(task, action.activation[2])
            outputs["retrieval"] = output
        if not action.skip[0]:
            outputs["reasoning"] = self._run_reasoning(task, action.activation[0])
        if not action.skip[1]:
            outputs["generation"] = self._run_generation(task, action.activation[1])

        quality = self._task_quality(task, action, outputs)
        t_model = sum(out.latency_ms for out in outputs.values())
        breakdown = LatencyBreakdown(
            t_model_ms=t_model,
            t_controller_ms=self.params.controller_latency_ms,
            t_presenter_ms=self.params.presenter_latency_ms,
        )
        t_total = total_latency(breakdown)
        swing = abs(t_total - self._latency_window.mean(default=t_total))
        step_reward = controller.reward(t_total, quality, swing, self.reward_params)

        task_ledger = FlopLedger()
        for kind, out in outputs.items():
            task_ledger.charge(kind, out.flops, out.invalid_flops)
            self.ledger.charge(kind, out.flops, out.invalid_flops)
        energy_j = accounting.energy(task_ledger, self.energy_model)

        self.clock_ms += t_total
        self.steps += 1
        self._latency_window.push(t_total)
        self.prior_quality = quality
        for i, kind in enumerate(modules.MODULE_KINDS):
            out = outputs.get(kind)
            intensity = 0.0 if action.skip[i] else action.activation[i]
            self._activation_windows[kind].push(intensity)
            self._quality_windows[kind].push(out.quality if out else 0.0)
            self._last_latency[kind] = out.latency_ms if out else 0.0
            energy_rate = self.energy_model.joules_per_flop[kind]
            self._last_energy[kind] = (out.flops * energy_rate) if out else 0.0

        if self.record_trace:
            presenter.record_step(
                self.trace,
                action,
                outputs,
                phase=phase or f"task-{task.id}",
                latency_ms=t_total,
                quality=quality,
                activation_override=activation_override,
            )
        self.rows.append(
            MetricsRow(
                task_id=task.id,
                mode=mode,
                t_model_ms=breakdown.t_model_ms,
                t_controller_ms=breakdown.t_controller_ms,
                t_presenter_ms=breakdown.t_presenter_ms,
                t_total_ms=t_total,
                flops=task_ledger.total_flops,
                invalid_flops=task_ledger.total_invalid,
                energy_j=energy_j,
                quality=quality,
                reward=step_reward,
            )
        )
        return StepRecord(
            state=state,
            action=action,
            reward=step_reward,
            quality=quality,
            latency_ms=t_total,
            energy_j=energy_j,
        )

    def run_workload(
        self, task_list: list[Task], exploration_noise: float = 0.0
    ) -> RunResult:
        start_row = len(self.rows)
        for i, task in enumerate(task_list):
            self.run_task(task, i, len(task_list), exploration_noise)
        rows = self.rows[start_row:]
        return RunResult(
            rows=rows,
            trace=self.trace,
            summary=self.summarize(rows),
            ledger=self.ledger,
            clock_ms=self.clock_ms,
        )

    def summarize(self, rows: list[MetricsRow]) -> dict:
        if not rows:
            return {"tasks": 0}
        latencies = np.asarray([r.t_total_ms for r in rows])
        total_flops = sum(r.flops for r in rows)
        return {
            "tasks": len(rows),
            "mode": self.mode,
            "mean_quality": float(np.mean([r.quality for r in rows])),
            "mean_latency_ms": float(latencies.mean()),
            "p50_latency_ms": float(np.percentile(latencies, 50)),
            "p95_latency_ms": float(np.percentile(latencies, 95)),
            "energy_per_task_j": float(np.mean([r.energy_j for r in rows])),
            "invalid_flop_fraction": (
                float(sum(r.invalid_flops for r in rows) / total_flops)
                if total_flops > 0
                else 0.0
            ),
            "throughput_tps": accounting.throughput(
                len(rows), float(latencies.sum())
            ),
            "mean_reward": float(np.mean([r.reward for r in rows])),
            "cache_hit_rate": self.cache.hit_rate,
            "duplicate_recall_rate": self.duplicate_recall_rate,
        }

    @property
    def duplicate_recall_rate(self) -> float:
        if self.retrieval_calls == 0:
            return 0.0
        return self.duplicate_recomputes / self.retrieval_calls

    # ------------------------------------------------------------------
    # scripted case replay

    def case_task(self, script: CaseScript, phase_index: int) -> Task:
        """Deterministic stand-in task for one scripted phase."""
        digest = int.from_bytes(
            hashlib.blake2b(
                f"{script.name}:{phase_index}".encode(), digest_size=8
            ).digest(),
            "little",
        )
        rng = np.random.Generator(np.random.PCG64(digest))
        tokens = tuple(int(t) for t in rng.integers(0, self.spec.vocab_size, size=12))
        return Task(
            id=phase_index,
            tokens=tokens,
            modality="multimodal",
            topic_id=digest % 128,
            duplicate_of=None,
            intrinsic_difficulty=0.5,
        )

    def _scripted_action(self, phase: CasePhase) -> RoutingAction:
        activation = [0.0, 0.0, 0.0]
        for i, kind in enumerate(modules.MODULE_KINDS):
            activation[i] = phase.activation_pct.get(kind, 0.0) / 100.0
        skip = [a <= 0.0 for a in activation]
        if phase.retrieve:
            activation[2] = max(activation[2], 0.1)
            skip[2] = False
        return RoutingAction(activation=tuple(activation), skip=tuple(skip))

    def run_case(self, script: CaseScript, apply_overrides: bool = True) -> list[TraceEvent]:
        """Execute one phase per script entry, returning the phase trace."""
        start = len(self.trace)
        for i, phase in enumerate(script.phases):
            task = self.case_task(script, i)
            if apply_overrides:
                self.run_task(
                    task,
                    i,
                    len(script.phases),
                    action_override=self._scripted_action(phase),
                    phase=phase.label,
                    activation_override=dict(phase.activation_pct),
                )
            else:
                self.run_task(task, i, len(script.phases), phase=phase.label)
        return self.trace[start:]

    # ------------------------------------------------------------------
    # space audit

    def space_audit(self) -> tuple[bool, float, float]:
        """Check the space bound against the engine's own byte accounting."""
        observed_model = sum(
            PARAM_BYTES * desc.param_count for desc in self.descriptors.values()
        )
        event_bytes = [
            len(json.dumps(e.activation_pct) + e.rationale) + 64 for e in self.trace
        ]
        observed_state = float(sum(event_bytes))
        k_s = float(max(event_bytes)) if event_bytes else 0.0
        model = SpaceModel(
            module_costs=tuple(
                (PARAM_BYTES, float(desc.param_count))
                for desc in self.descriptors.values()
            ),
            state_cost_per_step=k_s,
            horizon=len(self.trace),
        )
        holds, bound = accounting.space_bound(model, observed_model + observed_state)
        return holds, bound, observed_model + observed_state


def accounting_replace_invalid(output: modules.ModuleOutput) -> modules.ModuleOutput:
    """Mark an entire module invocation as redundant work."""
    return modules.ModuleOutput(
        quality=output.quality,
        latency_ms=output.latency_ms,
        flops=output.flops,
        invalid_flops=output.flops,
        artifacts=output.artifacts,
    )
