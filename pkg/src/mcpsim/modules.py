"""Simulated functional modules: cluster-gated reasoning and budgeted generation.

The reasoning module splits its capacity into 32 functional clusters.  For
every knowledge topic a seeded permutation ranks the clusters by relevance;
activating down the ranking first keeps small masks fully relevant, while a
full mask always drags in the 13 low-relevance clusters (40.6% of the
compute), which is what the invalid-FLOP ledger charges for.

The generation module charges per decoding step and saturates at a hidden
task-specific step count, so over-budgeting buys no quality and shows up as
invalid FLOPs instead.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .tasks import ComplexityVector, Task

N_CLUSTERS = 32
# Relevance of the cluster ranked i (0-based) for a topic is
# 1 - (i + 0.5) / 32; everything below this threshold is wasted work.
RELEVANCE_THRESHOLD = 0.4
RELEVANT_PER_TOPIC = sum(
    1 for i in range(N_CLUSTERS) if 1.0 - (i + 0.5) / N_CLUSTERS >= RELEVANCE_THRESHOLD
)

# Hidden quality model: q = BASE + BONUS * adequacy - difficulty * (1 - adequacy),
# minus a mild over-provisioning penalty (irrelevant clusters and past-
# saturation decoding steps inject noise instead of signal), so quality is
# single-peaked at the right-sized resource level.
BASE_CAPABILITY = 0.6
COVERAGE_BONUS = 0.4
WASTE_QUALITY_PENALTY = 0.15
# Relevant clusters a maximally hard task needs; below the 19 relevant
# ones available so the gate always has headroom.
NEEDED_CLUSTER_SCALE = 13

# Each unresolved cycle edge costs this many wasted node visits when loop
# pruning is bypassed.
CYCLE_VISITS_PER_BACK_EDGE = 3

MODULE_KINDS = ("reasoning", "generation", "retrieval")


class ModuleError(ValueError):
    """Raised on contract violations inside the simulated modules."""


def round_half_up(x: float) -> int:
    """Deterministic rounding used by every resource-sizing contract."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ModuleDescriptor:
    """Static cost profile of one simulated module."""

    kind: str
    param_count: int
    base_latency_ms: float
    flops_per_unit: float
    energy_per_flop_joule: float

    def __post_init__(self) -> None:
        if self.kind not in MODULE_KINDS:
            raise ModuleError(f"unknown module kind {self.kind!r}")
        if min(
            self.param_count,
            self.base_latency_ms,
            self.flops_per_unit,
            self.energy_per_flop_joule,
        ) <= 0:
            raise ModuleError("descriptor fields must all be positive")


def default_descriptors() -> dict[str, ModuleDescriptor]:
    """Nominal per-module profiles used by the engine unless overridden."""
    energy = 4.3e-8
    return {
        "reasoning": ModuleDescriptor("reasoning", 43_700_000, 8.2, 1.5e6, energy),
        "generation": ModuleDescriptor("generation", 37_500_000, 6.5, 1.0e6, energy),
        "retrieval": ModuleDescriptor("retrieval", 18_800, 4.1, 32.0, energy),
    }


@dataclass(frozen=True)
class SacClusterMask:
    """Which of the 32 reasoning clusters are switched on."""

    active: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.active) != N_CLUSTERS:
            raise ModuleError(f"mask must cover {N_CLUSTERS} clusters")
        if not any(self.active):
            raise ModuleError("at least one cluster must be active")

    @property
    def n_active(self) -> int:
        return sum(self.active)

    def active_ids(self) -> tuple[int, ...]:
        return tuple(i for i, on in enumerate(self.active) if on)


def topic_cluster_ranking(topic_id: int) -> np.ndarray:
    """Seeded relevance ranking of all clusters for one topic."""
    digest = hashlib.blake2b(
        f"cluster-ranking:{topic_id}".encode(), digest_size=8
    ).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    return rng.permutation(N_CLUSTERS)


def cluster_relevance(topic_id: int) -> np.ndarray:
    """Relevance score per cluster id for a topic, in descending rank order."""
    ranking = topic_cluster_ranking(topic_id)
    scores = np.empty(N_CLUSTERS)
    for pos, cluster in enumerate(ranking):
        scores[cluster] = 1.0 - (pos + 0.5) / N_CLUSTERS
    return scores


def mask_for_fraction(fraction: float, topic_id: int) -> SacClusterMask:
    """Activate the top max(1, round(32 * fraction)) clusters for the topic."""
    n = max(1, min(N_CLUSTERS, round_half_up(N_CLUSTERS * fraction)))
    ranking = topic_cluster_ranking(topic_id)
    active = [False] * N_CLUSTERS
    for cluster in ranking[:n]:
        active[cluster] = True
    return SacClusterMask(tuple(active))


def sac_gate(c: ComplexityVector, topic_id: int) -> SacClusterMask:
    """Complexity-driven cluster gate: count scales with mean complexity."""
    return mask_for_fraction(c.mean(), topic_id)


@dataclass(frozen=True)
class InferenceGraph:
    """Directed reasoning-step graph; may contain cycles before pruning."""

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    entry: int

    def __post_init__(self) -> None:
        node_set = set(self.nodes)
        if self.entry not in node_set:
            raise ModuleError("entry node must be in the graph")
        for u, v in self.edges:
            if u not in node_set or v not in node_set:
                raise ModuleError(f"edge ({u}, {v}) references unknown node")


def _adjacency(g: InferenceGraph) -> dict[int, list[int]]:
    adj: dict[int, list[int]] = {n: [] for n in g.nodes}
    for u, v in sorted(set(g.edges)):
        adj[u].append(v)
    return adj


def find_back_edges(g: InferenceGraph) -> set[tuple[int, int]]:
    """Back edges of a DFS forest rooted at entry, neighbors in ascending id.

    After the entry tree is exhausted, remaining unvisited nodes are taken
    as new roots in ascending id order so the whole graph gets classified.
    """
    adj = _adjacency(g)
    color = {n: 0 for n in g.nodes}  # 0 white, 1 gray, 2 black
    back: set[tuple[int, int]] = set()

    def visit(root: int) -> None:
        stack: list[tuple[int, int]] = [(root, 0)]
        color[root] = 1
        while stack:
            node, idx = stack[-1]
            if idx < len(adj[node]):
                stack[-1] = (node, idx + 1)
                child = adj[node][idx]
                if color[child] == 0:
                    color[child] = 1
                    stack.append((child, 0))
                elif color[child] == 1:
                    back.add((node, child))
            else:
                color[node] = 2
                stack.pop()

    visit(g.entry)
    for node in sorted(g.nodes):
        if color[node] == 0:
            visit(node)
    return back


def prune_cycles(g: InferenceGraph) -> InferenceGraph:
    """Drop exactly the DFS back edges, leaving an acyclic graph."""
    back = find_back_edges(g)
    kept = tuple(e for e in sorted(set(g.edges)) if e not in back)
    return InferenceGraph(nodes=g.nodes, edges=kept, entry=g.entry)


def is_acyclic(g: InferenceGraph) -> bool:
    """Kahn's algorithm; independent of the DFS used for pruning."""
    indeg = {n: 0 for n in g.nodes}
    adj = _adjacency(g)
    for u, v in set(g.edges):
        indeg[v] += 1
    queue = sorted(n for n, d in indeg.items() if d == 0)
    seen = 0
    while queue:
        node = queue.pop()
        seen += 1
        for child in adj[node]:
            indeg[child] -= 1
            if indeg[child] == 0:
                queue.append(child)
    return seen == len(g.nodes)


def reachable_nodes(g: InferenceGraph) -> int:
    adj = _adjacency(g)
    seen = {g.entry}
    stack = [g.entry]
    while stack:
        for child in adj[stack.pop()]:
            if child not in seen:
                seen.add(child)
                stack.append(child)
    return len(seen)


def _token_fingerprint(tokens) -> int:
    raw = np.asarray(tokens, dtype=np.int64).tobytes()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


def synth_inference_graph(task: Task, seed: int) -> InferenceGraph:
    """Seeded reasoning graph for a task: a forward chain plus extra edges.

    Roughly a third of the graphs get 1-3 cycle-closing edges, which the
    DFS pruner later removes; depends only on (tokens, seed) so duplicate
    tasks share a graph.
    """
    rng = np.random.Generator(
        np.random.PCG64(_token_fingerprint(task.tokens) ^ (seed & (2**64 - 1)))
    )
    n = int(np.clip(4 + len(task.tokens) // 8, 4, 14))
    edges = {(i, i + 1) for i in range(n - 1)}
    for _ in range(int(rng.integers(1, n))):
        u = int(rng.integers(0, n - 1))
        v = int(rng.integers(u + 1, n))
        edges.add((u, v))
    if rng.uniform() < 0.35:
        for _ in range(int(rng.integers(1, 4))):
            v = int(rng.integers(0, n - 1))
            u = int(rng.integers(v, n))
            edges.add((u, v))
    return InferenceGraph(
        nodes=tuple(range(n)), edges=tuple(sorted(edges)), entry=0
    )


@dataclass(frozen=True)
class ModuleOutput:
    """Quality plus the cost ledger entry for one module invocation."""

    quality: float
    latency_ms: float
    flops: float
    invalid_flops: float
    artifacts: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.invalid_flops <= self.flops + 1e-9:
            raise ModuleError("invalid_flops must lie in [0, flops]")
        if self.latency_ms < 0:
            raise ModuleError("latency must be non-negative")


def quality_score(adequacy: float, difficulty: float) -> float:
    """Hidden quality model shared by all modules."""
    q = BASE_CAPABILITY + COVERAGE_BONUS * adequacy - difficulty * (1.0 - adequacy)
    return min(1.0, max(0.0, q))


def clusters_needed(difficulty: float) -> int:
    """Relevant clusters a task of this difficulty needs for full adequacy."""
    return max(1, math.ceil(NEEDED_CLUSTER_SCALE * difficulty))


def reason(
    task: Task,
    mask: SacClusterMask,
    g: InferenceGraph,
    desc: ModuleDescriptor,
) -> ModuleOutput:
    """Run the gated reasoning module over a pruned inference graph."""
    if not is_acyclic(g):
        raise ModuleError("reason() requires a pruned, acyclic graph")
    relevance = cluster_relevance(task.topic_id)
    active = np.asarray(mask.active)
    n_active = mask.n_active
    n_irrelevant = int((active & (relevance < RELEVANCE_THRESHOLD)).sum())
    n_relevant = n_active - n_irrelevant
    n_reach = reachable_nodes(g)

    flops = desc.flops_per_unit * n_active * n_reach
    invalid = desc.flops_per_unit * n_irrelevant * n_reach
    adequacy = min(1.0, n_relevant / clusters_needed(task.intrinsic_difficulty))
    noise_penalty = WASTE_QUALITY_PENALTY * n_irrelevant / (N_CLUSTERS - RELEVANT_PER_TOPIC)
    return ModuleOutput(
        quality=max(0.0, quality_score(adequacy, task.intrinsic_difficulty) - noise_penalty),
        latency_ms=desc.base_latency_ms * (n_active / N_CLUSTERS),
        flops=flops,
        invalid_flops=invalid,
        artifacts={"proof_steps": n_reach, "active_clusters": n_active},
    )


def cycle_overhead(g: InferenceGraph) -> int:
    """Extra node visits incurred if the graph's cycles are never pruned."""
    return CYCLE_VISITS_PER_BACK_EDGE * len(find_back_edges(g))


def lad_step_budget(c: ComplexityVector, min_steps: int, max_steps: int) -> int:
    """Complexity-aware decoding budget, monotone in every component."""
    return budget_from_fraction(c.mean(), min_steps, max_steps)


def budget_from_fraction(fraction: float, min_steps: int, max_steps: int) -> int:
    if not 1 <= min_steps <= max_steps:
        raise ModuleError("need 1 <= min_steps <= max_steps")
    fraction = min(1.0, max(0.0, fraction))
    return min_steps + round_half_up((max_steps - min_steps) * fraction)


def saturation_steps(task: Task, min_steps: int, max_steps: int) -> int:
    """Hidden step count past which extra decoding buys nothing."""
    return max(
        1,
        min_steps
        + round_half_up((max_steps - min_steps) * task.intrinsic_difficulty),
    )


def generate(
    task: Task,
    budget: int,
    desc: ModuleDescriptor,
    min_steps: int,
    max_steps: int,
) -> ModuleOutput:
    """Run the generation module for ``budget`` decoding steps."""
    if budget < 1:
        raise ModuleError("generation budget must be >= 1")
    sat = saturation_steps(task, min_steps, max_steps)
    useful = min(budget, sat)
    flops = desc.flops_per_unit * budget
    invalid = desc.flops_per_unit * (budget - useful)
    adequacy = useful / sat
    overshoot = (budget - useful) / max(1, max_steps - min_steps)
    return ModuleOutput(
        quality=max(0.0, quality_score(adequacy, task.intrinsic_difficulty)
                    - WASTE_QUALITY_PENALTY * overshoot),
        latency_ms=desc.base_latency_ms * budget / max_steps,
        flops=flops,
        invalid_flops=invalid,
        artifacts={"steps": budget, "saturation": sat},
    )
