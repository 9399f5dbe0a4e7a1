"""Training loops: TD3 on the routing environment and on the toy benchmark.

Routing training is bandit-style: every simulated task is one terminal
transition, so the critics regress to the immediate reward and the actor
climbs the learned reward surface.  Episodes draw fresh task batches from
the configured workload distribution; evaluation replays a fixed held-out
workload with the greedy policy and keeps the best-scoring actor.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import controller, nn, toy_mdp
from .controller import ReplayBuffer, Td3Config, Td3State, Transition
from .engine import Engine, EngineParams
from .fileio import atomic_write_text
from .knowledge import HHIIndex
from .modules import ModuleDescriptor
from .tasks import WorkloadSpec, generate_workload

TRAINING_CSV_COLUMNS = (
    "step",
    "episode",
    "reward",
    "critic1_loss",
    "critic2_loss",
    "actor_objective",
    "epsilon_latency_ms",
)

EVAL_SEED_OFFSET = 4242
EPISODE_SEED_OFFSET = 10_000


class TrainingError(ValueError):
    """Raised on inconsistent training setups."""


@dataclass(frozen=True)
class TrainParams:
    """Knobs of the training loop itself (TD3 hypers live in Td3Config)."""

    env: str = "routing"  # or "toy"
    steps: int = 12000
    warmup: int = 500
    episode_tasks: int = 250
    eval_every: int = 1000
    eval_tasks: int = 400
    log_every: int = 50
    noise_floor: float = 0.06  # exploration decays linearly to this
    updates_per_step: int = 2
    # critic-only updates on the uniform warmup data before the first
    # actor update, so the actor never climbs an unfitted landscape
    critic_warmup_updates: int = 400

    def __post_init__(self) -> None:
        if self.env not in ("routing", "toy"):
            raise TrainingError(f"unknown training env {self.env!r}")
        if self.steps < 0 or self.warmup < 0:
            raise TrainingError("steps and warmup must be non-negative")
        if min(self.episode_tasks, self.eval_every, self.eval_tasks, self.log_every) < 1:
            raise TrainingError("episode/eval/log sizes must be positive")


@dataclass
class TrainOutcome:
    td3: Td3State
    best_actor: nn.Mlp
    best_eval_reward: float
    telemetry: list[dict] = field(default_factory=list)


def _evaluate_routing(
    actor: nn.Mlp,
    spec: WorkloadSpec,
    engine_params: EngineParams,
    descriptors: dict[str, ModuleDescriptor],
    reward_params,
    index: HHIIndex,
    eval_tasks: int,
) -> float:
    eval_spec = replace(spec, seed=spec.seed + EVAL_SEED_OFFSET, n_tasks=eval_tasks)
    engine = Engine(
        spec=spec,
        mode="dynamic",
        params=engine_params,
        descriptors=descriptors,
        reward_params=reward_params,
        policy=actor,
        rng=np.random.Generator(np.random.PCG64(eval_spec.seed)),
        index=index,
        record_trace=False,
    )
    result = engine.run_workload(generate_workload(eval_spec))
    return result.summary["mean_reward"]


def train_routing_policy(
    spec: WorkloadSpec,
    engine_params: EngineParams,
    descriptors: dict[str, ModuleDescriptor],
    reward_params,
    cfg: Td3Config,
    params: TrainParams,
    seed: int,
) -> TrainOutcome:
    """Train a routing policy against the configured workload distribution."""
    rng = np.random.Generator(np.random.PCG64(seed))
    td3 = controller.init_td3(cfg)
    buffer = ReplayBuffer(cfg.replay_capacity)

    shared_engine = Engine(
        spec=spec,
        mode="dynamic",
        params=engine_params,
        descriptors=descriptors,
        reward_params=reward_params,
        policy=td3.actor,
        rng=rng,
        record_trace=False,
    )
    index = shared_engine.index

    def evaluate() -> float:
        return _evaluate_routing(
            td3.actor, spec, engine_params, descriptors, reward_params,
            index, params.eval_tasks,
        )

    best_eval = evaluate()
    best_actor = td3.actor.copy()
    telemetry: list[dict] = []
    recent_rewards: deque[float] = deque(maxlen=100)
    recent_latency: deque[float] = deque(maxlen=100)
    last_diag = {"critic1_loss": 0.0, "critic2_loss": 0.0, "actor_objective": 0.0}

    # actor_delay larger than any warmup budget => critic-only updates
    critic_only = replace(cfg, actor_delay=10**9)
    critic_warmup_done = False

    step = 0
    episode = 0
    while step < params.steps:
        episode_spec = replace(
            spec,
            seed=spec.seed + EPISODE_SEED_OFFSET + episode,
            n_tasks=params.episode_tasks,
        )
        task_list = generate_workload(episode_spec)
        # every fourth episode runs greedy so the noise-free closed-loop
        # telemetry distribution is represented in the replay buffer
        greedy_episode = episode % 4 == 3
        for i, task in enumerate(task_list):
            if step >= params.steps:
                break
            warmup = step < params.warmup
            progress = step / max(1, params.steps)
            sigma = max(
                params.noise_floor, cfg.exploration_noise * (1.0 - progress)
            )
            if greedy_episode:
                sigma = 0.0
            record = shared_engine.run_task(
                task,
                i,
                len(task_list),
                exploration_noise=0.0 if warmup else sigma,
                mode_override="random" if warmup else None,
            )
            buffer.add(
                Transition(
                    state=record.state,
                    action=record.action.as_array(),
                    reward=record.reward,
                    next_state=np.zeros_like(record.state),
                    terminal=True,
                )
            )
            recent_rewards.append(record.reward)
            recent_latency.append(record.latency_ms)
            if not warmup and len(buffer) >= cfg.batch_size:
                if not critic_warmup_done:
                    for _ in range(params.critic_warmup_updates):
                        controller.td3_update(buffer, td3, critic_only, rng)
                    critic_warmup_done = True
                for _ in range(params.updates_per_step):
                    diag = controller.td3_update(buffer, td3, cfg, rng)
                    if np.isfinite(diag["actor_objective"]):
                        last_diag = diag
                    else:
                        last_diag = dict(diag, actor_objective=last_diag["actor_objective"])
            step += 1
            if step % params.log_every == 0:
                telemetry.append(
                    {
                        "step": step,
                        "episode": episode,
                        "reward": float(np.mean(recent_rewards)),
                        "critic1_loss": last_diag["critic1_loss"],
                        "critic2_loss": last_diag["critic2_loss"],
                        "actor_objective": last_diag["actor_objective"],
                        "epsilon_latency_ms": float(np.mean(recent_latency)),
                    }
                )
            if step % params.eval_every == 0:
                score = evaluate()
                if score > best_eval:
                    best_eval = score
                    best_actor = td3.actor.copy()
        episode += 1

    final_score = evaluate()
    if final_score > best_eval:
        best_eval = final_score
        best_actor = td3.actor.copy()
    return TrainOutcome(
        td3=td3, best_actor=best_actor, best_eval_reward=best_eval, telemetry=telemetry
    )


def train_toy_policy(
    cfg: Td3Config, params: TrainParams, seed: int
) -> TrainOutcome:
    """Train TD3 on the two-state benchmark (continuing task, bootstrapped)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    td3 = controller.init_td3(
        cfg, state_dim=toy_mdp.STATE_DIM, action_dim=toy_mdp.ACTION_DIM
    )
    buffer = ReplayBuffer(
        cfg.replay_capacity, state_dim=toy_mdp.STATE_DIM, action_dim=toy_mdp.ACTION_DIM
    )
    env = toy_mdp.ToyEnv()
    state = env.reset()
    telemetry: list[dict] = []
    recent_rewards: deque[float] = deque(maxlen=100)
    last_diag = {"critic1_loss": 0.0, "critic2_loss": 0.0, "actor_objective": 0.0}

    for step in range(1, params.steps + 1):
        obs = toy_mdp.encode_state(state)
        if step <= params.warmup:
            action = float(rng.uniform(0.0, 1.0))
        else:
            greedy = controller.actor_action(td3.actor, obs)[0]
            action = float(
                np.clip(greedy + rng.normal(0.0, cfg.exploration_noise), 0.0, 1.0)
            )
        next_state, r = env.step(action)
        buffer.add(
            Transition(
                state=obs,
                action=np.array([action]),
                reward=r,
                next_state=toy_mdp.encode_state(next_state),
                terminal=False,
            )
        )
        state = next_state
        recent_rewards.append(r)
        if step > params.warmup and len(buffer) >= cfg.batch_size:
            diag = controller.td3_update(buffer, td3, cfg, rng)
            if np.isfinite(diag["actor_objective"]):
                last_diag = diag
            else:
                last_diag = dict(diag, actor_objective=last_diag["actor_objective"])
        if step % params.log_every == 0:
            telemetry.append(
                {
                    "step": step,
                    "episode": 0,
                    "reward": float(np.mean(recent_rewards)),
                    "critic1_loss": last_diag["critic1_loss"],
                    "critic2_loss": last_diag["critic2_loss"],
                    "actor_objective": last_diag["actor_objective"],
                    "epsilon_latency_ms": 0.0,
                }
            )

    return TrainOutcome(
        td3=td3,
        best_actor=td3.actor.copy(),
        best_eval_reward=float(np.mean(recent_rewards)) if recent_rewards else 0.0,
        telemetry=telemetry,
    )


def greedy_toy_actions(actor: nn.Mlp) -> np.ndarray:
    """The trained policy's action in each of the two states."""
    return np.array(
        [
            float(controller.actor_action(actor, toy_mdp.encode_state(s))[0])
            for s in range(toy_mdp.N_STATES)
        ]
    )


def write_training_csv(telemetry: list[dict], path) -> None:
    lines = [",".join(TRAINING_CSV_COLUMNS)]
    for row in telemetry:
        lines.append(
            ",".join(
                [
                    str(row["step"]),
                    str(row["episode"]),
                    repr(float(row["reward"])),
                    repr(float(row["critic1_loss"])),
                    repr(float(row["critic2_loss"])),
                    repr(float(row["actor_objective"])),
                    repr(float(row["epsilon_latency_ms"])),
                ]
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")
