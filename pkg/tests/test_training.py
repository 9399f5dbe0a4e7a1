"""Training loops: determinism, telemetry schema, toy convergence direction."""

from __future__ import annotations

import numpy as np
import pytest

from mcpsim import nn
from mcpsim.controller import Td3Config
from mcpsim.engine import EngineParams
from mcpsim.modules import default_descriptors
from mcpsim.controller import RewardParams
from mcpsim.tasks import WorkloadSpec
from mcpsim.toy_mdp import ToyEnv, step_reward, transition, value_iteration
from mcpsim.training import (
    TrainParams,
    TrainingError,
    greedy_toy_actions,
    train_routing_policy,
    train_toy_policy,
    write_training_csv,
)

FAST = TrainParams(
    steps=120, warmup=40, episode_tasks=40, eval_every=80, eval_tasks=20, log_every=20
)
FAST_TD3 = Td3Config(seed=0, batch_size=32)


def _fast_routing(seed: int):
    spec = WorkloadSpec(seed=seed, n_tasks=100, duplicate_fraction=0.1)
    return train_routing_policy(
        spec,
        EngineParams(kb_items=256, kb_dim=8),
        default_descriptors(),
        RewardParams(),
        FAST_TD3,
        FAST,
        seed=seed,
    )


class TestToyMdp:
    def test_value_iteration_recovers_closed_form(self):
        actions, values = value_iteration(0.95)
        assert actions[0] == pytest.approx(0.2, abs=0.01)
        assert actions[1] == pytest.approx(0.8, abs=0.01)
        assert np.all(values > 0)

    def test_env_alternates_and_rewards(self):
        env = ToyEnv()
        s1, r1 = env.step(0.2)
        assert s1 == 1 and r1 == pytest.approx(1.0)
        s2, r2 = env.step(0.8)
        assert s2 == 0 and r2 == pytest.approx(1.0)
        assert step_reward(0, 0.7) == pytest.approx(1.0 - 0.25)
        assert transition(1) == 0

    def test_toy_training_moves_toward_oracle(self):
        cfg = Td3Config(seed=3, batch_size=64, exploration_noise=0.2)
        out = train_toy_policy(cfg, TrainParams(env="toy", steps=1500, warmup=200), seed=3)
        actions = greedy_toy_actions(out.best_actor)
        # directional check only; the acceptance suite runs the full budget
        assert actions[0] < actions[1]


class TestRoutingTraining:
    def test_deterministic_given_seed(self):
        a = _fast_routing(5)
        b = _fast_routing(5)
        assert np.array_equal(
            nn.flatten_params(a.best_actor), nn.flatten_params(b.best_actor)
        )
        assert a.telemetry == b.telemetry
        assert a.best_eval_reward == b.best_eval_reward

    def test_different_seeds_differ(self):
        a = _fast_routing(5)
        b = _fast_routing(6)
        assert not np.array_equal(
            nn.flatten_params(a.best_actor), nn.flatten_params(b.best_actor)
        )

    def test_telemetry_rows_at_log_interval(self):
        out = _fast_routing(7)
        assert len(out.telemetry) == 120 // 20
        assert [r["step"] for r in out.telemetry] == [20, 40, 60, 80, 100, 120]

    def test_zero_steps_returns_initialization(self):
        spec = WorkloadSpec(seed=8, n_tasks=50)
        params = TrainParams(steps=0, warmup=0, episode_tasks=10, eval_tasks=10)
        out = train_routing_policy(
            spec,
            EngineParams(kb_items=256, kb_dim=8),
            default_descriptors(),
            RewardParams(),
            FAST_TD3,
            params,
            seed=8,
        )
        from mcpsim.controller import init_td3

        init_actor = init_td3(FAST_TD3).actor
        assert np.array_equal(
            nn.flatten_params(out.best_actor), nn.flatten_params(init_actor)
        )

    def test_bad_env_rejected(self):
        with pytest.raises(TrainingError):
            TrainParams(env="gridworld")


class TestTelemetryCsv:
    def test_schema(self, tmp_path):
        rows = [
            {
                "step": 10,
                "episode": 0,
                "reward": 1.5,
                "critic1_loss": 0.1,
                "critic2_loss": 0.2,
                "actor_objective": 0.9,
                "epsilon_latency_ms": 8.0,
            }
        ]
        path = tmp_path / "telemetry.csv"
        write_training_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == (
            "step,episode,reward,critic1_loss,critic2_loss,"
            "actor_objective,epsilon_latency_ms"
        )
        assert lines[1] == "10,0,1.5,0.1,0.2,0.9,8.0"
