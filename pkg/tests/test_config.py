"""Config: strict json parsing, unknown-key rejection, round-trip."""

from __future__ import annotations

import dataclasses
import json

import pytest

from mcpsim.config import (
    ConfigError,
    RunConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
)


class TestRoundTrip:
    def test_default_config_round_trips(self):
        cfg = RunConfig()
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_modified_config_round_trips(self):
        cfg = RunConfig(seed=99, mode="random", episodes=3)
        again = config_from_dict(json.loads(dump_config(cfg)))
        assert again == cfg

    def test_load_from_file(self, tmp_path):
        cfg = RunConfig(seed=123)
        path = tmp_path / "run.json"
        path.write_text(dump_config(cfg), encoding="utf-8")
        assert load_config(path) == cfg


class TestStrictness:
    def test_missing_version_rejected(self):
        data = config_to_dict(RunConfig())
        del data["version"]
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_unknown_top_level_key_rejected(self):
        data = config_to_dict(RunConfig())
        data["typo_key"] = 1
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_unknown_nested_key_rejected(self):
        data = config_to_dict(RunConfig())
        data["workload"]["n_task"] = 5  # typo for n_tasks
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_wrong_version_rejected(self):
        data = config_to_dict(RunConfig())
        data["version"] = 99
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_bad_mode_rejected(self):
        data = config_to_dict(RunConfig())
        data["mode"] = "turbo"
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_invalid_workload_values_rejected(self):
        data = config_to_dict(RunConfig())
        data["workload"]["n_tasks"] = 0
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_not_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)


class TestSeedInjection:
    def test_workload_spec_uses_run_seed(self):
        cfg = RunConfig(seed=31)
        assert cfg.workload_spec().seed == 31

    def test_episode_seeds_differ(self):
        cfg = RunConfig(seed=31)
        assert cfg.workload_spec(0).seed != cfg.workload_spec(1).seed

    def test_descriptor_overrides_merge(self):
        data = config_to_dict(RunConfig())
        data["descriptors"] = {
            "reasoning": {
                "param_count": 1000,
                "base_latency_ms": 5.0,
                "flops_per_unit": 1e5,
                "energy_per_flop_joule": 1e-9,
            }
        }
        cfg = config_from_dict(data)
        assert cfg.descriptors["reasoning"].param_count == 1000
        assert cfg.descriptors["generation"].param_count == 37_500_000

    def test_replace_keeps_validity(self):
        cfg = dataclasses.replace(RunConfig(), mode="none")
        assert cfg.mode == "none"
