"""Task model: complexity estimators, workload generation, text round-trip."""

from __future__ import annotations

import collections
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcpsim import tasks
from mcpsim.tasks import (
    ComplexityVector,
    Task,
    TaskError,
    WorkloadSpec,
    attention_variance,
    complexity,
    empirical_entropy,
    generate_workload,
    length_norm,
    load_workload,
    save_workload,
    semantic_entropy,
    synth_attention,
)


def _direct_entropy_nats(tokens) -> float:
    counts = collections.Counter(tokens)
    n = len(tokens)
    return -sum((c / n) * math.log(c / n) for c in counts.values())


class TestSemanticEntropy:
    def test_single_repeated_token_is_zero(self):
        assert semantic_entropy([9] * 50, vocab_size=32) == 0.0

    def test_uniform_coverage_is_one(self):
        assert semantic_entropy([0, 1, 2, 3], vocab_size=4) == pytest.approx(1.0)

    def test_half_quarter_quarter(self):
        # frequencies (0.5, 0.25, 0.25, 0): 1.5 bits over log2(4) = 2 bits
        assert semantic_entropy([0, 0, 1, 2], vocab_size=4) == pytest.approx(0.75)

    def test_empty_stream_rejected(self):
        with pytest.raises(TaskError):
            semantic_entropy([], vocab_size=4)

    def test_small_vocab_rejected(self):
        with pytest.raises(TaskError):
            semantic_entropy([0], vocab_size=1)

    def test_matches_direct_oracle(self):
        rng = np.random.Generator(np.random.PCG64(3))
        for _ in range(200):
            toks = rng.integers(0, 64, size=int(rng.integers(1, 300))).tolist()
            direct = _direct_entropy_nats(toks)
            assert empirical_entropy(toks) == pytest.approx(direct, rel=1e-12, abs=1e-12)

    @given(
        st.lists(st.integers(min_value=0, max_value=30), min_size=1, max_size=80),
        st.integers(min_value=31, max_value=200),
    )
    @settings(max_examples=200, deadline=None)
    def test_appending_unseen_token_never_decreases_entropy(self, toks, fresh):
        before = empirical_entropy(toks)
        after = empirical_entropy(toks + [fresh])
        assert after >= before - 1e-12


class TestLengthNorm:
    def test_full_length(self):
        assert length_norm(512, 512) == 1.0

    def test_exact_division(self):
        assert length_norm(128, 512) == 0.25

    def test_clamped_above_max(self):
        assert length_norm(1024, 512) == 1.0

    def test_zero_rejected(self):
        with pytest.raises(TaskError):
            length_norm(0, 512)


class TestAttentionVariance:
    def test_uniform_matrix_is_zero(self):
        for n in (2, 3, 7):
            assert attention_variance(np.full((n, n), 1.0 / n)) == 0.0

    def test_identity_is_one(self):
        for n in (2, 4, 9):
            assert attention_variance(np.eye(n)) == pytest.approx(1.0)

    def test_hand_computed_2x2(self):
        m = np.array([[0.75, 0.25], [0.25, 0.75]])
        # population variance 0.0625 over max (2-1)/4 = 0.25
        assert attention_variance(m) == pytest.approx(0.25)

    def test_single_entry_matrix_is_zero(self):
        assert attention_variance(np.array([[1.0]])) == 0.0

    def test_non_stochastic_rejected(self):
        with pytest.raises(TaskError):
            attention_variance(np.array([[0.5, 0.4], [0.25, 0.75]]))

    def test_negative_entries_rejected(self):
        with pytest.raises(TaskError):
            attention_variance(np.array([[1.5, -0.5], [0.5, 0.5]]))


class TestSynthAttention:
    def test_rows_are_stochastic(self):
        a = synth_attention([3, 1, 4, 1, 5, 9, 2, 6], seed=11)
        assert np.allclose(a.sum(axis=1), 1.0)
        assert np.all(a >= 0)

    def test_constant_stream_gives_uniform(self):
        a = synth_attention([7] * 6, seed=11)
        assert np.allclose(a, 1.0 / 6)

    def test_deterministic_per_tokens_and_seed(self):
        a = synth_attention([1, 2, 3], seed=5)
        b = synth_attention([1, 2, 3], seed=5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, synth_attention([1, 2, 3], seed=6))


class TestComplexity:
    SPEC = WorkloadSpec(seed=42, n_tasks=10)

    def _task(self, tokens) -> Task:
        return Task(
            id=0,
            tokens=tuple(tokens),
            modality="text",
            topic_id=5,
            duplicate_of=None,
            intrinsic_difficulty=0.5,
        )

    def test_single_token_task(self):
        c = complexity(self._task([3]), self.SPEC)
        assert c.c_semantic == 0.0
        assert c.c_length == pytest.approx(1.0 / self.SPEC.max_len)
        assert c.c_uncertainty == 0.0

    def test_deterministic(self):
        t = self._task([1, 5, 2, 5, 9])
        assert complexity(t, self.SPEC) == complexity(t, self.SPEC)

    def test_matches_component_estimators(self):
        spec = WorkloadSpec(seed=42, n_tasks=16)
        task = generate_workload(spec)[0]
        c = complexity(task, spec)
        assert c.c_semantic == pytest.approx(
            semantic_entropy(task.tokens, spec.vocab_size)
        )
        assert c.c_length == pytest.approx(length_norm(len(task.tokens), spec.max_len))
        assert c.c_uncertainty == pytest.approx(
            attention_variance(synth_attention(task.tokens, spec.seed))
        )

    def test_components_in_range_for_many_random_tasks(self):
        spec = WorkloadSpec(seed=8, n_tasks=10_000, duplicate_fraction=0.1)
        for task in generate_workload(spec):
            c = complexity(task, spec)
            for v in (c.c_semantic, c.c_length, c.c_uncertainty):
                assert 0.0 <= v <= 1.0

    def test_out_of_range_vector_rejected(self):
        with pytest.raises(TaskError):
            ComplexityVector(1.2, 0.0, 0.0)


class TestGenerateWorkload:
    def test_no_duplicates(self):
        wl = generate_workload(WorkloadSpec(seed=1, n_tasks=10))
        assert len(wl) == 10
        assert all(t.duplicate_of is None for t in wl)

    def test_exact_duplicate_count(self):
        wl = generate_workload(
            WorkloadSpec(seed=2, n_tasks=100, duplicate_fraction=0.2)
        )
        assert sum(1 for t in wl if t.duplicate_of is not None) == 20

    def test_duplicates_copy_source_tokens(self):
        wl = generate_workload(
            WorkloadSpec(seed=3, n_tasks=50, duplicate_fraction=0.3)
        )
        by_id = {t.id: t for t in wl}
        for t in wl:
            if t.duplicate_of is not None:
                assert t.duplicate_of < t.id
                src = by_id[t.duplicate_of]
                assert t.tokens == src.tokens
                assert t.topic_id == src.topic_id

    def test_same_seed_identical(self):
        spec = WorkloadSpec(seed=4, n_tasks=64, duplicate_fraction=0.25)
        assert generate_workload(spec) == generate_workload(spec)

    def test_different_seeds_differ(self):
        a = generate_workload(WorkloadSpec(seed=5, n_tasks=64))
        b = generate_workload(WorkloadSpec(seed=6, n_tasks=64))
        assert a != b

    def test_bad_mix_rejected(self):
        with pytest.raises(TaskError):
            WorkloadSpec(seed=1, n_tasks=5, complexity_mix=(0.5, 0.2, 0.2))


class TestWorkloadIO:
    def test_round_trip(self, tmp_path):
        spec = WorkloadSpec(seed=9, n_tasks=40, duplicate_fraction=0.2)
        wl = generate_workload(spec)
        path = tmp_path / "workload.tsv"
        save_workload(wl, path)
        assert load_workload(path) == wl

    def test_forward_reference_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("0\ttext\t3\t5\t0.25\t1 2 3\n", encoding="utf-8")
        with pytest.raises(TaskError):
            load_workload(path)
