"""Synthetic tasks, complexity estimation, and seeded workload generation.

A task is a stream of integer token ids plus hidden ground truth
(``intrinsic_difficulty``) that the quality model may consult but the
controller never sees.  The three complexity estimators (token entropy,
normalized length, attention variance) are pure functions, so the same
task always maps to the same complexity vector.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODALITIES = ("text", "vision", "multimodal")

# Logit spread for the synthesized attention matrix.  Chosen so that
# token-diverse streams land well inside (0, 1) after normalization while
# constant streams collapse to exactly 0.
ATTN_LOGIT_SCALE = 8.0

_SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)


class TaskError(ValueError):
    """Raised when a task or workload violates its domain contract."""


@dataclass(frozen=True)
class Task:
    """One synthetic unit of work routed through the engine."""

    id: int
    tokens: tuple[int, ...]
    modality: str
    topic_id: int
    duplicate_of: int | None
    intrinsic_difficulty: float

    def __post_init__(self) -> None:
        if len(self.tokens) == 0:
            raise TaskError("task tokens must be non-empty")
        if self.modality not in MODALITIES:
            raise TaskError(f"unknown modality {self.modality!r}")
        if not 0 <= self.topic_id < 128:
            raise TaskError("topic_id must be in [0, 128)")
        if not 0.0 <= self.intrinsic_difficulty <= 1.0:
            raise TaskError("intrinsic_difficulty must be in [0, 1]")


@dataclass(frozen=True)
class ComplexityVector:
    """Three-dimensional task complexity: semantics, length, uncertainty."""

    c_semantic: float
    c_length: float
    c_uncertainty: float

    def __post_init__(self) -> None:
        for name, value in self.as_dict().items():
            if not math.isfinite(value) or not 0.0 <= value <= 1.0:
                raise TaskError(f"{name} out of range: {value}")

    def as_dict(self) -> dict[str, float]:
        return {
            "c_semantic": self.c_semantic,
            "c_length": self.c_length,
            "c_uncertainty": self.c_uncertainty,
        }

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.c_semantic, self.c_length, self.c_uncertainty], dtype=np.float64
        )

    def mean(self) -> float:
        return (self.c_semantic + self.c_length + self.c_uncertainty) / 3.0


@dataclass(frozen=True)
class WorkloadSpec:
    """Seeded description of a synthetic workload."""

    seed: int
    n_tasks: int
    duplicate_fraction: float = 0.0
    complexity_mix: tuple[float, float, float] = (0.4, 0.4, 0.2)
    vocab_size: int = 256
    max_len: int = 64

    def __post_init__(self) -> None:
        if self.n_tasks <= 0:
            raise TaskError("n_tasks must be positive")
        if not 0.0 <= self.duplicate_fraction < 1.0:
            raise TaskError("duplicate_fraction must be in [0, 1)")
        if abs(sum(self.complexity_mix) - 1.0) > 1e-9:
            raise TaskError("complexity_mix weights must sum to 1")
        if any(w < 0 for w in self.complexity_mix):
            raise TaskError("complexity_mix weights must be non-negative")
        if self.vocab_size < 2:
            raise TaskError("vocab_size must be >= 2")
        if self.max_len < 1:
            raise TaskError("max_len must be >= 1")


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer over uint64 arrays."""
    z = (x + _SPLITMIX_GAMMA).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX_1
    z = (z ^ (z >> np.uint64(27))) * _MIX_2
    return z ^ (z >> np.uint64(31))


def _unit_hash(x: np.ndarray) -> np.ndarray:
    """Map uint64 hashes to uniform floats in [0, 1)."""
    return (_splitmix64(x) >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def empirical_entropy(tokens) -> float:
    """Shannon entropy (nats) of the empirical token distribution."""
    if len(tokens) == 0:
        raise TaskError("cannot compute entropy of an empty token stream")
    counts = np.asarray(list(Counter(tokens).values()), dtype=np.float64)
    probs = counts / counts.sum()
    return float(-(probs * np.log(probs)).sum())


def semantic_entropy(tokens, vocab_size: int) -> float:
    """Empirical token entropy normalized to [0, 1] by log(vocab_size)."""
    if vocab_size < 2:
        raise TaskError("vocab_size must be >= 2")
    h = empirical_entropy(tokens)
    return min(1.0, max(0.0, h / math.log(vocab_size)))


def length_norm(n_tokens: int, max_len: int) -> float:
    """Input length normalized by the workload maximum, clamped at 1."""
    if n_tokens < 1 or max_len < 1:
        raise TaskError("n_tokens and max_len must be >= 1")
    return min(n_tokens / max_len, 1.0)


def attention_variance(attention: np.ndarray) -> float:
    """Population variance of a row-stochastic matrix, scaled to [0, 1].

    The normalizer is the maximum variance achievable by a row-stochastic
    n x n matrix, (n - 1) / n**2, attained by one-hot rows.  A 1 x 1 matrix
    admits no spread and scores 0.
    """
    a = np.asarray(attention, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise TaskError("attention must be a square matrix with n >= 1")
    if np.any(a < -1e-9):
        raise TaskError("attention entries must be non-negative")
    row_sums = a.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise TaskError("attention rows must sum to 1 within 1e-6")
    n = a.shape[0]
    if n == 1:
        return 0.0
    raw = float(a.var())
    max_var = (n - 1) / n**2
    return min(1.0, max(0.0, raw / max_var))


def synth_attention(tokens, seed: int) -> np.ndarray:
    """Deterministic stand-in for a self-attention map over a token stream.

    Pairwise logits come from hashing the (seed, token_i, token_j) triple,
    so the matrix depends only on token values: identical streams (e.g.
    duplicates) synthesize identical matrices, and constant streams give a
    uniform matrix.
    """
    toks = np.asarray(tokens, dtype=np.uint64)
    if toks.size == 0:
        raise TaskError("cannot synthesize attention for an empty stream")
    base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    h = _splitmix64(toks + base)
    logits = ATTN_LOGIT_SCALE * _unit_hash(
        h[:, None] ^ (h[None, :] * _SPLITMIX_GAMMA)
    )
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    return exp / exp.sum(axis=1, keepdims=True)


def complexity(task: Task, spec: WorkloadSpec) -> ComplexityVector:
    """Compose the three complexity estimators for one task."""
    return ComplexityVector(
        c_semantic=semantic_entropy(task.tokens, spec.vocab_size),
        c_length=length_norm(len(task.tokens), spec.max_len),
        c_uncertainty=attention_variance(synth_attention(task.tokens, spec.seed)),
    )


# Per-band sampling ranges: difficulty, token-stream length fraction of
# max_len, and alphabet size (distinct tokens available to the stream).
# Length and alphabet interpolate with the position of the drawn
# difficulty inside its band (plus jitter), so the observable complexity
# tracks the hidden difficulty continuously, not just per band.
_BANDS = (
    {"difficulty": (0.0, 0.33), "length_frac": (0.06, 0.35), "alphabet": (2, 8)},
    {"difficulty": (0.33, 0.66), "length_frac": (0.30, 0.70), "alphabet": (8, 40)},
    {"difficulty": (0.66, 1.0), "length_frac": (0.65, 1.0), "alphabet": (40, 128)},
)
_LENGTH_JITTER = 0.05
_ALPHABET_JITTER = 0.1


def generate_workload(spec: WorkloadSpec) -> list[Task]:
    """Generate exactly ``spec.n_tasks`` seeded tasks.

    round(duplicate_fraction * n_tasks) tasks are byte-identical copies of
    an earlier original (same tokens, topic, and difficulty) with
    ``duplicate_of`` pointing at the source.  Task 0 is always an original.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n_dup = int(round(spec.duplicate_fraction * spec.n_tasks))
    dup_positions: set[int] = set()
    if n_dup > 0:
        dup_positions = set(
            rng.choice(np.arange(1, spec.n_tasks), size=n_dup, replace=False).tolist()
        )

    tasks: list[Task] = []
    originals: list[int] = []
    for i in range(spec.n_tasks):
        if i in dup_positions:
            src = tasks[originals[int(rng.integers(0, len(originals)))]]
            tasks.append(
                Task(
                    id=i,
                    tokens=src.tokens,
                    modality=src.modality,
                    topic_id=src.topic_id,
                    duplicate_of=src.id,
                    intrinsic_difficulty=src.intrinsic_difficulty,
                )
            )
            continue
        band_idx = int(rng.choice(3, p=np.asarray(spec.complexity_mix, dtype=np.float64)))
        band = _BANDS[band_idx]
        d_lo, d_hi = band["difficulty"]
        difficulty = float(rng.uniform(d_lo, d_hi))
        u = (difficulty - d_lo) / (d_hi - d_lo)
        lo, hi = band["length_frac"]
        frac = (lo + (hi - lo) * u) * (1.0 + rng.uniform(-_LENGTH_JITTER, _LENGTH_JITTER))
        n_tokens = int(np.clip(round(spec.max_len * frac), 1, spec.max_len))
        alpha_lo, alpha_hi = band["alphabet"]
        size = (alpha_lo + (alpha_hi - alpha_lo) * u) * (
            1.0 + rng.uniform(-_ALPHABET_JITTER, _ALPHABET_JITTER)
        )
        alphabet_size = int(np.clip(round(size), 2, spec.vocab_size))
        alphabet = rng.choice(spec.vocab_size, size=alphabet_size, replace=False)
        tokens = tuple(int(t) for t in rng.choice(alphabet, size=n_tokens))
        tasks.append(
            Task(
                id=i,
                tokens=tokens,
                modality=MODALITIES[int(rng.integers(0, 3))],
                topic_id=int(rng.integers(0, 128)),
                duplicate_of=None,
                intrinsic_difficulty=difficulty,
            )
        )
        originals.append(i)
    return tasks


def save_workload(tasks: list[Task], path: str | Path) -> None:
    """Write tasks as line-delimited text, one task per line."""
    lines = []
    for t in tasks:
        dup = -1 if t.duplicate_of is None else t.duplicate_of
        toks = " ".join(str(tok) for tok in t.tokens)
        lines.append(
            f"{t.id}\t{t.modality}\t{t.topic_id}\t{dup}\t{t.intrinsic_difficulty!r}\t{toks}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_workload(path: str | Path) -> list[Task]:
    """Read tasks written by :func:`save_workload`, validating references."""
    tasks: list[Task] = []
    seen_ids: set[int] = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise TaskError(f"malformed workload line: {line!r}")
        task_id = int(fields[0])
        dup = int(fields[3])
        if dup >= 0 and dup not in seen_ids:
            raise TaskError(
                f"task {task_id} duplicates {dup}, which does not precede it"
            )
        tasks.append(
            Task(
                id=task_id,
                tokens=tuple(int(tok) for tok in fields[5].split()),
                modality=fields[1],
                topic_id=int(fields[2]),
                duplicate_of=None if dup < 0 else dup,
                intrinsic_difficulty=float(fields[4]),
            )
        )
        seen_ids.add(task_id)
    return tasks
