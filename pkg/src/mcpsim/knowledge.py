"""Knowledge base, 128-way cluster index, result cache, and retrieval.

The index is plain Lloyd k-means (25 iterations, seeded farthest-point
init, ties broken by lowest item id) with exact distance scans inside the
probed clusters.  A fingerprint-keyed LRU cache in front of the index
absorbs duplicate queries; a cache hit costs a fingerprint lookup instead
of a scan and returns the original result unchanged.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .modules import ModuleDescriptor, ModuleOutput, default_descriptors

N_TOPICS = 128
KMEANS_ITERATIONS = 25
CACHE_HIT_LATENCY_FRACTION = 0.02
INDEX_VERSION = "mcpsim-hhi-v1"


class KnowledgeError(ValueError):
    """Raised on malformed knowledge bases, indexes, or queries."""


@dataclass(frozen=True)
class KnowledgeBase:
    """Items as parallel arrays, sorted by ascending item id."""

    ids: np.ndarray  # (n,) int64
    embeddings: np.ndarray  # (n, d) float64
    topic_ids: np.ndarray  # (n,) int64
    n_topics: int = N_TOPICS

    def __post_init__(self) -> None:
        if self.embeddings.ndim != 2 or len(self.ids) != len(self.embeddings):
            raise KnowledgeError("ids and embeddings must align")
        if len(self.topic_ids) != len(self.ids):
            raise KnowledgeError("topic_ids and ids must align")
        if np.any(np.diff(self.ids) <= 0):
            raise KnowledgeError("items must be sorted by strictly increasing id")
        if np.any((self.topic_ids < 0) | (self.topic_ids >= self.n_topics)):
            raise KnowledgeError(f"topic ids must be in [0, {self.n_topics})")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def topic_means(self) -> np.ndarray:
        """Mean embedding per topic (zero vector for unpopulated topics)."""
        means = np.zeros((self.n_topics, self.dim))
        counts = np.zeros(self.n_topics)
        np.add.at(means, self.topic_ids, self.embeddings)
        np.add.at(counts, self.topic_ids, 1.0)
        populated = counts > 0
        means[populated] /= counts[populated, None]
        return means


def generate_knowledge_base(
    n_items: int, dim: int, seed: int, n_topics: int = N_TOPICS, blob_std: float = 0.25
) -> KnowledgeBase:
    """Synthetic topical corpus: one Gaussian blob per topic.

    Topics are assigned round-robin so every topic is populated whenever
    n_items >= n_topics.
    """
    if n_items < 1:
        raise KnowledgeError("need at least one item")
    rng = np.random.Generator(np.random.PCG64(seed))
    centers = rng.uniform(-1.0, 1.0, size=(n_topics, dim))
    topic_ids = np.arange(n_items, dtype=np.int64) % n_topics
    embeddings = centers[topic_ids] + blob_std * rng.standard_normal((n_items, dim))
    return KnowledgeBase(
        ids=np.arange(n_items, dtype=np.int64),
        embeddings=embeddings,
        topic_ids=topic_ids,
        n_topics=n_topics,
    )


@dataclass(frozen=True)
class HHIIndex:
    """Cluster centroids plus per-item assignments over one knowledge base."""

    kb: KnowledgeBase
    centroids: np.ndarray  # (k, d)
    assignments: np.ndarray  # (n,) int64, position -> cluster
    members: tuple[np.ndarray, ...]  # cluster -> item positions

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)


def _sq_dists(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - ref[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _farthest_point_init(x: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = [int(rng.integers(0, len(x)))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(d2))  # argmax takes the first max: lowest item id
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def build_hhi(kb: KnowledgeBase, seed: int, n_clusters: int = N_TOPICS) -> HHIIndex:
    """Cluster the knowledge base with seeded, capped Lloyd k-means."""
    if len(kb) < n_clusters:
        raise KnowledgeError(
            f"need at least {n_clusters} items, got {len(kb)}"
        )
    x = kb.embeddings
    centroids = _farthest_point_init(x, n_clusters, seed)
    assignments = np.zeros(len(x), dtype=np.int64)
    for _ in range(KMEANS_ITERATIONS):
        assignments = np.argmin(_sq_dists(x, centroids), axis=1)
        for c in range(n_clusters):
            mask = assignments == c
            if mask.any():  # empty clusters keep their previous centroid
                centroids[c] = x[mask].mean(axis=0)
    assignments = np.argmin(_sq_dists(x, centroids), axis=1)
    members = tuple(
        np.flatnonzero(assignments == c) for c in range(n_clusters)
    )
    return HHIIndex(
        kb=kb, centroids=centroids, assignments=assignments, members=members
    )


def save_index(index: HHIIndex, path: str | Path) -> None:
    """Versioned binary dump that round-trips bit-exactly."""
    np.savez(
        path,
        version=np.frombuffer(INDEX_VERSION.encode("ascii"), dtype=np.uint8),
        centroids=index.centroids,
        assignments=index.assignments,
    )


def load_index(path: str | Path, kb: KnowledgeBase) -> HHIIndex:
    with np.load(path) as data:
        version = bytes(data["version"]).decode("ascii")
        if version != INDEX_VERSION:
            raise KnowledgeError(f"unsupported index version {version!r}")
        centroids = data["centroids"].copy()
        assignments = data["assignments"].copy()
    if len(assignments) != len(kb):
        raise KnowledgeError("index assignments do not match the knowledge base")
    members = tuple(
        np.flatnonzero(assignments == c) for c in range(len(centroids))
    )
    return HHIIndex(
        kb=kb, centroids=centroids, assignments=assignments, members=members
    )


class CachePool:
    """Fingerprint-keyed LRU memo of retrieval results."""

    def __init__(self, capacity: int = 4096):
        if capacity < 1:
            raise KnowledgeError("cache capacity must be >= 1")
        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self._store: "OrderedDict[str, tuple]" = OrderedDict()

    def __len__(self) -> int:
        return len(self._store)

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> float:
        return self.hits / self.lookups if self.lookups else 0.0

    def get(self, fingerprint: str):
        entry = self._store.get(fingerprint)
        if entry is None:
            self.misses += 1
            return None
        self.hits += 1
        self._store.move_to_end(fingerprint)
        return entry

    def put(self, fingerprint: str, result: tuple) -> None:
        if fingerprint in self._store:
            self._store.move_to_end(fingerprint)
            return
        if len(self._store) >= self.capacity:
            self._store.popitem(last=False)
        self._store[fingerprint] = result


def query_fingerprint(query: np.ndarray, k: int) -> str:
    """Stable identity of a (query vector, k) pair."""
    h = hashlib.blake2b(digest_size=16)
    h.update(np.ascontiguousarray(query, dtype=np.float64).tobytes())
    h.update(k.to_bytes(8, "little"))
    return h.hexdigest()


def brute_force_topk(kb: KnowledgeBase, query: np.ndarray, k: int) -> tuple[int, ...]:
    """Exact nearest-neighbor oracle, ties broken by lowest item id."""
    d2 = ((kb.embeddings - query) ** 2).sum(axis=1)
    order = np.lexsort((kb.ids, d2))
    return tuple(int(kb.ids[i]) for i in order[:k])


def retrieve(
    query: np.ndarray,
    k: int,
    index: HHIIndex,
    cache: CachePool | None,
    n_probe: int,
    desc: ModuleDescriptor | None = None,
) -> tuple[ModuleOutput, tuple[int, ...]]:
    """Top-k search over the n_probe clusters nearest to the query.

    With a cache, a repeated (query, k) pair is served from the memo at
    fingerprint-lookup cost and returns exactly the original item ids.
    """
    desc = desc or default_descriptors()["retrieval"]
    kb = index.kb
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (kb.dim,):
        raise KnowledgeError(f"query shape {query.shape} != ({kb.dim},)")
    if k < 1:
        raise KnowledgeError("k must be >= 1")
    if not 1 <= n_probe <= index.n_clusters:
        raise KnowledgeError(f"n_probe must be in [1, {index.n_clusters}]")

    full_scan_units = index.n_clusters + len(kb)
    fp = query_fingerprint(query, k)
    if cache is not None:
        cached = cache.get(fp)
        if cached is not None:
            ids, quality, artifacts = cached
            return (
                ModuleOutput(
                    quality=quality,
                    latency_ms=desc.base_latency_ms * CACHE_HIT_LATENCY_FRACTION,
                    flops=desc.flops_per_unit,
                    invalid_flops=0.0,
                    artifacts=artifacts,
                ),
                ids,
            )

    centroid_d2 = ((index.centroids - query) ** 2).sum(axis=1)
    probe = np.lexsort((np.arange(index.n_clusters), centroid_d2))[:n_probe]
    candidates = np.concatenate([index.members[c] for c in probe])
    if len(candidates) == 0:
        ids: tuple[int, ...] = ()
        scanned = index.n_clusters
    else:
        d2 = ((kb.embeddings[candidates] - query) ** 2).sum(axis=1)
        order = np.lexsort((kb.ids[candidates], d2))
        ids = tuple(int(kb.ids[candidates[i]]) for i in order[:k])
        scanned = index.n_clusters + len(candidates)

    quality = len(ids) / k
    artifacts = {"item_ids": ids, "n_probe": n_probe, "scanned": scanned}
    if cache is not None:
        cache.put(fp, (ids, quality, artifacts))
    return (
        ModuleOutput(
            quality=quality,
            latency_ms=desc.base_latency_ms * scanned / full_scan_units,
            flops=desc.flops_per_unit * scanned,
            invalid_flops=0.0,
            artifacts=artifacts,
        ),
        ids,
    )


def recall_at_k(results, oracle) -> float:
    """Fraction of the oracle's top-k that the candidate result recovered."""
    oracle = tuple(oracle)
    if not oracle:
        raise KnowledgeError("oracle result set must be non-empty")
    return len(set(results) & set(oracle)) / len(oracle)


def save_knowledge_base(kb: KnowledgeBase, path: str | Path) -> None:
    """Line-delimited text: item_id, topic_id, comma-separated floats."""
    lines = []
    for i in range(len(kb)):
        vec = ",".join(repr(float(v)) for v in kb.embeddings[i])
        lines.append(f"{int(kb.ids[i])}\t{int(kb.topic_ids[i])}\t{vec}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_knowledge_base(path: str | Path, n_topics: int = N_TOPICS) -> KnowledgeBase:
    ids, topics, rows = [], [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise KnowledgeError(f"malformed knowledge-base line: {line!r}")
        ids.append(int(fields[0]))
        topics.append(int(fields[1]))
        rows.append([float(v) for v in fields[2].split(",")])
    return KnowledgeBase(
        ids=np.asarray(ids, dtype=np.int64),
        embeddings=np.asarray(rows, dtype=np.float64),
        topic_ids=np.asarray(topics, dtype=np.int64),
        n_topics=n_topics,
    )


def query_for_task(
    topic_means: np.ndarray, topic_id: int, tokens, jitter: float = 0.1
) -> np.ndarray:
    """Deterministic query vector near the task's topic centroid.

    The jitter comes from a token-stream fingerprint, so duplicate tasks
    (identical tokens) issue byte-identical queries.
    """
    raw = np.asarray(tokens, dtype=np.int64).tobytes()
    digest = hashlib.blake2b(raw, digest_size=8).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    dim = topic_means.shape[1]
    return topic_means[topic_id] + jitter * rng.standard_normal(dim)
