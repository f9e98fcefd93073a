"""Embedding-based evaluation: Recall, Match Rate, Code Diversity, Text Utilization.

Matching is one-to-many: each generated code matches at most one human code
(its best-scoring one, if the normalized similarity clears the threshold),
while one human code may be matched by several generated codes.  Scores are
cosines mapped to [0, 1]; the boundary value counts as a match.

Token counts for Text Utilization use whitespace tokens, so values are
comparable only within this artifact.
"""

from __future__ import annotations

import hashlib
import json
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from .errors import ContractError, TransportError
from .model import CodingStructure, chunk_multiset


class EmbeddingProvider(Protocol):
    tag: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedTokenEmbedder:
    """Deterministic offline provider: hashed bag-of-tokens, unit-normalized.

    Lowercases, splits on whitespace, maps each distinct token to a hashed
    dimension, sums token counts, and L2-normalizes.  Texts with disjoint
    token sets are orthogonal (absent hash collisions).
    """

    def __init__(self, dimension: int = 256):
        self.dimension = dimension
        self.tag = f"hash-{dimension}"

    def token_dimension(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        tokens = text.lower().split()
        if not tokens:
            raise ContractError("cannot embed a zero-token text")
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in tokens:
            vec[self.token_dimension(token)] += 1.0
        return vec / np.linalg.norm(vec)


class HttpEmbedder:
    """Any HTTP endpoint speaking the documented embeddings schema.

    Request:  POST <endpoint>/embeddings
              {"model": "<name>", "input": ["text", ...]}
    Response: {"data": [{"embedding": [float, ...]}, ...]}  (request order)

    Replies are L2-normalized on receipt so the unit-norm invariant holds
    regardless of what the backend returns.
    """

    def __init__(self, endpoint: str, model: str = "", dimension: int = 384,
                 timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.dimension = dimension
        self.timeout = timeout
        self.tag = f"http:{model or endpoint}"

    def embed(self, text: str) -> np.ndarray:
        try:
            response = httpx.post(
                f"{self.endpoint}/embeddings",
                json={"model": self.model, "input": [text]},
                timeout=self.timeout,
            )
        except httpx.HTTPError as e:
            raise TransportError(f"embeddings endpoint unreachable: {e}") from e
        if response.status_code != 200:
            raise TransportError(f"embeddings endpoint: HTTP {response.status_code}")
        vec = np.asarray(response.json()["data"][0]["embedding"], dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise TransportError("embeddings endpoint returned a zero vector")
        return vec / norm


class CachingProvider:
    """Dict-backed cache keyed by (provider tag, text); optionally persisted."""

    def __init__(self, inner: EmbeddingProvider, path: Path | None = None):
        self.inner = inner
        self.tag = inner.tag
        self.dimension = inner.dimension
        self.path = Path(path) if path else None
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            stored = json.loads(self.path.read_text("utf-8"))
            if stored.get("tag") == self.tag:
                self._cache = {
                    text: np.asarray(vec, dtype=np.float64)
                    for text, vec in stored["vectors"].items()
                }

    def embed(self, text: str) -> np.ndarray:
        with self._lock:
            hit = self._cache.get(text)
        if hit is not None:
            return hit
        vec = self.inner.embed(text)
        with self._lock:
            self._cache[text] = vec
        return vec

    def save(self) -> None:
        if not self.path:
            return
        with self._lock:
            body = {
                "tag": self.tag,
                "vectors": {text: vec.tolist() for text, vec in self._cache.items()},
            }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(body), "utf-8")


def make_provider(spec: str) -> EmbeddingProvider:
    """Provider from a CLI spec: "hash", "hash:<dim>", or an http(s) URL."""
    if spec == "hash":
        return HashedTokenEmbedder()
    if spec.startswith("hash:"):
        return HashedTokenEmbedder(dimension=int(spec.split(":", 1)[1]))
    if spec.startswith("http://") or spec.startswith("https://"):
        base, _, model = spec.partition("#")
        return HttpEmbedder(endpoint=base, model=model)
    raise ContractError(f"unknown provider spec: {spec!r}")


@dataclass(frozen=True)
class MatchConfig:
    provider: EmbeddingProvider
    tau: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ContractError("tau must be in [0, 1]")


def normalize_similarity(s: float) -> float:
    """Map a cosine in [-1, 1] to [0, 1] via (s + 1) / 2."""
    if abs(s) > 1.0 + 1e-6:
        warnings.warn(f"cosine {s} exceeds [-1, 1] beyond numerical tolerance; clamping")
    s = min(1.0, max(-1.0, s))
    return (s + 1.0) / 2.0


def similarity(provider: EmbeddingProvider, a: str, b: str) -> float:
    """Normalized similarity of two texts in [0, 1]."""
    return normalize_similarity(float(np.dot(provider.embed(a), provider.embed(b))))


@dataclass(frozen=True)
class MatchReport:
    generated: tuple[str, ...]          # G
    human: tuple[str, ...]              # H
    assignment: tuple[int | None, ...]  # M: index into human per g_i, or None
    best_scores: tuple[float, ...]      # best normalized score per g_i
    tau: float
    recall: float
    match_rate: float

    def matched_pairs(self) -> list[tuple[str, str]]:
        return [
            (g, self.human[j])
            for g, j in zip(self.generated, self.assignment)
            if j is not None
        ]

    def to_json(self) -> dict:
        return {
            "generated": list(self.generated),
            "human": list(self.human),
            "assignment": [j for j in self.assignment],
            "best_scores": list(self.best_scores),
            "tau": self.tau,
            "recall": self.recall,
            "match_rate": self.match_rate,
        }


def match(generated: Sequence[str], human: Sequence[str], config: MatchConfig) -> MatchReport:
    """Best-match assignment of generated codes onto human codes.

    For each generated code the single best-scoring human code is taken; the
    pair is matched iff its normalized score is >= tau (boundary included).
    """
    if not generated or not human:
        raise ContractError("match needs non-empty generated and human code sets")
    g_vecs = [config.provider.embed(g) for g in generated]
    h_vecs = [config.provider.embed(h) for h in human]
    assignment: list[int | None] = []
    best_scores: list[float] = []
    matched_human: set[int] = set()
    for gv in g_vecs:
        scores = [normalize_similarity(float(np.dot(gv, hv))) for hv in h_vecs]
        j_star = int(np.argmax(scores))
        best = scores[j_star]
        best_scores.append(best)
        if best >= config.tau:
            assignment.append(j_star)
            matched_human.add(j_star)
        else:
            assignment.append(None)
    recall = len(matched_human) / len(human)
    match_rate = sum(1 for j in assignment if j is not None) / len(generated)
    return MatchReport(
        generated=tuple(generated),
        human=tuple(human),
        assignment=tuple(assignment),
        best_scores=tuple(best_scores),
        tau=config.tau,
        recall=recall,
        match_rate=match_rate,
    )


def code_diversity(generated: Sequence[str], config: MatchConfig, seed: int) -> float:
    """Fraction of codes surviving near-duplicate removal at tau.

    The list is shuffled by seed, then scanned: a code is removed when it
    scores >= tau against an earlier surviving code.
    """
    if not generated:
        raise ContractError("code_diversity needs a non-empty code set")
    import random

    order = list(generated)
    random.Random(seed).shuffle(order)
    vecs = {g: config.provider.embed(g) for g in set(order)}
    survivors: list[str] = []
    for g in order:
        gv = vecs[g]
        if all(
            normalize_similarity(float(np.dot(gv, vecs[s]))) < config.tau for s in survivors
        ):
            survivors.append(g)
    return len(survivors) / len(generated)


#: Seeds used for the diversity robustness protocol.
ROBUSTNESS_SEEDS = (0, 42, 777, 2026, 99999)


@dataclass(frozen=True)
class DiversityReport:
    generated: tuple[str, ...]
    seeds: tuple[int, ...]
    values: tuple[float, ...]
    mean: float
    std: float

    def to_json(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "values": list(self.values),
            "mean": self.mean,
            "std": self.std,
        }


def diversity_report(
    generated: Sequence[str],
    config: MatchConfig,
    seeds: Sequence[int] = ROBUSTNESS_SEEDS,
) -> DiversityReport:
    values = tuple(code_diversity(generated, config, seed) for seed in seeds)
    return DiversityReport(
        generated=tuple(generated),
        seeds=tuple(seeds),
        values=values,
        mean=float(np.mean(values)),
        std=float(np.std(values)),
    )


@dataclass(frozen=True)
class UtilizationReport:
    used_tokens: int   # tokens across deduplicated chunk texts
    total_tokens: int  # tokens in the full corpus
    rate: float

    def to_json(self) -> dict:
        return {
            "used_tokens": self.used_tokens,
            "total_tokens": self.total_tokens,
            "rate": self.rate,
        }


def text_utilization(structure: CodingStructure, corpus: str) -> UtilizationReport:
    """Token share of the corpus covered by deduplicated coded chunks."""
    total = len(corpus.split())
    if total == 0:
        raise ContractError("corpus has no tokens")
    distinct_texts = set(chunk_multiset(structure))
    used = sum(len(text.split()) for text in distinct_texts)
    return UtilizationReport(
        used_tokens=used, total_tokens=total, rate=min(1.0, used / total)
    )


def aggregate(rows: list[dict[str, float]]) -> dict[str, float]:
    """Arithmetic mean of each metric key across per-interview rows."""
    if not rows:
        raise ContractError("aggregate needs at least one report row")
    keys = sorted({k for row in rows for k in row})
    out = {}
    for key in keys:
        values = [row[key] for row in rows if key in row]
        out[key] = float(sum(values) / len(values))
    return out
