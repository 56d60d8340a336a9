"""Text-to-vector interface with a local reference embedder and a remote client.

The local embedder hashes lowercased character 3-grams (FNV-1a 64) into a
fixed number of buckets and L2-normalizes the counts. It is deterministic
and dependency-free, which makes every retrieval property testable offline.
Remote embedding APIs sit behind the same interface.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests

from .errors import DimensionMismatch, EmbedFailed, InvalidConfig

DEFAULT_DIMS = 256
EMBED_API_KEY_ENV = "RAGSCRAPE_EMBED_API_KEY"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


@dataclass(frozen=True)
class EmbedderSpec:
    """Which embedder to use and the dimensionality it must produce."""

    kind: str = "local_ngram"  # local_ngram | remote_api
    dims: int = DEFAULT_DIMS
    model_id: str | None = None
    endpoint: str | None = None
    batch_size: int = 16
    max_retries: int = 2
    max_in_flight: int = 4

    def __post_init__(self):
        if self.kind not in ("local_ngram", "remote_api"):
            raise InvalidConfig(f"unknown embedder kind: {self.kind!r}")
        if self.dims <= 0:
            raise InvalidConfig("embedder dims must be positive")
        if self.kind == "remote_api" and (not self.endpoint or not self.model_id):
            raise InvalidConfig("remote_api embedder requires endpoint and model_id")


def _embed_local(text: str, dims: int) -> np.ndarray:
    counts = np.zeros(dims, dtype=np.float64)
    t = text.lower()
    bucket_of: dict[str, int] = {}
    for i in range(len(t) - 2):
        gram = t[i : i + 3]
        bucket = bucket_of.get(gram)
        if bucket is None:
            bucket = fnv1a_64(gram.encode("utf-8")) % dims
            bucket_of[gram] = bucket
        counts[bucket] += 1.0
    norm = float(np.linalg.norm(counts))
    if norm == 0.0:
        return np.zeros(dims, dtype=np.float32)
    return (counts / norm).astype(np.float32)


def _post_embeddings(texts: Sequence[str], spec: EmbedderSpec) -> list[np.ndarray]:
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(EMBED_API_KEY_ENV)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    payload = {"model": spec.model_id, "input": list(texts)}

    last_exc: Exception | None = None
    for attempt in range(spec.max_retries + 1):
        if attempt:
            time.sleep(min(0.05 * (2 ** (attempt - 1)), 2.0))
        try:
            resp = requests.post(spec.endpoint, json=payload, headers=headers, timeout=60)
        except requests.RequestException as exc:
            last_exc = exc
            continue
        if resp.status_code >= 400:
            last_exc = EmbedFailed(f"embedding API returned {resp.status_code}")
            continue
        try:
            data = resp.json()["data"]
            vectors = [np.asarray(item["embedding"], dtype=np.float32) for item in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbedFailed(f"malformed embedding response: {exc}") from exc
        if len(vectors) != len(texts):
            raise EmbedFailed(
                f"embedding response has {len(vectors)} items for {len(texts)} inputs"
            )
        for v in vectors:
            if v.shape != (spec.dims,):
                raise DimensionMismatch(
                    f"remote embedding has {v.shape[0] if v.ndim == 1 else v.shape} values, expected {spec.dims}"
                )
            if not np.all(np.isfinite(v)):
                raise EmbedFailed("remote embedding contains non-finite values")
        return vectors
    raise EmbedFailed(f"embedding API failed after {spec.max_retries + 1} attempts: {last_exc}")


def embed_text(text: str, spec: EmbedderSpec | None = None) -> np.ndarray:
    """Embed one string to a `spec.dims` float32 vector, L2-normalized.

    Text that produces no features (fewer than three characters for the
    local embedder) maps to the all-zero vector.
    """
    spec = spec or EmbedderSpec()
    if spec.kind == "local_ngram":
        return _embed_local(text, spec.dims)
    return embed_batch([text], spec)[0]


def embed_batch(texts: Sequence[str], spec: EmbedderSpec | None = None) -> list[np.ndarray]:
    """Embed many strings; result order matches input order.

    Remote requests are chunked to `spec.batch_size` with retry and
    exponential backoff; any persistent failure fails the whole batch.
    """
    spec = spec or EmbedderSpec()
    if not texts:
        raise InvalidConfig("embed_batch requires a non-empty list")
    if spec.kind == "local_ngram":
        return [_embed_local(t, spec.dims) for t in texts]
    batches = [texts[i : i + spec.batch_size] for i in range(0, len(texts), spec.batch_size)]
    if len(batches) == 1:
        return _post_embeddings(batches[0], spec)
    # concurrent requests, reassembled in input order regardless of completion
    with ThreadPoolExecutor(max_workers=min(spec.max_in_flight, len(batches))) as pool:
        results = list(pool.map(lambda batch: _post_embeddings(batch, spec), batches))
    return [vec for group in results for vec in group]
