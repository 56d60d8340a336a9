"""Exact top-k cosine similarity search over document records, with persistence.

Search is a full linear scan: exactness is the contract, and at this scale
a scan beats an approximate index on correctness per line of code. The
on-disk format is a little-endian binary file with a trailing CRC32C.
"""

from __future__ import annotations

import math
import os
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .chunker import Chunk, chunk_from_json, chunk_to_json
from .errors import CorruptIndex, DimensionMismatch

MAGIC = b"RGSX"
VERSION = 1

_CRC32C_POLY = 0x82F63B78
_CRC32C_TABLE = []
for _n in range(256):
    _c = _n
    for _ in range(8):
        _c = (_c >> 1) ^ _CRC32C_POLY if _c & 1 else _c >> 1
    _CRC32C_TABLE.append(_c)


def crc32c(data: bytes, crc: int = 0) -> int:
    """CRC32C (Castagnoli) of `data`; pass a prior value to continue a stream."""
    crc ^= 0xFFFFFFFF
    for b in data:
        crc = (crc >> 8) ^ _CRC32C_TABLE[(crc ^ b) & 0xFF]
    return crc ^ 0xFFFFFFFF


@dataclass(frozen=True)
class DocumentRecord:
    """A chunk plus its embedding, as stored in the index."""

    id: int
    chunk: Chunk
    embedding: np.ndarray  # float32, shape (dims,)


@dataclass(frozen=True)
class SearchHit:
    id: int
    score: float
    chunk: Chunk


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0.0 if either vector is all-zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cosine over shapes {a.shape} and {b.shape}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))


class VectorStore:
    """Append-only record store answering exact top-k cosine queries.

    The first insertion fixes the dimensionality. Embeddings are held as
    float32 (the on-disk precision) so that search results are bit-identical
    across a save/load round trip. Concurrent searches are safe; insertions
    and saves serialize on an internal lock.
    """

    def __init__(self, dims: int | None = None):
        self.dims = dims
        self._records: list[DocumentRecord] = []
        self._next_id = 0
        self._lock = threading.Lock()
        self._matrix: np.ndarray | None = None  # float64 cache, rows in id order
        self._norms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list[DocumentRecord]:
        with self._lock:
            return list(self._records)

    def add(self, chunk: Chunk, embedding: np.ndarray) -> int:
        """Insert a record; returns its id (monotonically increasing from 0)."""
        vec = np.asarray(embedding, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding contains NaN or infinite values")
        with self._lock:
            if self.dims is None:
                self.dims = int(vec.shape[0])
            elif vec.shape[0] != self.dims:
                raise DimensionMismatch(
                    f"embedding has {vec.shape[0]} dims, index has {self.dims}"
                )
            record = DocumentRecord(id=self._next_id, chunk=chunk, embedding=vec)
            self._records.append(record)
            self._next_id += 1
            self._matrix = None
            self._norms = None
            return record.id

    def _scores(self, query: np.ndarray) -> tuple[np.ndarray, list[DocumentRecord]]:
        # Snapshot under the lock so a concurrent add cannot desynchronize
        # the record list from the score matrix mid-search.
        with self._lock:
            records = list(self._records)
            if self._matrix is None:
                self._matrix = np.stack(
                    [r.embedding for r in records]
                ).astype(np.float64)
                self._norms = np.sqrt(np.einsum("ij,ij->i", self._matrix, self._matrix))
            matrix, norms = self._matrix, self._norms
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        qnorm = math.sqrt(float(np.dot(q, q)))
        if qnorm == 0.0:
            return np.zeros(len(records)), records
        denom = norms * qnorm
        raw = matrix @ q
        scores = np.divide(raw, denom, out=np.zeros_like(raw), where=denom != 0.0)
        return np.clip(scores, -1.0, 1.0), records

    def search(
        self, query: np.ndarray, k: int, *, source_url: str | None = None
    ) -> list[SearchHit]:
        """Exact top-k hits, highest cosine first; equal scores order by id.

        `source_url` restricts the scan to records from one source page.
        """
        if k <= 0:
            raise ValueError("k must be positive")
        if not self._records:
            return []
        q = np.asarray(query).reshape(-1)
        if q.shape[0] != self.dims:
            raise DimensionMismatch(f"query has {q.shape[0]} dims, index has {self.dims}")
        scores, records = self._scores(q)
        if source_url is not None:
            keep = np.fromiter(
                (r.chunk.source_url == source_url for r in records),
                dtype=bool,
                count=len(records),
            )
            idx = np.flatnonzero(keep)
        else:
            idx = np.arange(len(records))
        if idx.size == 0:
            return []
        ids = np.array([records[i].id for i in idx], dtype=np.int64)
        order = np.lexsort((ids, -scores[idx]))[:k]
        return [
            SearchHit(id=int(ids[j]), score=float(scores[idx[j]]), chunk=records[idx[j]].chunk)
            for j in order
        ]

    def save(self, path: str | os.PathLike) -> None:
        """Write the index to `path` (header, records, trailing CRC32C)."""
        with self._lock:
            records = list(self._records)
            dims = self.dims if self.dims is not None else 0
        parts = [MAGIC, struct.pack("<HIQ", VERSION, dims, len(records))]
        for r in records:
            chunk_json = chunk_to_json(r.chunk).encode("utf-8")
            parts.append(struct.pack("<Q", r.id))
            parts.append(r.embedding.astype("<f4").tobytes())
            parts.append(struct.pack("<I", len(chunk_json)))
            parts.append(chunk_json)
        body = b"".join(parts)
        blob = body + struct.pack("<I", crc32c(body))
        tmp = f"{os.fspath(path)}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "VectorStore":
        """Read an index written by `save`; raises CorruptIndex on any damage."""
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < len(MAGIC) + 14 + 4:
            raise CorruptIndex("file too short")
        if blob[:4] != MAGIC:
            raise CorruptIndex("bad magic")
        body, stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
        if crc32c(body) != stored:
            raise CorruptIndex("checksum mismatch")
        version, dims, count = struct.unpack_from("<HIQ", body, 4)
        if version != VERSION:
            raise CorruptIndex(f"unsupported version {version}")
        store = cls(dims=dims if dims else None)
        pos = 4 + 14
        try:
            for _ in range(count):
                (rec_id,) = struct.unpack_from("<Q", body, pos)
                pos += 8
                vec = np.frombuffer(body, dtype="<f4", count=dims, offset=pos).copy()
                pos += 4 * dims
                (length,) = struct.unpack_from("<I", body, pos)
                pos += 4
                raw = body[pos : pos + length]
                if len(raw) != length:
                    raise CorruptIndex("truncated record")
                pos += length
                chunk = chunk_from_json(raw.decode("utf-8"))
                store._records.append(DocumentRecord(id=rec_id, chunk=chunk, embedding=vec))
        except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
            raise CorruptIndex(f"malformed record: {exc}") from exc
        if pos != len(body):
            raise CorruptIndex("trailing bytes after records")
        if store._records:
            store._next_id = max(r.id for r in store._records) + 1
        return store
