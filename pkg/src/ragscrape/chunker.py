"""Recursive character text splitting.

Splits text on an ordered delimiter list, recursing into oversize pieces
with the remaining lower-priority delimiters. Every split keeps the
delimiter as the suffix of the piece before it, so the output chunks
concatenate back to the input exactly and each chunk carries an exact
character span into the source.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import InvalidConfig

DEFAULT_DELIMITERS = ("\n\n", "\n", " ")
DEFAULT_MAX_CHUNK_SIZE = 1000


@dataclass(frozen=True)
class SplitConfig:
    """Ordered delimiters (largest first) and the chunk size limit in characters."""

    delimiters: tuple[str, ...]
    max_chunk_size: int

    def __post_init__(self):
        if not self.delimiters:
            raise InvalidConfig("delimiter list must not be empty")
        if any(d == "" for d in self.delimiters):
            raise InvalidConfig("delimiters must be non-empty strings")
        if len(set(self.delimiters)) != len(self.delimiters):
            raise InvalidConfig("delimiter list contains duplicates")
        if self.max_chunk_size <= 0:
            raise InvalidConfig("max_chunk_size must be positive")


@dataclass(frozen=True)
class Chunk:
    """One contiguous span of source text; `text == source[start:end]`."""

    source_url: str
    ordinal: int
    start: int
    end: int
    text: str


def default_split_config() -> SplitConfig:
    """Paragraph, then line, then word boundaries; 1000-character limit."""
    return SplitConfig(delimiters=DEFAULT_DELIMITERS, max_chunk_size=DEFAULT_MAX_CHUNK_SIZE)


def _split_keep_suffix(text: str, delim: str) -> list[str]:
    """Split at every occurrence of `delim`, keeping it on the preceding piece.

    Only the trailing piece can be empty; it is dropped.
    """
    pieces = []
    start = 0
    while True:
        i = text.find(delim, start)
        if i == -1:
            break
        pieces.append(text[start : i + len(delim)])
        start = i + len(delim)
    if start < len(text):
        pieces.append(text[start:])
    return pieces


def _split(text: str, delimiters: tuple[str, ...], limit: int, out: list[str]) -> None:
    for i, delim in enumerate(delimiters):
        if delim in text:
            rest = delimiters[i + 1 :]
            for piece in _split_keep_suffix(text, delim):
                if len(piece) <= limit:
                    out.append(piece)
                else:
                    _split(piece, rest, limit, out)
            return
    # No remaining delimiter occurs: emit intact as the largest possible chunk,
    # even when it exceeds the limit.
    out.append(text)


def split_recursive(text: str, config: SplitConfig, source_url: str = "") -> list[Chunk]:
    """Split `text` into ordered, lossless chunks under `config.max_chunk_size`.

    The first delimiter that occurs in the text decides the top-level
    boundaries; within-limit pieces are emitted as-is and oversize pieces
    recurse with the delimiters that follow it in the list. Pieces that no
    remaining delimiter can split are emitted even if oversize. Sizes count
    Unicode scalar values, and the retained delimiter suffix counts toward
    its piece.
    """
    if text == "":
        return []
    pieces: list[str] = []
    _split(text, tuple(config.delimiters), config.max_chunk_size, pieces)
    chunks = []
    offset = 0
    for ordinal, piece in enumerate(pieces):
        chunks.append(
            Chunk(
                source_url=source_url,
                ordinal=ordinal,
                start=offset,
                end=offset + len(piece),
                text=piece,
            )
        )
        offset += len(piece)
    return chunks


def chunk_to_json(chunk: Chunk) -> str:
    """Serialize one chunk to its JSON Lines form."""
    return json.dumps(
        {
            "source_url": chunk.source_url,
            "ordinal": chunk.ordinal,
            "start": chunk.start,
            "end": chunk.end,
            "text": chunk.text,
        },
        ensure_ascii=False,
    )


def chunk_from_json(line: str) -> Chunk:
    """Parse one JSON Lines record back into a Chunk."""
    obj = json.loads(line)
    return Chunk(
        source_url=obj["source_url"],
        ordinal=obj["ordinal"],
        start=obj["start"],
        end=obj["end"],
        text=obj["text"],
    )
